#pragma once

// Named parameter storage shared by training, checkpoints and the tape.
//
//   kernel.log_variance     1×dx
//   kernel.log_lengthscale  dx×dx   row d: lengthscales of output d
//   noise.log_q             1×dx
//   noise.log_r             1×dy
//   inducing.z              M×dx
//   inducing.mean           M×dx
//   inducing.chol_raw.<d>   M×M     lower factor, log diagonal
//   x0.mean                 dx×1
//   x0.chol_raw             dx×dx

#include <set>
#include <string>

#include "envi/ad/grad_check.hpp"
#include "envi/enkf/enkf.hpp"
#include "envi/gp/gp.hpp"

namespace envi::models {

using ad::Index;
using ad::Matrix;
using ad::ParamMap;

namespace names {
inline const std::string kLogVariance = "kernel.log_variance";
inline const std::string kLogLengthscale = "kernel.log_lengthscale";
inline const std::string kLogQ = "noise.log_q";
inline const std::string kLogR = "noise.log_r";
inline const std::string kZ = "inducing.z";
inline const std::string kInducingMean = "inducing.mean";
inline const std::string kX0Mean = "x0.mean";
inline const std::string kX0Chol = "x0.chol_raw";
inline std::string inducing_chol(Index d) { return "inducing.chol_raw." + std::to_string(d); }
}  // namespace names

// Structured view of a ParamMap on one backend.
template <class T>
struct ModelViewT {
  gp::KernelParamsT<T> kernel;
  T log_q;
  enkf::EmissionModelT<T> emission;
  gp::InducingSetT<T> inducing;
  gp::InitialStateT<T> x0;
};

using ModelView = ModelViewT<Matrix>;

template <class T, class Get>
ModelViewT<T> assemble_view(Index state_dim, const Matrix& emission, Get&& get) {
  ModelViewT<T> v;
  v.kernel.log_variance = get(names::kLogVariance);
  v.kernel.log_lengthscale = get(names::kLogLengthscale);
  v.log_q = get(names::kLogQ);
  v.emission.c = emission;
  v.emission.log_r = get(names::kLogR);
  v.inducing.z = get(names::kZ);
  v.inducing.mean = get(names::kInducingMean);
  for (Index d = 0; d < state_dim; ++d) v.inducing.chol_raw.push_back(get(names::inducing_chol(d)));
  v.x0.mean = get(names::kX0Mean);
  v.x0.chol_raw = get(names::kX0Chol);
  return v;
}

ModelView plain_view(const ParamMap& params, const Matrix& emission);

// Registers trainable parameters as named leaves and frozen ones as
// constants on `tape`.
ModelViewT<ad::Var> record_view(ad::Tape& tape, const ParamMap& params,
                                const std::set<std::string>& frozen, const Matrix& emission);

// Same, from leaves that already exist (grad_check programs).
ModelViewT<ad::Var> leaf_view(const ad::LeafMap& leaves, const Matrix& emission);

// Checks that every expected parameter exists with the right shape.
void validate_params(const ParamMap& params, Index state_dim, Index obs_dim, Index inducing);

}  // namespace envi::models
