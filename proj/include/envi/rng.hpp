#pragma once

// Counter-based random numbers (Philox4x32-10). A draw is a pure function of
// (seed, stream, counter), so any block of noise can be regenerated
// independently of evaluation order or threading.

#include <array>
#include <cstdint>

#include <Eigen/Dense>

namespace envi {

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Uniform in (0, 1) for position `index` of `stream`.
  double uniform(std::uint64_t stream, std::uint64_t index) const;

  // Standard normal for position `index` of `stream` (Box-Muller).
  double normal(std::uint64_t stream, std::uint64_t index) const;

  // rows×cols standard normals filled column-major from `offset`.
  Eigen::MatrixXd normal_matrix(std::uint64_t stream, Eigen::Index rows, Eigen::Index cols,
                                std::uint64_t offset = 0) const;

  Eigen::MatrixXd uniform_matrix(std::uint64_t stream, Eigen::Index rows, Eigen::Index cols,
                                 std::uint64_t offset = 0) const;

 private:
  std::uint64_t seed_;
};

// Streams reserved per purpose so noise blocks never overlap.
namespace streams {
inline constexpr std::uint64_t kSimulation = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kTraining = 1ull << 32;   // + iteration index
inline constexpr std::uint64_t kOnline = 2ull << 32;     // + time index
inline constexpr std::uint64_t kForecast = 3ull << 32;
inline constexpr std::uint64_t kFilter = 4ull << 32;
}  // namespace streams

}  // namespace envi
