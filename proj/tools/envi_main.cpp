#include <iostream>
#include <string>
#include <vector>

#include "envi/cli/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return envi::cli::run(args, std::cout, std::cerr);
}
