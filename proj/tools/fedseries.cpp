#include "fedseries/cli/commands.hpp"
#include "fedseries/numerics/allocator.hpp"

#include <iostream>

int main(int argc, char** argv) {
  fedseries::retain_freed_memory();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return fedseries::cli::run_cli(args, std::cout, std::cerr);
}
