#include <iostream>

#include "oodcal/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return oodcal::cli::run(args, std::cout, std::cerr);
}
