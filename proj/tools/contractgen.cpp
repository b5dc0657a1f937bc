#include <iostream>

#include "contractgen/harness.hpp"

int main(int argc, char** argv) {
  return contractgen::run_cli(argc, argv, std::cout, std::cerr);
}
