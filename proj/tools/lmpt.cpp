#include <iostream>

#include "lmpt/cli.hpp"
#include "lmpt/runtime.hpp"

int main(int argc, char** argv) {
  lmpt::tune_allocator();
  return lmpt::run_cli(argc, argv, std::cout, std::cerr);
}
