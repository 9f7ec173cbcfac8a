#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "lmpt/runtime.hpp"

int main(int argc, char** argv) {
  lmpt::tune_allocator();
  doctest::Context context(argc, argv);
  return context.run();
}
