#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "aidflow/common.hpp"

int main(int argc, char** argv) {
  aidflow::set_warnings_enabled(false);
  doctest::Context context(argc, argv);
  return context.run();
}
