#include <gtest/gtest.h>

#include "icnet/runtime.hpp"

int main(int argc, char** argv) {
  icnet::tune_allocator();
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
