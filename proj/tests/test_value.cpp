#include <gtest/gtest.h>
#include "mfc/runner.hpp"

TEST(Stub_test_value, Placeholder) { SUCCEED(); }
