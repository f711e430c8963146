#include <gtest/gtest.h>

#include <set>

#include "bonenet/gradcheck.hpp"

using namespace bonenet;

TEST(GradCheckSuite, AllOperationsPass) {
  std::set<std::string> names;
  const auto results = run_gradcheck_suite(1234);
  for (const auto& r : results) {
    names.insert(r.name);
    EXPECT_TRUE(r.passed) << r.name << " max rel err " << r.max_rel_err;
    EXPECT_GE(r.cases, 10u) << r.name;
    EXPECT_LT(r.max_rel_err, kGradCheckTolerance) << r.name;
  }
  for (const char* required : {"add", "mul", "relu", "matmul", "conv2d", "maxpool2d", "batchnorm_train", "dropout",
                               "linear", "l1_loss", "l2_loss", "concat"})
    EXPECT_TRUE(names.count(required)) << required;
}

TEST(GradCheckSuite, OtherSeedsPass) {
  for (std::uint64_t seed : {1u, 99u})
    for (const auto& r : run_gradcheck_suite(seed)) EXPECT_TRUE(r.passed) << r.name << " seed " << seed;
}
