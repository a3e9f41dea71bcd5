#include <gtest/gtest.h>

#include "gradient_suite.hpp"

class Gradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(Gradients, MatchFiniteDifferences) {
  const auto& [name, run] = gradsuite::cases()[GetParam()];
  run([&](double err, double tol, int shape) { EXPECT_LE(err, tol) << name << " shape " << shape; });
}

INSTANTIATE_TEST_SUITE_P(Layers, Gradients, ::testing::Range<std::size_t>(0, gradsuite::cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) { return gradsuite::cases()[info.param].first; });
