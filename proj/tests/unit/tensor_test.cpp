// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"

namespace xstitch {
namespace {

using testing::naive_matmul;
using testing::random_tensor;

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const Tensor c = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(c, Tensor::matrix({{3, 4}, {5, 6}}));
}

TEST(Matmul, RowTimesColumn) {
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})), Tensor::matrix({{11}}));
}

TEST(Matmul, Random5x7x3MatchesTripleLoop) {
  Rng rng(1);
  const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  const Tensor c = matmul(a, b), ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
}

TEST(Matmul, RandomShapesUpTo16MatchTripleLoopRelative) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(16), k = 1 + rng.below(16), n = 1 + rng.below(16);
    const Tensor a = random_tensor({m, k}, rng, 3.0), b = random_tensor({k, n}, rng, 3.0);
    EXPECT_LE(testing::max_rel_diff(matmul(a, b), naive_matmul(a, b)), 1e-12) << m << "x" << k << "x" << n;
  }
}

TEST(Matmul, BatchedAppliesPerLeadingIndex) {
  Rng rng(3);
  const Tensor a = random_tensor({3, 4, 5}, rng), b = random_tensor({3, 5, 2}, rng);
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 4, 2}));
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor ai({4, 5}), bi({5, 2});
    std::copy_n(a.data() + i * 20, 20, ai.data());
    std::copy_n(b.data() + i * 10, 10, bi.data());
    const Tensor ref = naive_matmul(ai, bi);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(c[i * 8 + j], ref[j], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3]"), std::string::npos) << what;
    EXPECT_NE(what.find("[4x5]"), std::string::npos) << what;
  }
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  Rng rng(4);
  const Tensor a = random_tensor({4, 6}, rng), b = random_tensor({5, 6}, rng), c = random_tensor({4, 3}, rng);
  EXPECT_LE(max_abs_diff(matmul_nt(a, b), naive_matmul(a, transpose(b))), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_tn(a, c), naive_matmul(transpose(a), c)), 1e-12);
}

TEST(Tensor, RejectsZeroExtentsAndMismatchedData) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Softmax, SymmetricPairIsHalfHalf) {
  const Tensor y = softmax_rows(Tensor::matrix({{0, 0}}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
}

TEST(Softmax, LargeEqualLogitsDoNotOverflow) {
  const Tensor y = softmax_rows(Tensor::matrix({{1000, 1000, 1000}}));
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, HandComputedPair) {
  const Tensor y = softmax_rows(Tensor::matrix({{0.7071, 0}}));
  const double e = std::exp(0.7071);
  EXPECT_NEAR(y(0, 0), 0.6698, 1e-3);
  EXPECT_NEAR(y(0, 1), 0.3302, 1e-3);
  EXPECT_NEAR(y(0, 0), e / (e + 1.0), 1e-15);
}

TEST(SoftmaxProperty, RowsAreDistributionsEvenAtExtremeMagnitudes) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(12);
    const double scale = trial % 3 == 0 ? 1e4 : trial % 3 == 1 ? 1.0 : 100.0;
    Tensor x({m, n});
    for (double& v : x.values()) v = rng.uniform(-scale, scale);
    const Tensor y = softmax_rows(x);
    ASSERT_TRUE(all_finite(y));
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (double v : y.row(i)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(LayerNorm, ConstantVectorNormalisesToZero) {
  const Tensor y = layer_norm(Tensor::matrix({{1, 1, 1}}), Tensor({3}, 1.0), Tensor({3}, 0.0));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, TwoValuesBecomeMinusOneAndOne) {
  const Tensor y = layer_norm(Tensor::matrix({{1, 3}}), Tensor({2}, 1.0), Tensor({2}, 0.0), 1e-5);
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
  // mean 2, variance 1: exact value is -1/sqrt(1 + eps).
  EXPECT_NEAR(y[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
}

TEST(LayerNorm, ZeroGammaReturnsBetaBroadcast) {
  Rng rng(6);
  const Tensor beta = Tensor::vector({0.5, -1.0, 2.0});
  const Tensor y = layer_norm(random_tensor({4, 3}, rng), Tensor({3}, 0.0), beta);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y(i, j), beta[j]);
}

TEST(Gelu, MatchesErfDefinition) {
  for (double x : {-3.0, -1.0, -0.1, 0.0, 0.5, 2.0}) {
    EXPECT_NEAR(gelu(x), 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))), 1e-15);
    const double h = 1e-6;
    EXPECT_NEAR(gelu_derivative(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8);
  }
}

// ---- grad_check ------------------------------------------------------------

TEST(GradCheck, LinearFunctionMatchesOuterProduct) {
  Rng rng(7);
  ParamStore store;
  const ParamId w = store.add("w", random_tensor({3, 4}, rng));
  const Tensor x = random_tensor({2, 3}, rng);
  const LossFn loss = [&](ParamStore& s, bool grads) {
    const Tensor y = matmul(x, s.value(w));
    if (grads) accumulate_tn(s.grad(w), x, Tensor(y.shape(), 1.0));
    return sum(y);
  };
  const auto report = grad_check(loss, store);
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_TRUE(report.pass);
  EXPECT_LT(report.entries[0].max_rel_error, 1e-8);
  EXPECT_EQ(report.entries[0].coordinates, 12u);
}

TEST(GradCheck, CorruptedBackwardIsFlagged) {
  Rng rng(8);
  ParamStore store;
  const ParamId w = store.add("w", random_tensor({3, 4}, rng));
  const Tensor x = random_tensor({2, 3}, rng);
  const LossFn loss = [&](ParamStore& s, bool grads) {
    const Tensor y = matmul(x, s.value(w));
    if (grads) {
      Tensor g({3, 4});
      accumulate_tn(g, x, Tensor(y.shape(), 1.0));
      scale_inplace(g, 2.0);
      add_inplace(s.grad(w), g);
    }
    return sum(y);
  };
  for (bool floor : {true, false}) {
    GradCheckOptions opt;
    opt.roundoff_floor = floor;
    const auto report = grad_check(loss, store, opt);
    EXPECT_FALSE(report.pass);
    EXPECT_NEAR(report.entries[0].max_rel_error, 0.5, 1e-6);
  }
}

TEST(GradCheck, SamplesAtLeastSixteenCoordinatesPerTensor) {
  Rng rng(9);
  ParamStore store;
  const ParamId w = store.add("w", random_tensor({10, 10}, rng));
  store.add("frozen", random_tensor({2}, rng), false);
  const LossFn loss = [&](ParamStore& s, bool grads) {
    double l = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      l += std::sin(s.value(w)[i]);
      if (grads) s.grad(w)[i] += std::cos(s.value(w)[i]);
    }
    return l;
  };
  const auto report = grad_check(loss, store);
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_EQ(report.entries[0].coordinates, 16u);
  EXPECT_TRUE(report.pass);
}

TEST(GradCheck, NonFiniteLossNamesPerturbedParameter) {
  ParamStore store;
  store.add("ok", Tensor({1}, 2.0));
  const ParamId bad = store.add("poles.w", Tensor({1}, 1e-6));
  const LossFn loss = [&](ParamStore& s, bool) {
    const double v = s.value(bad)[0];
    return v < 0 ? std::log(v) : v;
  };
  try {
    grad_check(loss, store);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("poles.w"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, RestoresValuesBitwise) {
  Rng rng(10);
  ParamStore store;
  const ParamId w = store.add("w", random_tensor({5, 5}, rng));
  const Tensor before = store.value(w);
  const LossFn loss = [&](ParamStore& s, bool grads) {
    double l = 0.0;
    for (std::size_t i = 0; i < 25; ++i) {
      l += s.value(w)[i] * s.value(w)[i];
      if (grads) s.grad(w)[i] += 2 * s.value(w)[i];
    }
    return l;
  };
  grad_check(loss, store);
  EXPECT_EQ(store.value(w), before);
}

TEST(Determinism, RepeatedOpsAreBitwiseIdentical) {
  Rng rng(11);
  const Tensor a = random_tensor({9, 13}, rng), b = random_tensor({13, 7}, rng);
  EXPECT_EQ(matmul(a, b), matmul(a, b));
  EXPECT_EQ(softmax_rows(a), softmax_rows(a));
  const Tensor g = random_tensor({13}, rng), be = random_tensor({13}, rng);
  EXPECT_EQ(layer_norm(a, g, be), layer_norm(a, g, be));
}

TEST(Rng, SameSeedSameStreamAndKnownFirstValue) {
  Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> xs, ys;
  for (int i = 0; i < 100; ++i) {
    xs.push_back(a.next());
    ys.push_back(b.next());
  }
  EXPECT_EQ(xs, ys);
  EXPECT_NE(xs[0], c.next());
}

// Reference xoshiro256** seeded by splitmix64, written out independently.
TEST(Rng, MatchesReferenceXoshiro) {
  std::uint64_t sm = 12345;
  auto splitmix = [&] {
    std::uint64_t z = (sm += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s[4] = {splitmix(), splitmix(), splitmix(), splitmix()};
  auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  Rng rng(12345);
  for (int i = 0; i < 50; ++i) {
    const std::uint64_t expect = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    ASSERT_EQ(rng.next(), expect);
  }
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(13);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    ++seen[v];
  }
  for (int c : seen) EXPECT_GT(c, 800);
}

TEST(ParamStore, InsertionOrderAndUniqueNames) {
  ParamStore s;
  s.add("b", Tensor({1}));
  s.add("a", Tensor({2, 2}));
  EXPECT_THROW(s.add("a", Tensor({1})), ConfigError);
  std::vector<std::string> names;
  for (const auto& p : s) {
    names.push_back(p.name);
    EXPECT_EQ(p.grad.shape(), p.value.shape());
  }
  EXPECT_EQ(names, (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(s.scalar_count(), 5u);
  EXPECT_THROW(s.id("missing"), ConfigError);
}

}  // namespace
}  // namespace xstitch
