#include <gtest/gtest.h>

#include <cmath>

#include "cmro/error.hpp"
#include "cmro/preprocess.hpp"
#include "cmro/random.hpp"

using namespace cmro;

namespace {

Slice random_slice(std::size_t rows, std::size_t cols, Rng& rng) {
  Slice s(rows, cols);
  for (auto& v : s.data) v = rng.uniform(0.0, 1000.0);
  return s;
}

Slice channel(const TensorD& t, std::size_t c) {
  const std::size_t H = t.dim(1), W = t.dim(2);
  return Slice(H, W, std::vector<double>(t.data() + c * H * W, t.data() + (c + 1) * H * W));
}

}  // namespace

TEST(Truncate, ClipsAtFractionOfMaximum) {
  const Slice s(2, 2, {0, 50, 80, 100});
  EXPECT_EQ(truncate(s, 0.6), Slice(2, 2, {0, 50, 60, 60}));
  EXPECT_EQ(truncate(s, 1.0), s);
  EXPECT_THROW(truncate(s, 0.0), Error);
  EXPECT_THROW(truncate(s, 1.5), Error);
}

TEST(HistEqualize, HandComputedCdf) {
  EXPECT_EQ(hist_equalize(Slice(2, 2, {0, 1, 2, 3}), 4), Slice(2, 2, {0.25, 0.5, 0.75, 1.0}));
  EXPECT_EQ(hist_equalize(Slice(2, 2, {0, 0, 10, 0}), 256), Slice(2, 2, {0.75, 0.75, 1.0, 0.75}));
  EXPECT_EQ(hist_equalize(Slice(2, 3, std::vector<double>(6, 7.0))), Slice(2, 3, std::vector<double>(6, 0.0)));
}

TEST(HistEqualize, MonotoneAndEndsAtOne) {
  Rng rng(1);
  const Slice s = random_slice(20, 30, rng);
  const Slice e = hist_equalize(s);
  double mx = 0.0;
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    mx = std::max(mx, e.data[i]);
    for (std::size_t j = 0; j < s.data.size(); j += 37)
      if (s.data[i] < s.data[j]) EXPECT_LE(e.data[i], e.data[j]);
  }
  EXPECT_EQ(mx, 1.0);
}

TEST(Resize, IdentityAndHalving) {
  Rng rng(2);
  const Slice s = random_slice(6, 8, rng);
  EXPECT_EQ(resize(s, {6, 8}), s);
  const Slice h = resize(s, {3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double avg = (s(2 * i, 2 * j) + s(2 * i, 2 * j + 1) + s(2 * i + 1, 2 * j) + s(2 * i + 1, 2 * j + 1)) / 4;
      EXPECT_NEAR(h(i, j), avg, 1e-9);
    }
}

TEST(Resize, ConstantStaysConstant) {
  const Slice s(5, 7, std::vector<double>(35, 3.5));
  for (const auto& v : resize(s, {13, 4}).data) EXPECT_DOUBLE_EQ(v, 3.5);
}

TEST(Resize, CommutesWithFlipsAndTranspose) {
  Rng rng(3);
  const Slice s = random_slice(37, 37, rng);
  for (auto o : Orientation::all())
    EXPECT_EQ(resize(apply(o, s), {64, 64}), apply(o, resize(s, {64, 64}))) << o.label();
  const Slice r = random_slice(30, 50, rng);
  for (int k : {1, 2, 3})
    EXPECT_EQ(resize(apply(Orientation::from_code(k), r), {20, 24}),
              apply(Orientation::from_code(k), resize(r, {20, 24})));
}

TEST(Zscore, JointStatisticsAndConstantInput) {
  const TensorD t({2, 1, 2}, {1, 2, 3, 4});
  const auto z = zscore(t, 0.0);
  const double sd = std::sqrt(1.25);
  EXPECT_NEAR(z[0], -1.5 / sd, 1e-12);
  EXPECT_NEAR(z[3], 1.5 / sd, 1e-12);
  const TensorD c({1, 2, 2}, 4.0);
  const auto zc = zscore(c, 1e-8);
  for (double v : zc.values()) EXPECT_EQ(v, 0.0);
}

TEST(Assemble, ShapeAndNormalisation) {
  Rng rng(4);
  PreprocConfig cfg;
  const auto in = assemble(random_slice(50, 70, rng), cfg).tensor;
  EXPECT_EQ(in.shape(), (Shape{3, 64, 64}));
  double sum = 0.0, sq = 0.0;
  for (double v : in.values()) sum += v;
  const double mean = sum / static_cast<double>(in.size());
  for (double v : in.values()) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 1e-9);
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(in.size())), 1.0, 1e-6);
}

TEST(Assemble, ConstantSliceGivesZeros) {
  const Slice s(10, 10, std::vector<double>(100, 5.0));
  const auto in = assemble(s, PreprocConfig{}).tensor;
  for (double v : in.values()) EXPECT_EQ(v, 0.0);
}

TEST(Assemble, EquivariantUnderAllTransforms) {
  Rng rng(5);
  PreprocConfig cfg;
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = 40 + rng.below(60);
    const Slice s = random_slice(n, n, rng);
    const auto base = assemble(s, cfg).tensor;
    for (auto o : Orientation::all()) {
      const auto moved = assemble(apply(o, s), cfg).tensor;
      for (std::size_t c = 0; c < 3; ++c) {
        const Slice want = apply(o, channel(base, c));
        const Slice got = channel(moved, c);
        for (std::size_t i = 0; i < want.data.size(); ++i) ASSERT_NEAR(got.data[i], want.data[i], 1e-6);
      }
    }
  }
}

TEST(Augment, NeutralParametersAreIdentity) {
  Rng rng(6);
  const Slice s = random_slice(16, 16, rng);
  AugmentConfig cfg{0.0, 1.0};
  const Slice a = augment(s, cfg, AugmentParams{0.0, 0.3, 0.7});
  for (std::size_t i = 0; i < s.data.size(); ++i) EXPECT_NEAR(a.data[i], s.data[i], 1e-9);
}

TEST(Augment, DeterministicPerSeedAndBounded) {
  Rng a(7), b(7);
  const AugmentConfig cfg;
  for (int i = 0; i < 100; ++i) {
    const auto p = draw_augment(cfg, a);
    const auto q = draw_augment(cfg, b);
    EXPECT_EQ(p.angle_deg, q.angle_deg);
    EXPECT_LE(std::abs(p.angle_deg), 10.0);
    EXPECT_GE(p.crop_row, 0.0);
    EXPECT_LT(p.crop_col, 1.0);
  }
  Rng rng(8);
  TensorD t({3, 16, 16});
  for (auto& v : t.values()) v = rng.uniform(-1, 1);
  Rng r1(9), r2(9);
  EXPECT_EQ(augment_input(t, PreprocConfig{}, r1), augment_input(t, PreprocConfig{}, r2));
}

TEST(PreprocConfig, JsonRoundTripAndValidation) {
  PreprocConfig cfg;
  cfg.train_size = {32, 48};
  cfg.thresholds = {0.5, 1.0};
  EXPECT_EQ(PreprocConfig::from_json(cfg.to_json()), cfg);
  EXPECT_EQ(cfg.to_json(), PreprocConfig::from_json(cfg.to_json()).to_json());
  EXPECT_THROW(PreprocConfig::from_json("{"), Error);
  PreprocConfig bad;
  bad.thresholds = {0.8, 0.6};
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.aug.crop_fraction = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}
