#include "cmro/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"

namespace cmro {

void PreprocConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::invalid_argument, what); };
  if (thresholds.empty()) fail("at least one truncation threshold is required");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] <= 1.0))
      fail("truncation threshold " + std::to_string(thresholds[i]) + " outside (0, 1]");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
      fail("truncation thresholds must be strictly increasing");
  }
  if (canonical_size.rows == 0 || canonical_size.cols == 0 || train_size.rows == 0 ||
      train_size.cols == 0)
    fail("preprocessing sizes must be positive");
  if (eq_levels == 0) fail("histogram equalisation needs at least one bin");
  if (!(zscore_epsilon > 0.0)) fail("z-score epsilon must be positive");
  if (!(aug.crop_fraction > 0.0 && aug.crop_fraction <= 1.0))
    fail("crop fraction outside (0, 1]");
  if (!(aug.max_rotation_deg >= 0.0)) fail("rotation bound must be non-negative");
}

std::string PreprocConfig::to_json() const {
  nlohmann::json j;
  j["thresholds"] = thresholds;
  j["canonical_size"] = {canonical_size.rows, canonical_size.cols};
  j["train_size"] = {train_size.rows, train_size.cols};
  j["eq_levels"] = eq_levels;
  j["zscore_epsilon"] = zscore_epsilon;
  j["aug"] = {{"max_rotation_deg", aug.max_rotation_deg}, {"crop_fraction", aug.crop_fraction}};
  return j.dump();
}

PreprocConfig PreprocConfig::from_json(const std::string& text) {
  PreprocConfig cfg;
  try {
    const auto j = nlohmann::json::parse(text);
    cfg.thresholds = j.at("thresholds").get<std::vector<double>>();
    cfg.canonical_size = {j.at("canonical_size").at(0).get<std::size_t>(),
                          j.at("canonical_size").at(1).get<std::size_t>()};
    cfg.train_size = {j.at("train_size").at(0).get<std::size_t>(),
                      j.at("train_size").at(1).get<std::size_t>()};
    cfg.eq_levels = j.at("eq_levels").get<std::size_t>();
    cfg.zscore_epsilon = j.at("zscore_epsilon").get<double>();
    cfg.aug.max_rotation_deg = j.at("aug").at("max_rotation_deg").get<double>();
    cfg.aug.crop_fraction = j.at("aug").at("crop_fraction").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("preprocessing config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Slice truncate(const Slice& s, double fraction) {
  if (s.empty()) throw Error(Errc::invalid_argument, "truncate: empty slice");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw Error(Errc::invalid_argument,
                "truncate: fraction " + std::to_string(fraction) + " outside (0, 1]");
  const double ceiling = fraction * *std::max_element(s.data.begin(), s.data.end());
  Slice out = s;
  for (auto& v : out.data) v = std::min(v, ceiling);
  return out;
}

Slice hist_equalize(const Slice& s, std::size_t levels) {
  if (s.empty()) throw Error(Errc::invalid_argument, "hist_equalize: empty slice");
  if (levels == 0) throw Error(Errc::invalid_argument, "hist_equalize: zero bins");
  const auto [lo_it, hi_it] = std::minmax_element(s.data.begin(), s.data.end());
  const double lo = *lo_it, hi = *hi_it;
  Slice out(s.rows, s.cols, 0.0);
  if (!(hi > lo)) return out;

  const double scale = static_cast<double>(levels) / (hi - lo);
  std::vector<std::size_t> bin(s.data.size());
  std::vector<std::size_t> counts(levels, 0);
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    const auto b = static_cast<std::size_t>((s.data[i] - lo) * scale);
    bin[i] = std::min(b, levels - 1);
    ++counts[bin[i]];
  }
  std::vector<double> cdf(levels);
  std::size_t running = 0;
  const auto total = static_cast<double>(s.data.size());
  for (std::size_t b = 0; b < levels; ++b) {
    running += counts[b];
    cdf[b] = static_cast<double>(running) / total;
  }
  for (std::size_t i = 0; i < s.data.size(); ++i) out.data[i] = cdf[bin[i]];
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double w_lo, w_hi;
};

// Sampling taps for one axis. Entries past the midpoint are mirrored from
// the first half so that tap(out-1-i) is exactly the reflection of tap(i).
std::vector<Tap> make_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t i = 0; i < out; ++i) {
    const std::size_t j = out - 1 - i;
    if (j < i) {
      const Tap& m = taps[j];
      taps[i] = {in - 1 - m.hi, in - 1 - m.lo, m.w_hi, m.w_lo};
      continue;
    }
    double src = ((static_cast<double>(i) + 0.5) * static_cast<double>(in)) /
                     static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const double w = src - static_cast<double>(lo);
    if (w == 0.0 || lo + 1 >= in)
      taps[i] = {lo, lo, 1.0, 0.0};
    else
      taps[i] = {lo, lo + 1, 1.0 - w, w};
  }
  return taps;
}

double bilinear(const Slice& s, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(s.rows - 1));
  c = std::clamp(c, 0.0, static_cast<double>(s.cols - 1));
  const auto r0 = static_cast<std::size_t>(std::floor(r));
  const auto c0 = static_cast<std::size_t>(std::floor(c));
  const std::size_t r1 = std::min(r0 + 1, s.rows - 1), c1 = std::min(c0 + 1, s.cols - 1);
  const double fr = r - static_cast<double>(r0), fc = c - static_cast<double>(c0);
  const double top = s(r0, c0) * (1.0 - fc) + s(r0, c1) * fc;
  const double bottom = s(r1, c0) * (1.0 - fc) + s(r1, c1) * fc;
  if (fr == 0.0) return top;
  return top * (1.0 - fr) + bottom * fr;
}

}  // namespace

Slice resize(const Slice& s, Extent2 target) {
  if (target.rows == 0 || target.cols == 0)
    throw Error(Errc::invalid_argument, "resize: target extents must be positive");
  if (s.empty()) throw Error(Errc::invalid_argument, "resize: empty slice");
  const auto row_taps = make_taps(s.rows, target.rows);
  const auto col_taps = make_taps(s.cols, target.cols);
  Slice out(target.rows, target.cols);
  for (std::size_t i = 0; i < target.rows; ++i) {
    const Tap& ty = row_taps[i];
    for (std::size_t j = 0; j < target.cols; ++j) {
      const Tap& tx = col_taps[j];
      // Grouping (ll + hh) + (lh + hl) is invariant under swapping either
      // axis's taps and under exchanging the axes.
      const double ll = (ty.w_lo * tx.w_lo) * s(ty.lo, tx.lo);
      const double hh = (ty.w_hi * tx.w_hi) * s(ty.hi, tx.hi);
      const double lh = (ty.w_lo * tx.w_hi) * s(ty.lo, tx.hi);
      const double hl = (ty.w_hi * tx.w_lo) * s(ty.hi, tx.lo);
      out(i, j) = (ll + hh) + (lh + hl);
    }
  }
  return out;
}

TensorD zscore(const TensorD& t, double epsilon) {
  TensorD out(t.shape());
  if (t.empty()) return out;
  const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
  if (*lo == *hi) return out;
  const auto n = static_cast<double>(t.size());
  double sum = 0;
  for (double v : t.values()) sum += v;
  const double mean = sum / n;
  double sq = 0;
  for (double v : t.values()) sq += (v - mean) * (v - mean);
  const double denom = std::sqrt(sq / n) + epsilon;
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = (t[i] - mean) / denom;
  return out;
}

ModelInput assemble(const Slice& s, const PreprocConfig& cfg) {
  if (s.empty()) throw Error(Errc::invalid_argument, "assemble: empty slice");
  const Slice canonical = resize(s, cfg.canonical_size);
  const std::size_t C = cfg.thresholds.size(), H = cfg.train_size.rows, W = cfg.train_size.cols;
  TensorD stacked({C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    const Slice ch =
        resize(hist_equalize(truncate(canonical, cfg.thresholds[c]), cfg.eq_levels), cfg.train_size);
    std::copy(ch.data.begin(), ch.data.end(), stacked.data() + c * H * W);
  }
  return {zscore(stacked, cfg.zscore_epsilon)};
}

AugmentParams draw_augment(const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  p.angle_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  p.crop_row = rng.uniform();
  p.crop_col = rng.uniform();
  return p;
}

Slice augment(const Slice& s, const AugmentConfig& cfg, const AugmentParams& p) {
  if (s.empty()) return s;
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cr = (static_cast<double>(s.rows) - 1.0) / 2.0;
  const double cc = (static_cast<double>(s.cols) - 1.0) / 2.0;
  Slice rotated(s.rows, s.cols);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) {
      const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
      rotated(r, c) = bilinear(s, cs * dr - sn * dc + cr, sn * dr + cs * dc + cc);
    }

  auto side = [&](std::size_t n) {
    const auto k = static_cast<std::size_t>(std::lround(cfg.crop_fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(k, 1, n);
  };
  const std::size_t hr = side(s.rows), hc = side(s.cols);
  const auto r0 = static_cast<std::size_t>(std::lround(p.crop_row * static_cast<double>(s.rows - hr)));
  const auto c0 = static_cast<std::size_t>(std::lround(p.crop_col * static_cast<double>(s.cols - hc)));
  Slice window(hr, hc);
  for (std::size_t r = 0; r < hr; ++r)
    for (std::size_t c = 0; c < hc; ++c) window(r, c) = rotated(r0 + r, c0 + c);
  return resize(window, {s.rows, s.cols});
}

Slice augment(const Slice& s, const AugmentConfig& cfg, Rng& rng) {
  return augment(s, cfg, draw_augment(cfg, rng));
}

TensorD augment_input(const TensorD& input, const PreprocConfig& cfg, Rng& rng) {
  if (input.rank() != 3)
    throw Error(Errc::shape_mismatch, "augment_input expects [C,H,W], got " + shape_string(input.shape()));
  const auto p = draw_augment(cfg.aug, rng);
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  TensorD out(input.shape());
  for (std::size_t c = 0; c < C; ++c) {
    Slice ch(H, W, std::vector<double>(input.data() + c * H * W, input.data() + (c + 1) * H * W));
    const Slice a = augment(ch, cfg.aug, p);
    std::copy(a.data.begin(), a.data.end(), out.data() + c * H * W);
  }
  return zscore(out, cfg.zscore_epsilon);
}

}  // namespace cmro
