#include "cmro/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmro/error.hpp"
#include "cmro/random.hpp"

namespace cmro {

std::string_view to_string(PhantomStyle style) {
  return style == PhantomStyle::bright_blood ? "bright-blood" : "dark-blood";
}

PhantomStyle phantom_style_from_string(std::string_view name) {
  if (name == "bright-blood" || name == "bssfp") return PhantomStyle::bright_blood;
  if (name == "dark-blood" || name == "lge") return PhantomStyle::dark_blood;
  throw Error(Errc::invalid_argument, "unknown phantom style '" + std::string(name) + "'");
}

namespace {

struct Palette {
  double body, fat, liver, spine, myocardium, lv_blood, rv_blood, scar;
};

constexpr Palette kBright{0.22, 0.70, 0.42, 0.55, 0.30, 1.00, 0.92, 0.30};
constexpr Palette kDark{0.16, 0.85, 0.30, 0.45, 0.08, 0.38, 0.34, 1.00};

// Per-volume anatomy, in normalised (row, col) coordinates on [0, 1]^2.
struct Anatomy {
  double lv_r, lv_c, lv_outer, lv_inner;
  double rv_r, rv_c, rv_rr, rv_rc;
  double fat_r, fat_width;
  double spine_r, spine_c, spine_rad;
  double liver_r, liver_c;
  double grad_r, grad_c;  // background gradient, unequal and non-zero
  double scar_angle;
  double scale;
  double noise;
  Palette palette;
};

Anatomy draw_anatomy(Rng& rng, PhantomStyle style) {
  auto jitter = [&](double v, double amount) { return v + rng.uniform(-amount, amount); };
  Anatomy a{};
  a.lv_r = jitter(0.44, 0.04);
  a.lv_c = jitter(0.60, 0.04);
  a.lv_outer = jitter(0.17, 0.02);
  a.lv_inner = a.lv_outer * jitter(0.64, 0.05);
  a.rv_r = a.lv_r + jitter(0.02, 0.02);
  a.rv_c = a.lv_c - a.lv_outer - jitter(0.09, 0.02);
  a.rv_rr = jitter(0.15, 0.02);
  a.rv_rc = jitter(0.09, 0.015);
  a.fat_r = jitter(0.14, 0.02);
  a.fat_width = jitter(0.035, 0.008);
  a.spine_r = jitter(0.84, 0.02);
  a.spine_c = jitter(0.56, 0.03);
  a.spine_rad = jitter(0.055, 0.01);
  a.liver_r = jitter(0.80, 0.03);
  a.liver_c = jitter(0.26, 0.03);
  a.grad_r = jitter(0.35, 0.05);
  a.grad_c = jitter(0.12, 0.04);
  a.scar_angle = rng.uniform(0.0, 6.283185307179586);
  a.scale = rng.uniform(400.0, 1200.0);
  a.noise = rng.uniform(0.015, 0.035);
  const Palette& base = style == PhantomStyle::bright_blood ? kBright : kDark;
  auto vary = [&](double v) { return v * rng.uniform(0.9, 1.1); };
  a.palette = {vary(base.body),       vary(base.fat),      vary(base.liver),
               vary(base.spine),      vary(base.myocardium), vary(base.lv_blood),
               vary(base.rv_blood),   vary(base.scar)};
  return a;
}

double ellipse(double r, double c, double cr, double cc, double rr, double rc) {
  const double dr = (r - cr) / rr, dc = (c - cc) / rc;
  return dr * dr + dc * dc;
}

Slice render_slice(const Anatomy& a, std::size_t rows, std::size_t cols, double t, Rng& rng,
                   PhantomStyle style) {
  Slice s(rows, cols);
  const Palette& p = a.palette;
  const double shrink = 1.0 - 0.35 * t;  // base to apex
  const double lv_o = a.lv_outer * shrink, lv_i = a.lv_inner * shrink;
  const double rv_rr = a.rv_rr * (1.0 - 0.5 * t), rv_rc = a.rv_rc * (1.0 - 0.5 * t);
  for (std::size_t i = 0; i < rows; ++i) {
    const double r = (static_cast<double>(i) + 0.5) / static_cast<double>(rows);
    for (std::size_t j = 0; j < cols; ++j) {
      const double c = (static_cast<double>(j) + 0.5) / static_cast<double>(cols);
      double v = 0.02;
      const double body = ellipse(r, c, 0.52, 0.50, 0.44, 0.47);
      if (body <= 1.0) {
        v = p.body * (0.75 + a.grad_r * r + a.grad_c * c);
        // Anterior fat band following the top of the body outline.
        const double top = 0.52 - 0.44 * std::sqrt(std::max(0.0, 1.0 - std::pow((c - 0.5) / 0.47, 2)));
        if (r - top < a.fat_r - 0.08 + a.fat_width && r - top > a.fat_r - 0.08 - a.fat_width && c > 0.2)
          v = p.fat;
        if (ellipse(r, c, a.liver_r, a.liver_c, 0.14, 0.17) <= 1.0) v = p.liver;
        if (ellipse(r, c, a.spine_r, a.spine_c, a.spine_rad, a.spine_rad) <= 1.0) v = p.spine;
        if (ellipse(r, c, a.spine_r - a.spine_rad * 0.3, a.spine_c, a.spine_rad * 0.45,
                    a.spine_rad * 0.45) <= 1.0)
          v = p.body * 0.3;
        if (ellipse(r, c, a.rv_r, a.rv_c, rv_rr, rv_rc) <= 1.0) v = p.rv_blood;
        const double d = std::sqrt(ellipse(r, c, a.lv_r, a.lv_c, 1.0, 1.0));
        if (d <= lv_o) {
          v = p.myocardium;
          if (style == PhantomStyle::dark_blood) {
            const double ang = std::atan2(r - a.lv_r, c - a.lv_c);
            const double delta = std::remainder(ang - a.scar_angle, 6.283185307179586);
            if (std::abs(delta) < 0.6) v = p.scar;
          }
        }
        if (d <= lv_i) v = p.lv_blood;
      }
      v = std::max(0.0, v + a.noise * rng.normal());
      s(i, j) = static_cast<double>(static_cast<float>(v * a.scale));
    }
  }
  return s;
}

}  // namespace

bool slice_is_asymmetric(const Slice& s, double min_fraction, double min_contrast) {
  if (s.empty()) return false;
  const auto [lo, hi] = std::minmax_element(s.data.begin(), s.data.end());
  const double threshold = min_contrast * (*hi - *lo);
  for (auto o : Orientation::all()) {
    if (o.code() == 0) continue;
    const Slice t = apply(o, s);
    if (t.rows != s.rows) continue;
    std::size_t differing = 0;
    for (std::size_t i = 0; i < s.data.size(); ++i)
      if (std::abs(t.data[i] - s.data[i]) > threshold) ++differing;
    if (static_cast<double>(differing) < min_fraction * static_cast<double>(s.data.size()))
      return false;
  }
  return true;
}

std::vector<Volume> generate_phantoms(std::size_t count, PhantomDims dims, std::uint64_t seed,
                                      PhantomStyle style) {
  if (count == 0) throw Error(Errc::invalid_argument, "phantom count must be at least 1");
  if (dims.rows < 8 || dims.cols < 8 || dims.depth == 0)
    throw Error(Errc::invalid_argument, "phantom dims must be at least 8x8x1");
  std::vector<Volume> out;
  out.reserve(count);
  Rng master(seed);
  for (std::size_t n = 0; n < count; ++n) {
    Rng rng = master.split();
    Volume v(dims.rows, dims.cols, dims.depth);
    for (int attempt = 0;; ++attempt) {
      const Anatomy a = draw_anatomy(rng, style);
      bool ok = true;
      for (std::size_t z = 0; z < dims.depth && ok; ++z) {
        const double t = dims.depth > 1 ? static_cast<double>(z) / static_cast<double>(dims.depth - 1) : 0.0;
        const Slice s = render_slice(a, dims.rows, dims.cols, t, rng, style);
        ok = slice_is_asymmetric(s);
        if (ok) v.set_slice(z, s);
      }
      if (ok) break;
      if (attempt >= 16)
        throw Error(Errc::invalid_argument, "could not generate an asymmetric phantom at " +
                                                std::to_string(dims.rows) + "x" + std::to_string(dims.cols));
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace cmro
