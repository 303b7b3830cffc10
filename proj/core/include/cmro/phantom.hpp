#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "cmro/orientation.hpp"

namespace cmro {

/// Appearance of synthetic cardiac phantoms. `bright_blood` mimics a cine
/// acquisition (bright blood pool, grey myocardium); `dark_blood` mimics a
/// late-enhancement contrast (suppressed blood and myocardium, bright scar
/// and fat) and serves as the shifted-appearance corpus for transfer.
enum class PhantomStyle { bright_blood, dark_blood };

std::string_view to_string(PhantomStyle style);
PhantomStyle phantom_style_from_string(std::string_view name);

struct PhantomDims {
  std::size_t rows = 96;
  std::size_t cols = 96;
  std::size_t depth = 6;
};

/// Short-axis-like phantoms: body outline with an intensity gradient, left
/// ventricle (ring with blood pool) placed off-centre, right ventricle to one
/// side, anterior fat band, liver and spine. Every slice is checked with
/// slice_is_asymmetric and regenerated with fresh jitter if it fails.
/// Voxel values are exactly representable as float32.
std::vector<Volume> generate_phantoms(std::size_t count, PhantomDims dims, std::uint64_t seed,
                                      PhantomStyle style = PhantomStyle::bright_blood);

/// True when, for every non-identity orientation k, at least `min_fraction` of
/// the pixels of apply(k, s) differ from s by more than `min_contrast` of the
/// slice's dynamic range. Transposing classes on non-square slices change the
/// extents and count as different.
bool slice_is_asymmetric(const Slice& s, double min_fraction = 0.05, double min_contrast = 0.10);

}  // namespace cmro
