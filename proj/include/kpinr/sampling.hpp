#pragma once

#include "kpinr/core_data.hpp"

#include <cstdint>

namespace kpinr {

struct MaskSpec
{
  MaskPattern pattern = MaskPattern::UniformCartesian;
  double R = 4.0;
  int64_t acs_lines = 16;
  uint64_t seed = 0;
  bool interleave = true;
};

/// Lines w with w ≡ (t mod R) (mod R) in frame t (offset 0 for every frame
/// without interleave), plus the ACS block. R must be an integer.
SamplingMask make_uniform_mask(MaskSpec const &spec, int64_t H, int64_t W, int64_t T);

/// Per-frame weighted draw without replacement, weight exp(-(w - W/2)^2 / (2 (W/6)^2)),
/// until ceil(W/R) distinct lines are chosen. ACS lines are chosen first and count
/// toward that budget. Without interleave every frame reuses the frame-0 draw.
SamplingMask make_gaussian_mask(MaskSpec const &spec, int64_t H, int64_t W, int64_t T);

/// Dispatches on spec.pattern.
SamplingMask make_mask(MaskSpec const &spec, int64_t H, int64_t W, int64_t T);

/// One (t, x, y) triple per sampled location, lexicographic in (t, x, y).
CoordinateSet mask_to_coordinates(SamplingMask const &mask);

/// Every grid location, same ordering.
CoordinateSet full_grid_coordinates(int64_t H, int64_t W, int64_t T);

/// Index i of an axis with n points mapped to [-1, 1]; a singleton axis maps to 0.
double normalize_index(int64_t i, int64_t n);

/// Rebuilds a bool [H, W, T] mask from grid coordinates.
torch::Tensor coordinates_to_mask(CoordinateSet const &coords, int64_t H, int64_t W, int64_t T);

/// H*W*T / count(ones) over the full 3-D mask.
double effective_acceleration(SamplingMask const &mask);

} // namespace kpinr
