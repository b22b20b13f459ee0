#pragma once

#include "kpinr/core_data.hpp"

#include <cstdint>

namespace kpinr {

/// Heart-like cine phantom: a static torso ellipse and a bright ventricle that
/// translates and contracts periodically over the T frames.
struct PhantomSpec
{
  int64_t H = 64;
  int64_t W = 64;
  int64_t coils = 4;
  int64_t frames = 8;
  double motion_amplitude = 2.0; ///< ventricle centre displacement, pixels
  double contraction = 0.25;     ///< peak relative shrink of the ventricle radii
  double noise_std = 0.0;        ///< complex Gaussian noise added to k-space
  uint64_t seed = 0;

  void validate() const;
};

struct Phantom
{
  KSpaceVolume kspace;      ///< fully sampled, complex64 [H, W, C, T]
  CoilSensitivityMaps csm;  ///< complex64 [H, W, C], sum over coils of |csm|^2 = 1
  CineImageSeries image;    ///< complex64 [H, W, T], real and non-negative
};

/// k-space = fft2_centered(csm * image) (+ noise). Deterministic in spec.seed.
Phantom generate_phantom(PhantomSpec const &spec);

} // namespace kpinr
