#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace kpinr {

/// Thrown when a NaN/Inf shows up where the pipeline requires finite values.
struct NumericalError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

using Meta = std::map<std::string, std::string>;

/// Multi-coil cine k-space, complex64 [H, W, C, T].
/// H is readout (height), W is phase-encode (width).
struct KSpaceVolume
{
  torch::Tensor data;
  double norm_scale = 1.0;
  Meta meta;

  int64_t H() const { return data.size(0); }
  int64_t W() const { return data.size(1); }
  int64_t C() const { return data.size(2); }
  int64_t T() const { return data.size(3); }

  /// Checks rank, dims >= 1, finiteness and norm_scale > 0.
  void validate() const;
  /// Values in ingest units (data * norm_scale).
  torch::Tensor denormalized() const;
};

enum class MaskPattern
{
  UniformCartesian,
  GaussianCartesian
};

std::string to_string(MaskPattern p);
MaskPattern mask_pattern_from_string(std::string const &s);

/// Binary Cartesian mask, bool [H, W, T]; constant along H.
struct SamplingMask
{
  torch::Tensor mask;
  int64_t acs_lines = 0;
  MaskPattern pattern = MaskPattern::UniformCartesian;
  double nominal_R = 1.0;

  int64_t H() const { return mask.size(0); }
  int64_t W() const { return mask.size(1); }
  int64_t T() const { return mask.size(2); }

  /// Half-open phase-encode range [begin, end) of the ACS block.
  std::pair<int64_t, int64_t> acs_range() const;
  void validate() const;
};

/// Sampled k-space locations. grid is int64 [N,3] (t, x, y) with x over H and
/// y over W; norm is float32 [N,3] in [-1,1] with the same column order.
struct CoordinateSet
{
  torch::Tensor grid;
  torch::Tensor norm;
  int64_t count() const { return grid.size(0); }
};

enum class CsmSource
{
  GroundTruth,
  AcsEstimated
};

std::string to_string(CsmSource s);
CsmSource csm_source_from_string(std::string const &s);

/// Complex64 [H, W, C] per-coil sensitivity maps.
struct CoilSensitivityMaps
{
  torch::Tensor maps;
  CsmSource source = CsmSource::GroundTruth;
};

/// Coil-combined complex image series [H, W, T].
struct CineImageSeries
{
  torch::Tensor data;
  torch::Tensor magnitude() const { return data.abs(); }
};

/// Throws NumericalError naming `what` if `t` has a NaN/Inf entry.
void require_finite(torch::Tensor const &t, std::string const &what);

/// Orthonormal 2-D DFT over dims (0, 1) with the DC term at index (H/2, W/2).
torch::Tensor fft2_centered(torch::Tensor const &img);
torch::Tensor ifft2_centered(torch::Tensor const &ksp);

/// out[h,w,t] = sum_c conj(csm[h,w,c]) * coil_imgs[h,w,c,t]
CineImageSeries coil_combine(torch::Tensor const &coil_imgs, CoilSensitivityMaps const &csm);

/// Low-resolution ACS estimate normalized by root-sum-of-squares.
CoilSensitivityMaps estimate_csm_from_acs(KSpaceVolume const &ksp, SamplingMask const &mask);

/// Keeps acquired entries, zeros the rest. Selection (not multiplication), so
/// whatever sits at unacquired locations never reaches the output.
KSpaceVolume zero_fill(KSpaceVolume const &ksp_full, SamplingMask const &mask);

/// Scales to unit max magnitude; norm_scale accumulates the divisor.
KSpaceVolume normalize_kspace(KSpaceVolume const &ksp);

/// Image-domain reconstruction from k-space: IFFT then conjugate coil combination.
CineImageSeries kspace_to_image(torch::Tensor const &ksp, CoilSensitivityMaps const &csm);

} // namespace kpinr
