#pragma once

#include "kpinr/core_data.hpp"
#include "kpinr/training.hpp"

#include <map>
#include <vector>

namespace kpinr {

/// P-INR baseline: the same trainer with the K-INR branch, U-Net, exchange and
/// fusion switched off and only the positional data term active.
ReconstructionResult pinr_reconstruct(TrainerConfig const &kpinr_cfg, KSpaceVolume const &measured,
                                      SamplingMask const &mask, CoilSensitivityMaps const &csm,
                                      RunObserver *observer = nullptr);

// ---------------------------------------------------------------------------
// k-t GRAPPA

struct KtGrappaSpec
{
  std::vector<int64_t> frame_offsets{-1, 0, 1}; ///< source frames relative to the target
  int64_t lines_per_side = 1;                   ///< nearest acquired lines on each side, per source frame
  std::vector<int64_t> readout_offsets{-1, 0, 1};
  double rho = 1e-4;                            ///< Tikhonov weight relative to trace(A^H A)/n
  bool circular_time = true;                    ///< cine frames wrap around
};

/// Relative source position (frame, phase-encode line); readout offsets are added per spec.
struct SourceOffset
{
  int64_t dt = 0;
  int64_t dy = 0;
  auto operator<=>(SourceOffset const &) const = default;
};
using KernelGeometry = std::vector<SourceOffset>;

struct KtGrappaKernel
{
  KernelGeometry geometry;
  torch::Tensor weights; ///< complex128 [n_sources * n_readout * C, C]
};

struct KtGrappaCoverage
{
  int64_t kernel_lines = 0;   ///< (line, frame) targets filled by a calibrated kernel
  int64_t fallback_lines = 0; ///< filled from the nearest-in-time acquired copy
  int64_t unfilled_lines = 0; ///< no acquired copy of the line in any frame
  int64_t classes = 0;
};

struct KtGrappaKernels
{
  KtGrappaSpec spec;
  std::map<KernelGeometry, KtGrappaKernel> by_geometry;
  std::vector<KernelGeometry> rejected; ///< geometries the calibration region cannot support
};

/// (A^H A + rho * tr(A^H A)/n * I) W = A^H B, complex128. Throws if A has fewer rows than columns.
torch::Tensor ridge_solve(torch::Tensor const &A, torch::Tensor const &B, double rho);

/// Source geometry for an unacquired target line `y` in frame `t` under `lines` (bool [W, T]).
KernelGeometry kernel_geometry(torch::Tensor const &lines, int64_t y, int64_t t, KtGrappaSpec const &spec);

/// Fits one kernel on the fully sampled lines `calib_lines` (bool [W]) of `calib`.
/// Throws std::invalid_argument when the system would be underdetermined.
KtGrappaKernel kt_grappa_fit(torch::Tensor const &calib, torch::Tensor const &calib_lines,
                             KernelGeometry const &geometry, KtGrappaSpec const &spec);

/// Fits one kernel per geometry occurring under `mask`, using calibration
/// lines `calib_lines` of `calib` (the ACS block when undefined).
KtGrappaKernels kt_grappa_calibrate(KSpaceVolume const &calib, SamplingMask const &mask, KtGrappaSpec const &spec,
                                    torch::Tensor calib_lines = {});

/// Fills unacquired lines; acquired entries are returned untouched.
KSpaceVolume kt_grappa_apply(KSpaceVolume const &ksp_under, SamplingMask const &mask, KtGrappaKernels const &kernels,
                             KtGrappaCoverage *coverage = nullptr);

/// Calibrate on the ACS block of the undersampled data, then apply.
KSpaceVolume kt_grappa_reconstruct(KSpaceVolume const &ksp_under, SamplingMask const &mask,
                                   KtGrappaSpec const &spec = {}, KtGrappaCoverage *coverage = nullptr);

// ---------------------------------------------------------------------------
// L + S

struct LpsSpec
{
  double lambda_L_scale = 0.01;  ///< times the largest singular value of the zero-filled Casorati matrix
  double lambda_S_scale = 0.025; ///< times max |temporal FFT| of the zero-filled series
  int64_t max_iters = 100;
  double tol = 1e-5;
  int64_t divergence_patience = 10;
};

struct LpsResult
{
  CineImageSeries image; ///< L + S, complex64 [H, W, T]
  torch::Tensor L, S;    ///< complex128 [H, W, T]
  std::vector<double> objective;
  std::vector<double> dc_residual; ///< ||E(L+S) - d|| after each iteration's projection
  int64_t iterations = 0;
  bool converged = false;
  double lambda_L = 0.0, lambda_S = 0.0;
};

/// E: image [H,W,T] -> masked multi-coil k-space [H,W,C,T]; E^H its adjoint.
torch::Tensor lps_forward(torch::Tensor const &img, torch::Tensor const &csm, torch::Tensor const &mask);
torch::Tensor lps_adjoint(torch::Tensor const &ksp, torch::Tensor const &csm, torch::Tensor const &mask);

/// Singular-value soft thresholding of the [H*W, T] Casorati matrix.
torch::Tensor svt(torch::Tensor const &img, double threshold);
/// Complex soft thresholding z * max(|z| - t, 0) / |z|.
torch::Tensor soft_threshold(torch::Tensor const &z, double threshold);

LpsResult lps_reconstruct(KSpaceVolume const &ksp_under, SamplingMask const &mask, CoilSensitivityMaps const &csm,
                          LpsSpec const &spec = {});

} // namespace kpinr
