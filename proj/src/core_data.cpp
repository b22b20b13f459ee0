#include "kpinr/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace kpinr {

void require_finite(torch::Tensor const &t, std::string const &what)
{
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NumericalError(what + ": non-finite entries");
  }
}

void KSpaceVolume::validate() const
{
  if (!data.defined() || data.dim() != 4) {
    throw std::invalid_argument("KSpaceVolume: expected a 4-D [H,W,C,T] tensor");
  }
  for (int d = 0; d < 4; ++d) {
    if (data.size(d) < 1) { throw std::invalid_argument("KSpaceVolume: empty dimension"); }
  }
  if (!data.is_complex()) { throw std::invalid_argument("KSpaceVolume: data must be complex"); }
  if (!(norm_scale > 0.0) || !std::isfinite(norm_scale)) {
    throw std::invalid_argument("KSpaceVolume: norm_scale must be positive");
  }
  require_finite(data, "KSpaceVolume");
}

torch::Tensor KSpaceVolume::denormalized() const
{
  return (data.to(torch::kComplexDouble) * norm_scale).to(data.scalar_type());
}

std::string to_string(MaskPattern p)
{
  return p == MaskPattern::UniformCartesian ? "uniform-cartesian" : "gaussian-cartesian";
}

MaskPattern mask_pattern_from_string(std::string const &s)
{
  if (s == "uniform-cartesian" || s == "uniform") { return MaskPattern::UniformCartesian; }
  if (s == "gaussian-cartesian" || s == "gaussian") { return MaskPattern::GaussianCartesian; }
  throw std::invalid_argument("unknown mask pattern '" + s + "'");
}

std::pair<int64_t, int64_t> SamplingMask::acs_range() const
{
  int64_t const w = W();
  int64_t const begin = w / 2 - acs_lines / 2;
  return {begin, begin + acs_lines};
}

void SamplingMask::validate() const
{
  if (!mask.defined() || mask.dim() != 3 || mask.scalar_type() != torch::kBool) {
    throw std::invalid_argument("SamplingMask: expected bool [H,W,T]");
  }
  if (acs_lines < 0 || acs_lines > W()) { throw std::invalid_argument("SamplingMask: acs_lines out of range"); }
  // Cartesian: identical along readout.
  if (!mask.eq(mask.narrow(0, 0, 1)).all().item<bool>()) {
    throw std::invalid_argument("SamplingMask: mask must be constant along H");
  }
  auto const [b, e] = acs_range();
  if (acs_lines > 0 && !mask.narrow(1, b, e - b).all().item<bool>()) {
    throw std::invalid_argument("SamplingMask: ACS block not fully sampled");
  }
}

std::string to_string(CsmSource s) { return s == CsmSource::GroundTruth ? "ground-truth" : "acs-estimated"; }

CsmSource csm_source_from_string(std::string const &s)
{
  if (s == "ground-truth") { return CsmSource::GroundTruth; }
  if (s == "acs-estimated") { return CsmSource::AcsEstimated; }
  throw std::invalid_argument("unknown CSM source '" + s + "'");
}

namespace {

torch::Tensor shift(torch::Tensor const &x, bool inverse)
{
  // fftshift moves index 0 to floor(n/2); ifftshift undoes it for odd n too.
  std::vector<int64_t> shifts;
  for (int d = 0; d < 2; ++d) {
    int64_t const n = x.size(d);
    shifts.push_back(inverse ? -(n / 2) : n / 2);
  }
  return torch::roll(x, shifts, {0, 1});
}

} // namespace

torch::Tensor fft2_centered(torch::Tensor const &img)
{
  require_finite(img, "fft2_centered input");
  auto x = img.is_complex() ? img : img.to(torch::kComplexFloat);
  return shift(torch::fft::fftn(shift(x, true), c10::nullopt, {0, 1}, "ortho"), false);
}

torch::Tensor ifft2_centered(torch::Tensor const &ksp)
{
  require_finite(ksp, "ifft2_centered input");
  auto x = ksp.is_complex() ? ksp : ksp.to(torch::kComplexFloat);
  return shift(torch::fft::ifftn(shift(x, true), c10::nullopt, {0, 1}, "ortho"), false);
}

CineImageSeries coil_combine(torch::Tensor const &coil_imgs, CoilSensitivityMaps const &csm)
{
  if (coil_imgs.dim() != 4 || csm.maps.dim() != 3 || coil_imgs.size(0) != csm.maps.size(0) ||
      coil_imgs.size(1) != csm.maps.size(1) || coil_imgs.size(2) != csm.maps.size(2)) {
    throw std::invalid_argument("coil_combine: shape mismatch between coil images and CSM");
  }
  auto const maps = csm.maps.to(coil_imgs.scalar_type()).conj().unsqueeze(3);
  return {(maps * coil_imgs).sum(2)};
}

CoilSensitivityMaps estimate_csm_from_acs(KSpaceVolume const &ksp, SamplingMask const &mask)
{
  if (mask.acs_lines == 0) { throw std::invalid_argument("estimate_csm_from_acs: empty ACS region"); }
  if (mask.acs_lines < 4) { throw std::invalid_argument("estimate_csm_from_acs: need at least 4 ACS lines"); }
  if (ksp.H() != mask.H() || ksp.W() != mask.W() || ksp.T() != mask.T()) {
    throw std::invalid_argument("estimate_csm_from_acs: k-space and mask disagree in shape");
  }
  int64_t const H = ksp.H(), W = ksp.W();
  auto const [b, e] = mask.acs_range();
  auto const opts = torch::TensorOptions().dtype(torch::kDouble);

  auto hann = [&](int64_t n, int64_t width, int64_t begin) {
    auto win = torch::zeros({n}, opts);
    for (int64_t i = 0; i < width; ++i) {
      win[begin + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / width);
    }
    return win;
  };
  auto const win_w = hann(W, e - b, b);
  int64_t const width_h = std::clamp<int64_t>(std::llround(double(mask.acs_lines) * H / W), 1, H);
  auto const win_h = hann(H, width_h, H / 2 - width_h / 2);
  auto const window = (win_h.unsqueeze(1) * win_w.unsqueeze(0)).unsqueeze(2);

  // Only ACS lines enter (the window is zero elsewhere), so unacquired entries never contribute.
  auto const acs = torch::zeros({H, W, ksp.C()}, torch::kComplexDouble);
  auto const block = ksp.data.narrow(1, b, e - b).to(torch::kComplexDouble).mean(3);
  acs.narrow(1, b, e - b).copy_(block);
  auto const low = ifft2_centered(acs * window);
  auto const rss = low.abs().square().sum(2, true).sqrt();
  auto const support = rss >= 1e-8;
  auto const maps = torch::where(support, low / torch::where(support, rss, torch::ones_like(rss)),
                                 torch::zeros_like(low));
  return {maps.to(torch::kComplexFloat), CsmSource::AcsEstimated};
}

KSpaceVolume zero_fill(KSpaceVolume const &ksp_full, SamplingMask const &mask)
{
  if (ksp_full.H() != mask.H() || ksp_full.W() != mask.W() || ksp_full.T() != mask.T()) {
    throw std::invalid_argument("zero_fill: k-space and mask disagree in shape");
  }
  auto const m = mask.mask.unsqueeze(2);
  KSpaceVolume out = ksp_full;
  out.data = torch::where(m, ksp_full.data, torch::zeros_like(ksp_full.data));
  return out;
}

KSpaceVolume normalize_kspace(KSpaceVolume const &ksp)
{
  double const peak = ksp.data.abs().max().item<double>();
  if (!(peak > 0.0)) { throw std::invalid_argument("normalize_kspace: all-zero k-space"); }
  if (!std::isfinite(peak)) { throw NumericalError("normalize_kspace: non-finite k-space"); }
  KSpaceVolume out = ksp;
  if (peak != 1.0) { out.data = (ksp.data.to(torch::kComplexDouble) / peak).to(ksp.data.scalar_type()); }
  out.norm_scale = ksp.norm_scale * peak;
  return out;
}

CineImageSeries kspace_to_image(torch::Tensor const &ksp, CoilSensitivityMaps const &csm)
{
  return coil_combine(ifft2_centered(ksp), csm);
}

} // namespace kpinr
