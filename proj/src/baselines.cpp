#include "kpinr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace kpinr {

ReconstructionResult pinr_reconstruct(TrainerConfig const &kpinr_cfg, KSpaceVolume const &measured,
                                      SamplingMask const &mask, CoilSensitivityMaps const &csm, RunObserver *observer)
{
  return run_reconstruction(positional_only(kpinr_cfg), measured, mask, csm, observer);
}

// ---------------------------------------------------------------------------
// k-t GRAPPA

torch::Tensor ridge_solve(torch::Tensor const &A, torch::Tensor const &B, double rho)
{
  if (A.size(0) < A.size(1)) {
    throw std::invalid_argument("ridge_solve: " + std::to_string(A.size(0)) + " rows for " + std::to_string(A.size(1)) +
                                " unknowns; enlarge the calibration region");
  }
  auto const a = A.to(torch::kComplexDouble);
  auto const b = B.to(torch::kComplexDouble);
  auto const gram = a.mH().matmul(a);
  int64_t const n = gram.size(0);
  double const scale = torch::real(gram.diagonal()).sum().item<double>() / double(n);
  auto const lhs = gram + rho * scale * torch::eye(n, gram.options());
  return torch::linalg_solve(lhs, a.mH().matmul(b));
}

namespace {

int64_t wrap(int64_t t, int64_t T) { return ((t % T) + T) % T; }

bool frame_valid(int64_t t, int64_t T, bool circular) { return circular || (t >= 0 && t < T); }

std::pair<int64_t, int64_t> readout_span(KtGrappaSpec const &spec)
{
  auto const [lo, hi] = std::minmax_element(spec.readout_offsets.begin(), spec.readout_offsets.end());
  return {*lo, *hi};
}

/// Source matrix [nx, n] for a target (y, t) over readout rows [x0, x0 + nx) of a zero-padded copy.
torch::Tensor gather_sources(torch::Tensor const &padded, int64_t pad, int64_t x0, int64_t nx, int64_t y, int64_t t,
                             KernelGeometry const &geometry, KtGrappaSpec const &spec)
{
  int64_t const T = padded.size(3);
  std::vector<torch::Tensor> cols;
  cols.reserve(geometry.size() * spec.readout_offsets.size());
  for (auto const &src : geometry) {
    int64_t const ts = wrap(t + src.dt, T);
    auto const plane = padded.select(3, ts).select(1, y + src.dy); // [H + 2 pad, C]
    for (auto dx : spec.readout_offsets) { cols.push_back(plane.narrow(0, x0 + pad + dx, nx)); }
  }
  return torch::cat(cols, 1);
}

} // namespace

KernelGeometry kernel_geometry(torch::Tensor const &lines, int64_t y, int64_t t, KtGrappaSpec const &spec)
{
  auto const acc = lines.accessor<bool, 2>();
  int64_t const W = lines.size(0), T = lines.size(1);
  std::set<SourceOffset> offsets;
  for (auto dt : spec.frame_offsets) {
    if (!frame_valid(t + dt, T, spec.circular_time)) { continue; }
    int64_t const ts = wrap(t + dt, T);
    if (ts != t && acc[y][ts]) { offsets.insert({dt, 0}); }
    int64_t found = 0;
    for (int64_t yy = y - 1; yy >= 0 && found < spec.lines_per_side; --yy) {
      if (acc[yy][ts]) {
        offsets.insert({dt, yy - y});
        ++found;
      }
    }
    found = 0;
    for (int64_t yy = y + 1; yy < W && found < spec.lines_per_side; ++yy) {
      if (acc[yy][ts]) {
        offsets.insert({dt, yy - y});
        ++found;
      }
    }
  }
  // Frames that alias onto the same physical frame (short series) collapse to one entry.
  std::set<std::pair<int64_t, int64_t>> physical;
  KernelGeometry geometry;
  for (auto const &o : offsets) {
    if (physical.insert({wrap(t + o.dt, T), o.dy}).second) { geometry.push_back(o); }
  }
  return geometry;
}

KtGrappaKernel kt_grappa_fit(torch::Tensor const &calib, torch::Tensor const &calib_lines,
                             KernelGeometry const &geometry, KtGrappaSpec const &spec)
{
  if (geometry.empty()) { throw std::invalid_argument("kt_grappa_fit: empty source geometry"); }
  auto const data = calib.to(torch::kComplexDouble);
  int64_t const H = data.size(0), W = data.size(1), C = data.size(2), T = data.size(3);
  auto const [dx_lo, dx_hi] = readout_span(spec);
  int64_t const pad = std::max(-dx_lo, dx_hi);
  int64_t const x0 = std::max<int64_t>(0, -dx_lo);
  int64_t const nx = H - x0 - std::max<int64_t>(0, dx_hi);
  if (nx < 1) { throw std::invalid_argument("kt_grappa_fit: readout too short for the kernel"); }
  auto const padded = torch::constant_pad_nd(data, {0, 0, 0, 0, 0, 0, pad, pad});
  auto const ok = calib_lines.accessor<bool, 1>();

  std::vector<torch::Tensor> rows, targets;
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t y = 0; y < W; ++y) {
      if (!ok[y]) { continue; }
      bool usable = true;
      for (auto const &src : geometry) {
        int64_t const ys = y + src.dy;
        usable = usable && frame_valid(t + src.dt, T, spec.circular_time) && ys >= 0 && ys < W && ok[ys];
      }
      if (!usable) { continue; }
      rows.push_back(gather_sources(padded, pad, x0, nx, y, t, geometry, spec));
      targets.push_back(data.select(3, t).select(1, y).narrow(0, x0, nx));
    }
  }
  int64_t const unknowns = int64_t(geometry.size() * spec.readout_offsets.size()) * C;
  int64_t const available = int64_t(rows.size()) * nx;
  if (available < unknowns) {
    throw std::invalid_argument("kt_grappa_fit: calibration region yields " + std::to_string(available) +
                                " equations for " + std::to_string(unknowns) + " unknowns; enlarge the ACS region");
  }
  auto const A = torch::cat(rows, 0);
  auto const B = torch::cat(targets, 0);
  return {geometry, ridge_solve(A, B, spec.rho)};
}

namespace {

torch::Tensor line_table(SamplingMask const &mask) { return mask.mask.select(0, 0).contiguous(); }

} // namespace

KtGrappaKernels kt_grappa_calibrate(KSpaceVolume const &calib, SamplingMask const &mask, KtGrappaSpec const &spec,
                                    torch::Tensor calib_lines)
{
  if (!calib_lines.defined()) {
    if (mask.acs_lines == 0) { throw std::invalid_argument("kt_grappa_calibrate: no ACS region to calibrate on"); }
    calib_lines = torch::zeros({mask.W()}, torch::kBool);
    auto const [b, e] = mask.acs_range();
    calib_lines.narrow(0, b, e - b).fill_(true);
  }
  auto const lines = line_table(mask);
  auto const acc = lines.accessor<bool, 2>();
  KtGrappaKernels kernels;
  kernels.spec = spec;
  std::set<KernelGeometry> seen;
  for (int64_t t = 0; t < mask.T(); ++t) {
    for (int64_t y = 0; y < mask.W(); ++y) {
      if (acc[y][t]) { continue; }
      auto geometry = kernel_geometry(lines, y, t, spec);
      if (geometry.empty() || !seen.insert(geometry).second) { continue; }
      try {
        kernels.by_geometry.emplace(geometry, kt_grappa_fit(calib.data, calib_lines, geometry, spec));
      } catch (std::invalid_argument const &) {
        kernels.rejected.push_back(geometry);
      }
    }
  }
  return kernels;
}

KSpaceVolume kt_grappa_apply(KSpaceVolume const &ksp_under, SamplingMask const &mask, KtGrappaKernels const &kernels,
                             KtGrappaCoverage *coverage)
{
  auto const &spec = kernels.spec;
  auto const data = ksp_under.data.to(torch::kComplexDouble);
  int64_t const H = data.size(0), W = data.size(1), T = data.size(3);
  auto const [dx_lo, dx_hi] = readout_span(spec);
  int64_t const pad = std::max(-dx_lo, dx_hi);
  // Sources are only ever read from acquired lines of the input.
  auto const padded = torch::constant_pad_nd(zero_fill(ksp_under, mask).data.to(torch::kComplexDouble),
                                             {0, 0, 0, 0, 0, 0, pad, pad});
  auto const lines = line_table(mask);
  auto const acc = lines.accessor<bool, 2>();
  auto filled = data.clone();
  KtGrappaCoverage cov;
  cov.classes = int64_t(kernels.by_geometry.size());

  for (int64_t t = 0; t < T; ++t) {
    for (int64_t y = 0; y < W; ++y) {
      if (acc[y][t]) { continue; }
      auto const geometry = kernel_geometry(lines, y, t, spec);
      auto const it = kernels.by_geometry.find(geometry);
      if (it != kernels.by_geometry.end()) {
        auto const src = gather_sources(padded, pad, 0, H, y, t, geometry, spec);
        filled.select(3, t).select(1, y).copy_(src.matmul(it->second.weights));
        ++cov.kernel_lines;
        continue;
      }
      int64_t source_frame = -1;
      for (int64_t d = 1; d < T && source_frame < 0; ++d) {
        for (int64_t cand : {t - d, t + d}) {
          if (!frame_valid(cand, T, spec.circular_time)) { continue; }
          if (acc[y][wrap(cand, T)]) {
            source_frame = wrap(cand, T);
            break;
          }
        }
      }
      if (source_frame >= 0) {
        filled.select(3, t).select(1, y).copy_(data.select(3, source_frame).select(1, y));
        ++cov.fallback_lines;
      } else {
        filled.select(3, t).select(1, y).zero_();
        ++cov.unfilled_lines;
      }
    }
  }
  if (coverage != nullptr) { *coverage = cov; }
  KSpaceVolume out = ksp_under;
  // Acquired entries: copy the input bit-exactly.
  out.data = torch::where(mask.mask.unsqueeze(2), ksp_under.data, filled.to(ksp_under.data.scalar_type()));
  return out;
}

KSpaceVolume kt_grappa_reconstruct(KSpaceVolume const &ksp_under, SamplingMask const &mask, KtGrappaSpec const &spec,
                                   KtGrappaCoverage *coverage)
{
  auto const calib = zero_fill(ksp_under, mask);
  auto const kernels = kt_grappa_calibrate(calib, mask, spec);
  return kt_grappa_apply(ksp_under, mask, kernels, coverage);
}

// ---------------------------------------------------------------------------
// L + S

torch::Tensor lps_forward(torch::Tensor const &img, torch::Tensor const &csm, torch::Tensor const &mask)
{
  auto const coil_imgs = csm.unsqueeze(3) * img.unsqueeze(2);
  auto const k = fft2_centered(coil_imgs);
  return torch::where(mask.unsqueeze(2), k, torch::zeros({}, k.options()));
}

torch::Tensor lps_adjoint(torch::Tensor const &ksp, torch::Tensor const &csm, torch::Tensor const &mask)
{
  auto const k = torch::where(mask.unsqueeze(2), ksp, torch::zeros({}, ksp.options()));
  return (csm.conj().unsqueeze(3) * ifft2_centered(k)).sum(2);
}

torch::Tensor svt(torch::Tensor const &img, double threshold)
{
  int64_t const H = img.size(0), W = img.size(1), T = img.size(2);
  auto const casorati = img.reshape({H * W, T});
  auto [U, s, Vh] = torch::linalg_svd(casorati, false);
  auto const shrunk = torch::relu(s - threshold).to(U.scalar_type());
  return (U * shrunk.unsqueeze(0)).matmul(Vh).reshape({H, W, T});
}

torch::Tensor soft_threshold(torch::Tensor const &z, double threshold)
{
  auto const mag = z.abs();
  auto const scale = torch::relu(mag - threshold) / torch::where(mag > 0, mag, torch::ones_like(mag));
  return z * scale.to(z.scalar_type());
}

namespace {

torch::Tensor temporal_fft(torch::Tensor const &x) { return torch::fft::fft(x, c10::nullopt, 2, "ortho"); }
torch::Tensor temporal_ifft(torch::Tensor const &x) { return torch::fft::ifft(x, c10::nullopt, 2, "ortho"); }

double casorati_nuclear_norm(torch::Tensor const &img)
{
  auto const s = torch::linalg_svdvals(img.reshape({img.size(0) * img.size(1), img.size(2)}));
  return s.sum().item<double>();
}

} // namespace

LpsResult lps_reconstruct(KSpaceVolume const &ksp_under, SamplingMask const &mask, CoilSensitivityMaps const &csm,
                          LpsSpec const &spec)
{
  if (spec.lambda_L_scale < 0 || spec.lambda_S_scale < 0) { throw std::invalid_argument("lps: thresholds must be >= 0"); }
  if (!csm.maps.defined() || csm.maps.size(0) != ksp_under.H() || csm.maps.size(1) != ksp_under.W() ||
      csm.maps.size(2) != ksp_under.C()) {
    throw std::invalid_argument("lps: coil sensitivity maps missing or mismatched");
  }
  auto const m = mask.mask;
  auto const d = zero_fill(ksp_under, mask).data.to(torch::kComplexDouble);
  auto const maps = csm.maps.to(torch::kComplexDouble);

  LpsResult res;
  auto M = lps_adjoint(d, maps, m);
  int64_t const H = M.size(0), W = M.size(1), T = M.size(2);
  res.lambda_L = spec.lambda_L_scale * torch::linalg_svdvals(M.reshape({H * W, T})).max().item<double>();
  res.lambda_S = spec.lambda_S_scale * temporal_fft(M).abs().max().item<double>();

  auto S = torch::zeros_like(M);
  auto L_prev = M;
  torch::Tensor L = M;
  int64_t rising = 0;
  for (int64_t it = 0; it < spec.max_iters; ++it) {
    auto const M0 = M;
    L = svt(M - S, res.lambda_L);
    S = temporal_ifft(soft_threshold(temporal_fft(M - L_prev), res.lambda_S));
    auto const sum = L + S;
    auto const resid = lps_forward(sum, maps, m) - d;
    M = sum - lps_adjoint(resid, maps, m);
    L_prev = L;

    double const data_term = 0.5 * resid.abs().square().sum().item<double>();
    double const obj = data_term + res.lambda_L * casorati_nuclear_norm(L) + res.lambda_S * temporal_fft(S).abs().sum().item<double>();
    if (!std::isfinite(obj)) { throw NumericalError("lps: non-finite objective"); }
    rising = (!res.objective.empty() && obj > res.objective.back()) ? rising + 1 : 0;
    res.objective.push_back(obj);
    res.dc_residual.push_back((lps_forward(M, maps, m) - d).abs().square().sum().sqrt().item<double>());
    res.iterations = it + 1;
    if (rising >= spec.divergence_patience) {
      throw NumericalError("lps: objective increased for " + std::to_string(rising) + " consecutive iterations");
    }
    double const denom = M0.abs().square().sum().sqrt().item<double>();
    double const change = (M - M0).abs().square().sum().sqrt().item<double>() / std::max(denom, 1e-300);
    if (change < spec.tol) {
      res.converged = true;
      break;
    }
  }
  res.L = L;
  res.S = S;
  res.image = {(L + S).to(torch::kComplexFloat)};
  return res;
}

} // namespace kpinr
