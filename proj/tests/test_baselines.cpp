#include "kpinr/baselines.hpp"
#include "kpinr/phantom.hpp"
#include "kpinr/sampling.hpp"

#include <doctest.h>

#include <cmath>

using namespace kpinr;

namespace {

double nrmse(torch::Tensor const &est, torch::Tensor const &ref)
{
  auto const e = est.to(torch::kComplexDouble), r = ref.to(torch::kComplexDouble);
  return ((e - r).abs().square().sum() / r.abs().square().sum()).sqrt().item<double>();
}

torch::Tensor on_mask(torch::Tensor const &k, SamplingMask const &m)
{
  return k.index({m.mask.unsqueeze(2).expand_as(k)});
}

} // namespace

TEST_CASE("ridge solver")
{
  torch::manual_seed(41);
  // Target equals the second source column exactly: the indicator is recovered.
  auto const A = torch::randn({200, 4}, torch::kComplexDouble);
  auto const B = A.narrow(1, 1, 1).clone();
  auto const w = ridge_solve(A, B, 1e-10);
  auto indicator = torch::zeros({4, 1}, torch::kComplexDouble);
  indicator.index_put_({1, 0}, 1.0);
  CHECK((w - indicator).abs().max().item<double>() < 1e-6);

  // Large rho drives the weights to zero.
  CHECK(ridge_solve(A, B, 1e12).abs().max().item<double>() < 1e-9);

  // Repeating every row leaves the least-squares solution unchanged.
  auto const Y = torch::randn({200, 2}, torch::kComplexDouble);
  auto const once = ridge_solve(A, Y, 1e-6);
  auto const twice = ridge_solve(torch::cat({A, A}, 0), torch::cat({Y, Y}, 0), 1e-6);
  CHECK((once - twice).abs().max().item<double>() < 1e-9);

  CHECK_THROWS_AS(ridge_solve(torch::randn({3, 4}, torch::kComplexDouble), B.narrow(0, 0, 3), 1e-4),
                  std::invalid_argument);
}

TEST_CASE("k-t GRAPPA at R = 1 is the identity")
{
  auto const ph = generate_phantom({16, 16, 3, 4, 1.0, 0.2, 0.0, 1});
  auto const mask = make_mask({MaskPattern::UniformCartesian, 1.0, 4, 0, true}, 16, 16, 4);
  KtGrappaCoverage cov;
  auto const out = kt_grappa_reconstruct(ph.kspace, mask, {}, &cov);
  CHECK(torch::equal(out.data, ph.kspace.data));
  CHECK(cov.kernel_lines == 0);
  CHECK(cov.fallback_lines == 0);
}

TEST_CASE("k-t GRAPPA self-consistency on a smooth phantom at R = 4")
{
  // Eight coils: with four, R equals the coil count and the spatial part of the
  // kernel is at its conditioning limit.
  auto const ph = generate_phantom({32, 32, 8, 8, 1.0, 0.2, 0.0, 2});
  auto const mask = make_mask({MaskPattern::UniformCartesian, 4.0, 8, 0, true}, 32, 32, 8);
  // Kernels fitted on the fully sampled data, applied to a masked copy.
  auto const kernels = kt_grappa_calibrate(ph.kspace, mask, {}, torch::ones({32}, torch::kBool));
  CHECK(kernels.rejected.empty());
  auto const under = zero_fill(ph.kspace, mask);
  KtGrappaCoverage cov;
  auto const out = kt_grappa_apply(under, mask, kernels, &cov);
  CHECK(cov.kernel_lines > 0);
  CHECK(cov.unfilled_lines == 0);

  auto const missing = mask.mask.logical_not().unsqueeze(2).expand_as(out.data);
  double const err = nrmse(out.data.index({missing}), ph.kspace.data.index({missing}));
  INFO("NRMSE on missing entries: " << err);
  CHECK(err <= 0.1);
  CHECK(torch::equal(on_mask(out.data, mask), on_mask(under.data, mask)));
}

TEST_CASE("k-t GRAPPA from the ACS block leaves acquired data bit-exact")
{
  auto const ph = generate_phantom({32, 32, 4, 8, 1.0, 0.2, 0.0, 3});
  auto const mask = make_mask({MaskPattern::UniformCartesian, 4.0, 16, 0, true}, 32, 32, 8);
  auto const under = zero_fill(ph.kspace, mask);
  KtGrappaCoverage cov;
  auto const out = kt_grappa_reconstruct(under, mask, {}, &cov);
  CHECK(torch::equal(on_mask(out.data, mask), on_mask(under.data, mask)));
  CHECK(torch::isfinite(torch::view_as_real(out.data)).all().item<bool>());
  // Filling improves on the zero-filled k-space.
  CHECK(nrmse(out.data, ph.kspace.data) < nrmse(under.data, ph.kspace.data));

  SamplingMask no_acs = mask;
  no_acs.acs_lines = 0;
  CHECK_THROWS_AS(kt_grappa_reconstruct(under, no_acs), std::invalid_argument);
}

TEST_CASE("k-t GRAPPA kernel geometry follows the interleave")
{
  auto const mask = make_mask({MaskPattern::UniformCartesian, 4.0, 0, 0, true}, 4, 16, 4);
  auto const lines = mask.mask.select(0, 0).contiguous();
  // Frame 0 acquires y = 0 mod 4; y = 1 is acquired in frame 1 and y = 3 in frame 3 = frame -1.
  auto const g = kernel_geometry(lines, 5, 0, {});
  CHECK(std::find(g.begin(), g.end(), SourceOffset{0, -1}) != g.end());
  CHECK(std::find(g.begin(), g.end(), SourceOffset{0, 3}) != g.end());
  CHECK(std::find(g.begin(), g.end(), SourceOffset{1, 0}) != g.end());
  for (auto const &o : g) {
    int64_t const t = ((o.dt % 4) + 4) % 4;
    CHECK(lines[5 + o.dy][t].item<bool>());
  }
}

TEST_CASE("L+S operators")
{
  torch::manual_seed(42);
  auto const img = torch::randn({6, 5, 4}, torch::kComplexDouble);
  auto const ksp = torch::randn({6, 5, 3, 4}, torch::kComplexDouble);
  auto const csm = torch::randn({6, 5, 3}, torch::kComplexDouble);
  auto const mask = torch::rand({6, 5, 4}).gt(0.4);
  // Adjoint identity <E x, y> = <x, E^H y>.
  auto const lhs = (lps_forward(img, csm, mask).conj() * ksp).sum();
  auto const rhs = (img.conj() * lps_adjoint(ksp, csm, mask)).sum();
  CHECK((lhs - rhs).abs().item<double>() < 1e-9 * lhs.abs().item<double>());

  auto const shrunk = svt(img, 1.0);
  auto nuc = [](torch::Tensor const &x) { return torch::linalg_svdvals(x.reshape({30, 4})).sum().item<double>(); };
  CHECK(nuc(shrunk) <= nuc(img));
  CHECK(svt(img, 1e9).abs().max().item<double>() == 0.0);
  CHECK((svt(img, 0.0) - img).abs().max().item<double>() < 1e-10);

  auto const z = torch::tensor({c10::complex<double>(3, 4), c10::complex<double>(0.3, 0.4), c10::complex<double>(0, 0)});
  auto const st = soft_threshold(z, 1.0);
  CHECK(std::abs(st[0].item<c10::complex<double>>() - c10::complex<double>(2.4, 3.2)) < 1e-12);
  CHECK(st[1].abs().item<double>() == 0.0);
  CHECK(st[2].abs().item<double>() == 0.0);
}

TEST_CASE("L+S on fully sampled data recovers the truth")
{
  auto const ph = generate_phantom({16, 16, 3, 4, 1.0, 0.2, 0.0, 4});
  auto const mask = make_mask({MaskPattern::UniformCartesian, 1.0, 0, 0, true}, 16, 16, 4);
  auto const res = lps_reconstruct(ph.kspace, mask, ph.csm, {0.0, 0.0, 1, 1e-5, 10});
  CHECK(res.dc_residual.front() <= 1e-6 * ph.kspace.data.abs().max().item<double>() * 16);
  CHECK(nrmse(res.image.data, ph.image.data) < 1e-5);
}

TEST_CASE("L+S on a static phantom: S is small and DC does not increase the residual")
{
  auto const ph = generate_phantom({32, 32, 4, 8, 0.0, 0.0, 0.0, 5});
  auto const mask = make_mask({MaskPattern::UniformCartesian, 4.0, 8, 0, true}, 32, 32, 8);
  auto const under = zero_fill(ph.kspace, mask);
  auto const res = lps_reconstruct(under, mask, ph.csm);
  double const norm_L = res.L.abs().square().sum().sqrt().item<double>();
  double const norm_S = res.S.abs().square().sum().sqrt().item<double>();
  INFO("|S|/|L| = " << norm_S / norm_L);
  CHECK(norm_S / norm_L <= 0.05);
  double const e_L = norm_L * norm_L;
  double const e_total = (res.L + res.S).abs().square().sum().item<double>();
  CHECK(e_L >= 0.99 * e_total);

  // The projection M <- X - E^H(E X - d) never increases ||E X - d|| for fixed X = L + S.
  auto const maps = ph.csm.maps.to(torch::kComplexDouble);
  auto const d = under.data.to(torch::kComplexDouble);
  auto project = [&](torch::Tensor const &x) { return x - lps_adjoint(lps_forward(x, maps, mask.mask) - d, maps, mask.mask); };
  auto residual = [&](torch::Tensor const &x) {
    return (lps_forward(x, maps, mask.mask) - d).abs().square().sum().sqrt().item<double>();
  };
  auto x = res.L + res.S;
  torch::manual_seed(43);
  for (auto const &start : {x, x + 0.1 * torch::randn_like(x)}) {
    double prev = residual(start);
    auto y = start;
    for (int k = 0; k < 3; ++k) {
      y = project(y);
      double const r = residual(y);
      CHECK(r <= prev + 1e-9);
      prev = r;
    }
  }
  for (size_t i = 1; i < res.dc_residual.size(); ++i) {
    CHECK(res.dc_residual[i] <= res.dc_residual[i - 1] + 1e-6 * d.abs().max().item<double>());
  }
}

TEST_CASE("L+S: infinite sparsity threshold zeros S")
{
  auto const ph = generate_phantom({16, 16, 2, 4, 1.0, 0.2, 0.0, 6});
  auto const mask = make_mask({MaskPattern::UniformCartesian, 2.0, 4, 0, true}, 16, 16, 4);
  auto const res = lps_reconstruct(zero_fill(ph.kspace, mask), mask, ph.csm, {0.01, 1e9, 10, 1e-5, 10});
  CHECK(res.S.abs().max().item<double>() == 0.0);
}

TEST_CASE("P-INR ablation differs from KP-INR only in branch set and auto-encoding weights")
{
  TrainerConfig kp;
  auto const p = positional_only(kp);
  CHECK(p.model.branches == BranchSet::PositionalOnly);
  CHECK(p.weights.ae_acq == 0.0);
  CHECK(p.weights.ae_zf == 0.0);
  CHECK(p.weights.kv == kp.weights.kv);
  CHECK(p.weights.pv == kp.weights.pv);
  CHECK(p.model.branch.hidden == kp.model.branch.hidden);
  CHECK(p.model.encoding.total_len() == kp.model.encoding.total_len());
  CHECK(p.schedule.total_epochs == kp.schedule.total_epochs);
  CHECK(p.schedule.lr == kp.schedule.lr);
}

