#include "kpinr/sampling.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace kpinr {

namespace {

void check_dims(MaskSpec const &spec, int64_t H, int64_t W, int64_t T)
{
  if (H < 1 || W < 1 || T < 1) { throw std::invalid_argument("mask: dimensions must be >= 1"); }
  if (!(spec.R >= 1.0)) { throw std::invalid_argument("mask: R must be >= 1"); }
  if (spec.R > double(W)) { throw std::invalid_argument("mask: R exceeds the number of phase-encode lines"); }
  if (spec.acs_lines < 0 || spec.acs_lines > W) { throw std::invalid_argument("mask: acs_lines must lie in [0, W]"); }
}

SamplingMask from_lines(std::vector<std::vector<uint8_t>> const &lines, MaskSpec const &spec, int64_t H)
{
  int64_t const T = int64_t(lines.size());
  int64_t const W = int64_t(lines.front().size());
  auto wt = torch::zeros({W, T}, torch::kBool);
  auto acc = wt.accessor<bool, 2>();
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t w = 0; w < W; ++w) { acc[w][t] = lines[t][w] != 0; }
  }
  SamplingMask m;
  m.mask = wt.unsqueeze(0).expand({H, W, T}).contiguous();
  m.acs_lines = spec.acs_lines;
  m.pattern = spec.pattern;
  m.nominal_R = spec.R;
  return m;
}

double uniform01(std::mt19937_64 &rng) { return double(rng() >> 11) * 0x1.0p-53; }

} // namespace

SamplingMask make_uniform_mask(MaskSpec const &spec, int64_t H, int64_t W, int64_t T)
{
  if (spec.pattern != MaskPattern::UniformCartesian) {
    throw std::invalid_argument("make_uniform_mask: spec pattern is not uniform-cartesian");
  }
  check_dims(spec, H, W, T);
  auto const R = int64_t(std::llround(spec.R));
  if (double(R) != spec.R) { throw std::invalid_argument("make_uniform_mask: R must be an integer"); }

  SamplingMask probe;
  probe.mask = torch::zeros({1, W, 1}, torch::kBool);
  probe.acs_lines = spec.acs_lines;
  auto const [acs_b, acs_e] = probe.acs_range();

  std::vector<std::vector<uint8_t>> lines(T, std::vector<uint8_t>(W, 0));
  for (int64_t t = 0; t < T; ++t) {
    int64_t const offset = spec.interleave ? t % R : 0;
    for (int64_t w = 0; w < W; ++w) {
      bool const on_grid = (w % R) == offset;
      bool const in_acs = w >= acs_b && w < acs_e;
      lines[t][w] = on_grid || in_acs;
    }
  }
  return from_lines(lines, spec, H);
}

SamplingMask make_gaussian_mask(MaskSpec const &spec, int64_t H, int64_t W, int64_t T)
{
  if (spec.pattern != MaskPattern::GaussianCartesian) {
    throw std::invalid_argument("make_gaussian_mask: spec pattern is not gaussian-cartesian");
  }
  check_dims(spec, H, W, T);
  auto const budget = int64_t(std::ceil(double(W) / spec.R - 1e-12));
  if (budget < spec.acs_lines) {
    throw std::invalid_argument("make_gaussian_mask: line budget ceil(W/R) is smaller than acs_lines");
  }

  SamplingMask probe;
  probe.mask = torch::zeros({1, W, 1}, torch::kBool);
  probe.acs_lines = spec.acs_lines;
  auto const [acs_b, acs_e] = probe.acs_range();

  double const sigma = double(W) / 6.0;
  std::vector<double> weight(W);
  for (int64_t w = 0; w < W; ++w) {
    double const d = double(w) - double(W) / 2.0;
    weight[w] = std::exp(-d * d / (2.0 * sigma * sigma));
  }

  std::mt19937_64 rng(spec.seed);
  auto draw_frame = [&]() {
    std::vector<uint8_t> chosen(W, 0);
    int64_t count = 0;
    for (int64_t w = acs_b; w < acs_e; ++w) {
      chosen[w] = 1;
      ++count;
    }
    while (count < budget) {
      double total = 0.0;
      for (int64_t w = 0; w < W; ++w) { total += chosen[w] ? 0.0 : weight[w]; }
      double u = uniform01(rng) * total;
      int64_t pick = -1;
      for (int64_t w = 0; w < W; ++w) {
        if (chosen[w]) { continue; }
        pick = w;
        u -= weight[w];
        if (u < 0.0) { break; }
      }
      chosen[pick] = 1;
      ++count;
    }
    return chosen;
  };

  std::vector<std::vector<uint8_t>> lines;
  lines.reserve(T);
  for (int64_t t = 0; t < T; ++t) {
    if (t == 0 || spec.interleave) {
      lines.push_back(draw_frame());
    } else {
      lines.push_back(lines.front());
    }
  }
  return from_lines(lines, spec, H);
}

SamplingMask make_mask(MaskSpec const &spec, int64_t H, int64_t W, int64_t T)
{
  return spec.pattern == MaskPattern::UniformCartesian ? make_uniform_mask(spec, H, W, T)
                                                       : make_gaussian_mask(spec, H, W, T);
}

double normalize_index(int64_t i, int64_t n)
{
  if (n <= 1) { return 0.0; }
  return 2.0 * double(i) / double(n - 1) - 1.0;
}

namespace {

CoordinateSet finish(torch::Tensor grid, int64_t H, int64_t W, int64_t T)
{
  auto g = grid.accessor<int64_t, 2>();
  auto norm = torch::empty({grid.size(0), 3}, torch::kFloat);
  auto n = norm.accessor<float, 2>();
  for (int64_t i = 0; i < grid.size(0); ++i) {
    n[i][0] = float(normalize_index(g[i][0], T));
    n[i][1] = float(normalize_index(g[i][1], H));
    n[i][2] = float(normalize_index(g[i][2], W));
  }
  return {std::move(grid), std::move(norm)};
}

} // namespace

CoordinateSet mask_to_coordinates(SamplingMask const &mask)
{
  int64_t const H = mask.H(), W = mask.W(), T = mask.T();
  // nonzero on [T,H,W] yields lexicographic (t, x, y) directly.
  auto const grid = mask.mask.permute({2, 0, 1}).nonzero().contiguous();
  return finish(grid, H, W, T);
}

CoordinateSet full_grid_coordinates(int64_t H, int64_t W, int64_t T)
{
  auto const grid = torch::ones({T, H, W}, torch::kBool).nonzero().contiguous();
  return finish(grid, H, W, T);
}

torch::Tensor coordinates_to_mask(CoordinateSet const &coords, int64_t H, int64_t W, int64_t T)
{
  auto m = torch::zeros({H, W, T}, torch::kBool);
  auto acc = m.accessor<bool, 3>();
  auto g = coords.grid.accessor<int64_t, 2>();
  for (int64_t i = 0; i < coords.count(); ++i) { acc[g[i][1]][g[i][2]][g[i][0]] = true; }
  return m;
}

double effective_acceleration(SamplingMask const &mask)
{
  auto const ones = mask.mask.sum().item<int64_t>();
  if (ones == 0) { throw std::invalid_argument("effective_acceleration: mask has no sampled entries"); }
  return double(mask.mask.numel()) / double(ones);
}

} // namespace kpinr
