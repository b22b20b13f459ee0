#include "kpinr/phantom.hpp"

#include <cmath>
#include <random>

namespace kpinr {

void PhantomSpec::validate() const
{
  if (H < 8 || W < 8) { throw std::invalid_argument("phantom: H and W must be >= 8"); }
  if (coils < 1) { throw std::invalid_argument("phantom: coils must be >= 1"); }
  if (frames < 1) { throw std::invalid_argument("phantom: frames must be >= 1"); }
  if (!(contraction >= 0.0 && contraction < 1.0)) { throw std::invalid_argument("phantom: contraction must be in [0, 1)"); }
  if (!(motion_amplitude >= 0.0) || !(noise_std >= 0.0)) {
    throw std::invalid_argument("phantom: amplitude and noise must be non-negative");
  }
}

namespace {

struct Ellipse
{
  double cx, cy, rx, ry, value;
};

// Pixel grid in [-1, 1] (x over H rows, y over W columns).
torch::Tensor axis(int64_t n)
{
  return torch::linspace(-1.0, 1.0, n, torch::kDouble);
}

torch::Tensor ellipse_mask(torch::Tensor const &X, torch::Tensor const &Y, Ellipse const &e)
{
  auto const d = ((X - e.cx) / e.rx).square() + ((Y - e.cy) / e.ry).square();
  return (d <= 1.0).to(torch::kDouble) * e.value;
}

} // namespace

Phantom generate_phantom(PhantomSpec const &spec)
{
  spec.validate();
  auto const grids = torch::meshgrid({axis(spec.H), axis(spec.W)}, "ij");
  auto const &X = grids[0];
  auto const &Y = grids[1];

  double const px = 2.0 / double(spec.H - 1);
  auto image = torch::zeros({spec.H, spec.W, spec.frames}, torch::kDouble);
  for (int64_t t = 0; t < spec.frames; ++t) {
    double const phase = 2.0 * M_PI * double(t) / double(spec.frames);
    double const shift = spec.motion_amplitude * px * std::sin(phase);
    double const shrink = 1.0 - spec.contraction * 0.5 * (1.0 - std::cos(phase));
    auto frame = ellipse_mask(X, Y, {0.0, 0.0, 0.80, 0.70, 0.35});
    frame = frame + ellipse_mask(X, Y, {0.35, -0.30, 0.25, 0.20, 0.25});
    frame = frame + ellipse_mask(X, Y, {-0.05 + shift, 0.10, 0.28 * shrink, 0.22 * shrink, 0.50});
    frame = frame + ellipse_mask(X, Y, {-0.05 + shift, 0.10, 0.16 * shrink, 0.12 * shrink, 0.15});
    image.select(2, t).copy_(frame);
  }

  // Coils on a ring, Gaussian magnitude, low-order polynomial phase drawn from the seed.
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  auto maps = torch::zeros({spec.H, spec.W, spec.coils}, torch::kComplexDouble);
  for (int64_t c = 0; c < spec.coils; ++c) {
    double const angle = 2.0 * M_PI * double(c) / double(spec.coils);
    double const cx = 0.9 * std::cos(angle), cy = 0.9 * std::sin(angle);
    auto const mag = torch::exp(-((X - cx).square() + (Y - cy).square()) / (2.0 * 0.7 * 0.7));
    double const a = coef(rng), b = coef(rng), d = 0.5 * coef(rng);
    auto const ph = a * X + b * Y + d * X * Y;
    maps.select(2, c).copy_(torch::polar(mag, ph));
  }
  auto const rss = maps.abs().square().sum(2, true).sqrt();
  maps = maps / rss;

  auto const coil_imgs = maps.unsqueeze(3) * image.unsqueeze(2).to(torch::kComplexDouble);
  auto ksp = fft2_centered(coil_imgs);
  if (spec.noise_std > 0.0) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(spec.seed ^ 0x6e6f697365ULL);
    auto const re = at::normal(0.0, spec.noise_std, ksp.sizes(), gen, torch::kDouble);
    auto const im = at::normal(0.0, spec.noise_std, ksp.sizes(), gen, torch::kDouble);
    ksp = ksp + torch::complex(re, im);
  }

  Phantom out;
  out.kspace = {ksp.to(torch::kComplexFloat), 1.0, {{"source", "phantom"}, {"view", "phantom"}}};
  out.csm = {maps.to(torch::kComplexFloat), CsmSource::GroundTruth};
  out.image = {image.to(torch::kComplexFloat)};
  return out;
}

} // namespace kpinr
