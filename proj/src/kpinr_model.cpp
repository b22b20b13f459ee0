#include "kpinr/kpinr_model.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace kpinr {

namespace {

torch::nn::Linear make_linear(int64_t in, int64_t out)
{
  return torch::nn::Linear(torch::nn::LinearOptions(in, out));
}

// Output heads start at zero so that untrained predictions at unacquired
// locations equal the zero-filled input instead of O(1) noise.
torch::nn::Linear make_head(int64_t in, int64_t out)
{
  auto head = make_linear(in, out);
  torch::NoGradGuard no_grad;
  head->weight.zero_();
  head->bias.zero_();
  return head;
}

// Second moment of psi(z) when Re z, Im z ~ N(0, s^2) with s^2 = 1 / (2 sigma0^2).
double wire_output_m2(double omega0, double sigma0)
{
  double const s2 = 1.0 / (2.0 * sigma0 * sigma0);
  double const k = 1.0 + 4.0 * sigma0 * sigma0 * s2;
  return std::exp(2.0 * omega0 * omega0 * s2 / k) / k;
}

// Scales a WIRE layer so that sigma0^2 E|z|^2 = 1 for inputs of second moment
// input_m2: the Gaussian envelope then neither vanishes nor saturates.
void wire_init(ComplexLinearImpl &layer, double input_m2, double sigma0)
{
  torch::NoGradGuard no_grad;
  int64_t const in = layer.weight_real.size(1);
  double const s2 = 1.0 / (2.0 * sigma0 * sigma0);
  double const bound = std::sqrt(3.0 * s2 / (double(in) * input_m2));
  layer.weight_real.uniform_(-bound, bound);
  layer.weight_imag.uniform_(-bound, bound);
  layer.bias_real.zero_();
  layer.bias_imag.zero_();
}

} // namespace

void EncodingSpec::validate() const
{
  if (spatial_len() != 480 || temporal_len() != 96) {
    throw std::invalid_argument("EncodingSpec: embedding lengths must be 480 (spatial) and 96 (temporal), got " +
                                std::to_string(spatial_len()) + " and " + std::to_string(temporal_len()));
  }
}

std::string to_string(BranchSet b) { return b == BranchSet::Dual ? "dual" : "positional-only"; }

BranchSet branch_set_from_string(std::string const &s)
{
  if (s == "dual") { return BranchSet::Dual; }
  if (s == "positional-only") { return BranchSet::PositionalOnly; }
  throw std::invalid_argument("unknown branch set '" + s + "'");
}

torch::Tensor encode_spatial(torch::Tensor const &ps, int64_t levels)
{
  if (ps.dim() != 2 || ps.size(1) != 2) { throw std::invalid_argument("encode_spatial: expected [N, 2]"); }
  if (ps.numel() > 0 && ps.abs().max().item<double>() > 1.0 + 1e-6) {
    throw std::invalid_argument("encode_spatial: coordinates must lie in [-1, 1]");
  }
  auto factors = torch::empty({levels}, torch::kDouble);
  auto f = factors.accessor<double, 1>();
  for (int64_t l = 0; l < levels; ++l) { f[l] = std::ldexp(std::numbers::pi, int(l)); }
  auto const arg = ps.to(torch::kDouble).unsqueeze(2) * factors.to(ps.device());
  auto const enc = torch::stack({arg.sin(), arg.cos()}, 3);
  return enc.reshape({ps.size(0), 4 * levels}).to(ps.scalar_type());
}

torch::Tensor encode_temporal(torch::Tensor const &pt, torch::Tensor const &B)
{
  if (pt.dim() != 2 || pt.size(1) != 1 || B.dim() != 2 || B.size(1) != 1) {
    throw std::invalid_argument("encode_temporal: expected P_t [N, 1] and B [F, 1]");
  }
  auto const arg = 2.0 * std::numbers::pi * pt.to(torch::kDouble).matmul(B.to(torch::kDouble).t());
  return torch::cat({arg.cos(), arg.sin()}, 1).to(pt.scalar_type());
}

torch::Tensor make_fourier_matrix(int64_t features, uint64_t seed)
{
  // Box-Muller on a 64-bit Mersenne stream: identical across standard libraries.
  std::mt19937_64 rng(seed);
  auto u01 = [&] { return (double(rng() >> 11) + 0.5) * 0x1.0p-53; };
  auto B = torch::empty({features, 1}, torch::kDouble);
  auto acc = B.accessor<double, 2>();
  for (int64_t i = 0; i < features; i += 2) {
    double const r = std::sqrt(-2.0 * std::log(u01()));
    double const th = 2.0 * std::numbers::pi * u01();
    acc[i][0] = r * std::cos(th);
    if (i + 1 < features) { acc[i + 1][0] = r * std::sin(th); }
  }
  return B.to(torch::kFloat);
}

std::complex<double> wire_activate(std::complex<double> z, double omega0, double sigma0)
{
  return std::exp(std::complex<double>(0.0, omega0) * z) * std::exp(-std::norm(sigma0 * z));
}

torch::Tensor wire_activate_planes(torch::Tensor const &z, double omega0, double sigma0)
{
  auto const parts = z.chunk(2, 1);
  auto const &a = parts[0];
  auto const &b = parts[1];
  auto const envelope = torch::exp(-omega0 * b - sigma0 * sigma0 * (a.square() + b.square()));
  auto const phase = omega0 * a;
  return torch::cat({envelope * phase.cos(), envelope * phase.sin()}, 1);
}

ComplexLinearImpl::ComplexLinearImpl(int64_t in, int64_t out, bool complex_input)
  : complex_input_(complex_input)
{
  double const bound = 1.0 / std::sqrt(double(in));
  weight_real = register_parameter("weight_real", torch::empty({out, in}).uniform_(-bound, bound));
  weight_imag = register_parameter("weight_imag", torch::empty({out, in}).uniform_(-bound, bound));
  bias_real = register_parameter("bias_real", torch::empty({out}).uniform_(-bound, bound));
  bias_imag = register_parameter("bias_imag", torch::empty({out}).uniform_(-bound, bound));
}

torch::Tensor ComplexLinearImpl::forward(torch::Tensor const &x)
{
  auto const bias = torch::cat({bias_real, bias_imag});
  if (!complex_input_) {
    return torch::addmm(bias, x, torch::cat({weight_real, weight_imag}, 0).t());
  }
  // [xr | xi] @ [[Wr^T, Wi^T], [-Wi^T, Wr^T]]
  auto const top = torch::cat({weight_real, weight_imag}, 0).t();
  auto const bottom = torch::cat({-weight_imag, weight_real}, 0).t();
  return torch::addmm(bias, x, torch::cat({top, bottom}, 0));
}

PinrBranchImpl::PinrBranchImpl(int64_t in_len, int64_t resume_len, int64_t coils, BranchSpec const &spec)
  : spec_(spec)
{
  if (spec.mid_layer < 1 || spec.depth < spec.mid_layer + 2) {
    throw std::invalid_argument("PinrBranch: need 1 <= mid_layer <= depth - 2");
  }
  front_layers = register_module("front", torch::nn::ModuleList());
  back_layers = register_module("back", torch::nn::ModuleList());
  front_layers->push_back(ComplexLinear(in_len, spec.hidden, false));
  for (int64_t l = 2; l <= spec.mid_layer; ++l) { front_layers->push_back(ComplexLinear(spec.hidden, spec.hidden, true)); }
  back_layers->push_back(ComplexLinear(resume_len, spec.hidden, false));
  for (int64_t l = spec.mid_layer + 2; l < spec.depth; ++l) {
    back_layers->push_back(ComplexLinear(spec.hidden, spec.hidden, true));
  }
  head = register_module("head", make_head(2 * spec.hidden, 2 * coils));

  double const psi_m2 = wire_output_m2(spec.wire_omega0, spec.wire_sigma0);
  for (size_t i = 0; i < front_layers->size(); ++i) {
    // The positional embedding is sin/cos valued: second moment 1/2.
    wire_init(*front_layers[i]->as<ComplexLinear>(), i == 0 ? 0.5 : psi_m2, spec.wire_sigma0);
  }
  for (size_t i = 0; i < back_layers->size(); ++i) {
    // The resumed input is real (Re of psi, plus the fused block).
    wire_init(*back_layers[i]->as<ComplexLinear>(), i == 0 ? 0.5 * psi_m2 : psi_m2, spec.wire_sigma0);
  }
}

torch::Tensor PinrBranchImpl::front(torch::Tensor const &pe)
{
  auto z = pe;
  for (auto const &layer : *front_layers) {
    z = wire_activate_planes(layer->as<ComplexLinear>()->forward(z), spec_.wire_omega0, spec_.wire_sigma0);
  }
  return z.narrow(1, 0, spec_.hidden);
}

torch::Tensor PinrBranchImpl::back(torch::Tensor const &p_in)
{
  auto z = p_in;
  for (auto const &layer : *back_layers) {
    z = wire_activate_planes(layer->as<ComplexLinear>()->forward(z), spec_.wire_omega0, spec_.wire_sigma0);
  }
  return head->forward(z);
}

KinrBranchImpl::KinrBranchImpl(int64_t in_len, int64_t resume_len, int64_t coils, BranchSpec const &spec)
  : spec_(spec)
{
  if (spec.mid_layer < 1 || spec.depth < spec.mid_layer + 2) {
    throw std::invalid_argument("KinrBranch: need 1 <= mid_layer <= depth - 2");
  }
  front_layers = register_module("front", torch::nn::ModuleList());
  back_layers = register_module("back", torch::nn::ModuleList());
  front_layers->push_back(make_linear(in_len, spec.kinr_width));
  for (int64_t l = 2; l <= spec.mid_layer; ++l) { front_layers->push_back(make_linear(spec.kinr_width, spec.kinr_width)); }
  back_layers->push_back(make_linear(resume_len, spec.hidden));
  for (int64_t l = spec.mid_layer + 2; l < spec.depth; ++l) { back_layers->push_back(make_linear(spec.hidden, spec.hidden)); }
  head = register_module("head", make_head(spec.hidden, 2 * coils));
}

torch::Tensor KinrBranchImpl::front(torch::Tensor const &kf)
{
  auto h = kf;
  for (auto const &layer : *front_layers) {
    h = torch::leaky_relu(layer->as<torch::nn::Linear>()->forward(h), spec_.leaky_slope);
  }
  return h;
}

torch::Tensor KinrBranchImpl::back(torch::Tensor const &k_in)
{
  auto h = k_in;
  for (auto const &layer : *back_layers) {
    h = torch::leaky_relu(layer->as<torch::nn::Linear>()->forward(h), spec_.leaky_slope);
  }
  return head->forward(h);
}

CrossExchangeImpl::CrossExchangeImpl(int64_t pe_len, int64_t kf_len)
{
  k_to_p = register_module("k_to_p", make_linear(kf_len, pe_len));
  p_to_k = register_module("p_to_k", make_linear(pe_len, kf_len));
  torch::NoGradGuard no_grad;
  for (auto &p : parameters()) { p.zero_(); }
}

std::pair<torch::Tensor, torch::Tensor> CrossExchangeImpl::forward(torch::Tensor const &pe, torch::Tensor const &kf)
{
  return {pe + k_to_p->forward(kf), kf + p_to_k->forward(pe)};
}

MidFusionImpl::MidFusionImpl(int64_t p_len, int64_t k_len, int64_t out_len, int64_t n_layers, double slope)
  : slope_(slope)
{
  if (n_layers < 1) { throw std::invalid_argument("MidFusion: need at least one layer"); }
  layers = register_module("layers", torch::nn::ModuleList());
  layers->push_back(make_linear(p_len + k_len, out_len));
  for (int64_t l = 1; l < n_layers; ++l) { layers->push_back(make_linear(out_len, out_len)); }
}

std::pair<torch::Tensor, torch::Tensor> MidFusionImpl::forward(torch::Tensor const &mid_p, torch::Tensor const &mid_k)
{
  auto h = torch::cat({mid_p, mid_k}, 1);
  for (size_t l = 0; l < layers->size(); ++l) {
    h = layers[l]->as<torch::nn::Linear>()->forward(h);
    if (l + 1 < layers->size()) { h = torch::leaky_relu(h, slope_); }
  }
  return {torch::cat({mid_p, h}, 1), torch::cat({mid_k, h}, 1)};
}

KpInrImpl::KpInrImpl(ModelConfig const &cfg)
  : cfg_(cfg)
{
  cfg.encoding.validate();
  auto const &b = cfg.branch;
  int64_t const pe_len = cfg.encoding.total_len();
  fourier_B = register_buffer("fourier_B", make_fourier_matrix(cfg.encoding.temporal_features, cfg.encoding.seed));
  if (dual()) {
    int64_t const kf_len = 2 * cfg.unet.channels;
    unet = register_module("unet", ComplexUNet(cfg.coils, cfg.unet));
    exchange = register_module("exchange", CrossExchange(pe_len, kf_len));
    pinr = register_module("pinr", PinrBranch(pe_len, b.hidden + b.hidden, cfg.coils, b));
    kinr = register_module("kinr", KinrBranch(kf_len, b.kinr_width + b.hidden, cfg.coils, b));
    fusion = register_module("fusion", MidFusion(b.hidden, b.kinr_width, b.hidden, b.fusion_layers, b.leaky_slope));
  } else {
    pinr = register_module("pinr", PinrBranch(pe_len, b.hidden, cfg.coils, b));
  }
}

torch::Tensor KpInrImpl::positional_embedding(torch::Tensor const &norm_coords) const
{
  auto const pt = norm_coords.narrow(1, 0, 1);
  auto const ps = norm_coords.narrow(1, 1, 2);
  return torch::cat({encode_spatial(ps, cfg_.encoding.spatial_levels), encode_temporal(pt, fourier_B)}, 1)
    .to(fourier_B.scalar_type());
}

UNetOutput KpInrImpl::encode_kspace(torch::Tensor const &planes)
{
  if (!dual()) { throw std::logic_error("KpInr: the positional-only model has no U-Net"); }
  return unet->forward(planes);
}

BranchOutputs KpInrImpl::query(UNetOutput const *unet_out, CoordinateSet const &coords)
{
  auto const pe = positional_embedding(coords.norm.to(fourier_B.device()));
  BranchOutputs out;
  if (!dual()) {
    out.y_pv = pinr->back(pinr->front(pe));
  } else {
    if (unet_out == nullptr) { throw std::invalid_argument("KpInr::query: the dual model needs U-Net features"); }
    auto const kf = sample_features(unet_out->decoder_feats, coords.grid);
    auto const [pe_x, kf_x] = exchange->forward(pe, kf);
    auto const mid_p = pinr->front(pe_x);
    auto const mid_k = kinr->front(kf_x);
    auto const [p_in, k_in] = fusion->forward(mid_p, mid_k);
    out.y_pv = pinr->back(p_in);
    out.y_kv = kinr->back(k_in);
    if (!torch::isfinite(out.y_kv).all().item<bool>()) { throw NumericalError("K-INR: non-finite activations"); }
  }
  if (!torch::isfinite(out.y_pv).all().item<bool>()) { throw NumericalError("P-INR: non-finite activations"); }
  return out;
}

BranchOutputs KpInrImpl::forward(KSpaceVolume const &ksp_in, CoordinateSet const &coords)
{
  if (!dual()) { return query(nullptr, coords); }
  auto const planes = kspace_to_planes(ksp_in.data).to(fourier_B.scalar_type());
  auto const feats = encode_kspace(planes);
  return query(&feats, coords);
}

torch::Tensor branch_to_complex(torch::Tensor const &y)
{
  auto const parts = y.chunk(2, 1);
  return torch::complex(parts[0], parts[1]);
}

torch::Tensor complex_to_branch(torch::Tensor const &z) { return torch::cat({torch::real(z), torch::imag(z)}, 1); }

} // namespace kpinr
