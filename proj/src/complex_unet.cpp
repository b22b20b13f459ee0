#include "kpinr/complex_unet.hpp"

#include <cmath>

namespace kpinr {

namespace F = torch::nn::functional;

torch::Tensor kspace_to_planes(torch::Tensor const &ksp)
{
  auto const k = ksp.permute({3, 2, 0, 1});
  return torch::cat({torch::real(k), torch::imag(k)}, 1).contiguous();
}

torch::Tensor planes_to_kspace(torch::Tensor const &planes)
{
  auto const parts = planes.chunk(2, 1);
  return torch::complex(parts[0], parts[1]).permute({2, 3, 1, 0}).contiguous();
}

torch::Tensor cat_complex(torch::Tensor const &a, torch::Tensor const &b)
{
  auto const pa = a.chunk(2, 1);
  auto const pb = b.chunk(2, 1);
  return torch::cat({pa[0], pb[0], pa[1], pb[1]}, 1);
}

ComplexConv2dImpl::ComplexConv2dImpl(int64_t in_ch, int64_t out_ch, int64_t kernel, bool bias, double gain)
  : in_ch_(in_ch)
  , out_ch_(out_ch)
  , kernel_(kernel)
{
  if (in_ch < 1 || out_ch < 1 || kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("ComplexConv2d: channels must be >= 1 and the kernel odd");
  }
  // Var(out) = 2 * fan_in * Var(w) * Var(x) under the four-real-conv identity.
  double const fan_in = double(in_ch * kernel * kernel);
  double const bound = gain * std::sqrt(3.0 / (2.0 * fan_in));
  weight_real = register_parameter("weight_real", torch::empty({out_ch, in_ch, kernel, kernel}).uniform_(-bound, bound));
  weight_imag = register_parameter("weight_imag", torch::empty({out_ch, in_ch, kernel, kernel}).uniform_(-bound, bound));
  if (bias) {
    bias_real = register_parameter("bias_real", torch::zeros({out_ch}));
    bias_imag = register_parameter("bias_imag", torch::zeros({out_ch}));
  }
}

torch::Tensor ComplexConv2dImpl::forward(torch::Tensor const &x)
{
  if (x.dim() != 4 || x.size(1) != 2 * in_ch_) {
    throw std::invalid_argument("ComplexConv2d: expected [B, " + std::to_string(2 * in_ch_) + ", H, W] input");
  }
  auto const top = torch::cat({weight_real, -weight_imag}, 1);
  auto const bottom = torch::cat({weight_imag, weight_real}, 1);
  auto const weight = torch::cat({top, bottom}, 0);
  auto opts = F::Conv2dFuncOptions().padding(kernel_ / 2);
  if (bias_real.defined()) { opts = opts.bias(torch::cat({bias_real, bias_imag})); }
  return F::conv2d(x, weight, opts);
}

ModReLUImpl::ModReLUImpl(int64_t channels) { bias = register_parameter("bias", torch::zeros({channels})); }

torch::Tensor ModReLUImpl::forward(torch::Tensor const &x)
{
  auto const parts = x.chunk(2, 1);
  auto const mag = (parts[0].square() + parts[1].square() + 1e-12).sqrt();
  auto const scale = torch::relu(mag + bias.view({1, -1, 1, 1})) / mag;
  return torch::cat({parts[0] * scale, parts[1] * scale}, 1);
}

CCrnnImpl::CCrnnImpl(int64_t channels, int64_t kernel)
{
  conv_in = register_module("conv_in", ComplexConv2d(channels, channels, kernel, true));
  // No bias on the hidden path: h_0 = 0 must contribute nothing.
  conv_hid = register_module("conv_hid", ComplexConv2d(channels, channels, kernel, false, 1.0 / std::sqrt(2.0)));
  act = register_module("act", ModReLU(channels));
}

torch::Tensor CCrnnImpl::forward(torch::Tensor const &x, TimeDirection direction)
{
  int64_t const T = x.size(0);
  auto const drive = conv_in->forward(x);
  std::vector<torch::Tensor> hidden(T);
  torch::Tensor h;
  for (int64_t step = 0; step < T; ++step) {
    int64_t const t = direction == TimeDirection::Forward ? step : T - 1 - step;
    auto pre = drive.narrow(0, t, 1);
    if (h.defined()) { pre = pre + conv_hid->forward(h); }
    h = act->forward(pre);
    hidden[t] = h;
  }
  return torch::cat(hidden, 0);
}

CBcrnnImpl::CBcrnnImpl(int64_t channels, int64_t kernel, int64_t fusion_kernel)
{
  forward_rnn = register_module("forward_rnn", CCrnn(channels, kernel));
  backward_rnn = register_module("backward_rnn", CCrnn(channels, kernel));
  fuse = register_module("fuse", ComplexConv2d(2 * channels, channels, fusion_kernel, true));
}

torch::Tensor CBcrnnImpl::forward(torch::Tensor const &x)
{
  auto const f = forward_rnn->forward(x, TimeDirection::Forward);
  auto const b = backward_rnn->forward(x, TimeDirection::Backward);
  return fuse->forward(cat_complex(f, b));
}

ComplexUNetImpl::ComplexUNetImpl(int64_t coils, UNetConfig const &cfg)
  : coils_(coils)
  , cfg_(cfg)
{
  if (coils < 1) { throw std::invalid_argument("ComplexUNet: coils must be >= 1"); }
  int64_t const ch = cfg.channels;
  head = register_module("head", ComplexConv2d(coils, ch, cfg.kernel));
  enc1 = register_module("enc1", CBcrnn(ch, cfg.kernel, cfg.fusion_kernel));
  enc2 = register_module("enc2", CBcrnn(ch, cfg.kernel, cfg.fusion_kernel));
  bottleneck = register_module("bottleneck", CBcrnn(ch, cfg.kernel, cfg.fusion_kernel));
  skip2 = register_module("skip2", ComplexConv2d(2 * ch, ch, cfg.fusion_kernel));
  dec2 = register_module("dec2", CBcrnn(ch, cfg.kernel, cfg.fusion_kernel));
  skip1 = register_module("skip1", ComplexConv2d(2 * ch, ch, cfg.fusion_kernel));
  dec1 = register_module("dec1", CBcrnn(ch, cfg.kernel, cfg.fusion_kernel));
  tail = register_module("tail", ComplexConv2d(ch, coils, cfg.kernel));
}

UNetOutput ComplexUNetImpl::forward(torch::Tensor const &planes)
{
  if (planes.dim() != 4 || planes.size(1) != 2 * coils_) {
    throw std::invalid_argument("ComplexUNet: expected [T, 2C, H, W] input");
  }
  auto const e1 = enc1->forward(head->forward(planes));
  auto const e2 = enc2->forward(e1);
  auto const mid = bottleneck->forward(e2);
  auto const d2 = dec2->forward(skip2->forward(cat_complex(mid, e2)));
  auto const d1 = dec1->forward(skip1->forward(cat_complex(d2, e1)));
  UNetOutput out{tail->forward(d1), {d2, d1}};
  if (!torch::isfinite(out.auto_out).all().item<bool>()) {
    throw NumericalError("ComplexUNet: non-finite activations");
  }
  return out;
}

torch::Tensor sample_features(std::vector<torch::Tensor> const &decoder_feats, torch::Tensor const &grid_coords)
{
  if (decoder_feats.empty()) { throw std::invalid_argument("sample_features: no decoder levels"); }
  auto summed = decoder_feats.front();
  for (size_t i = 1; i < decoder_feats.size(); ++i) { summed = summed + decoder_feats[i]; }
  int64_t const T = summed.size(0), H = summed.size(2), W = summed.size(3);
  auto const t = grid_coords.select(1, 0), x = grid_coords.select(1, 1), y = grid_coords.select(1, 2);
  bool const in_bounds = (t.ge(0) & t.lt(T) & x.ge(0) & x.lt(H) & y.ge(0) & y.lt(W)).all().item<bool>();
  if (!in_bounds) { throw std::out_of_range("sample_features: coordinate outside the feature grid"); }
  auto const flat = summed.permute({0, 2, 3, 1}).reshape({T * H * W, summed.size(1)});
  auto const index = (t * H + x) * W + y;
  return flat.index_select(0, index.to(flat.device()));
}

} // namespace kpinr
