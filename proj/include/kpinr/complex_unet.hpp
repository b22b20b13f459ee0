#pragma once

#include "kpinr/core_data.hpp"

#include <torch/torch.h>

#include <vector>

// Complex feature maps are carried as real tensors [T, 2*ch, H, W]: channels
// [0, ch) hold real parts and [ch, 2*ch) imaginary parts. Frames ride in the
// batch dimension.

namespace kpinr {

/// k-space [H,W,C,T] complex -> [T, 2C, H, W] real.
torch::Tensor kspace_to_planes(torch::Tensor const &ksp);
/// Inverse of kspace_to_planes.
torch::Tensor planes_to_kspace(torch::Tensor const &planes);
/// Channel concatenation of two complex feature maps, keeping the real|imag split.
torch::Tensor cat_complex(torch::Tensor const &a, torch::Tensor const &b);

/// Complex convolution through the four-real-convolution identity
/// (W_r + iW_i)(x_r + ix_i), applied as one real convolution with the block
/// weight [[W_r, -W_i], [W_i, W_r]]. Same padding.
class ComplexConv2dImpl : public torch::nn::Module
{
public:
  ComplexConv2dImpl(int64_t in_ch, int64_t out_ch, int64_t kernel, bool bias = true, double gain = 1.0);

  torch::Tensor forward(torch::Tensor const &x);

  int64_t in_ch() const { return in_ch_; }
  int64_t out_ch() const { return out_ch_; }

  torch::Tensor weight_real, weight_imag;
  torch::Tensor bias_real, bias_imag; // undefined when bias is off

private:
  int64_t in_ch_, out_ch_, kernel_;
};
TORCH_MODULE(ComplexConv2d);

/// modReLU: relu(|z| + b) * z / |z|, learnable per-channel b (zero at init).
class ModReLUImpl : public torch::nn::Module
{
public:
  explicit ModReLUImpl(int64_t channels);
  torch::Tensor forward(torch::Tensor const &x);
  torch::Tensor bias;
};
TORCH_MODULE(ModReLU);

enum class TimeDirection
{
  Forward,
  Backward
};

/// h_t = modReLU(conv_in(x_t) + conv_hid(h_{t-1})), h_0 = 0, iterated along
/// the chosen temporal direction. Returns the hidden state of every frame.
class CCrnnImpl : public torch::nn::Module
{
public:
  CCrnnImpl(int64_t channels, int64_t kernel);
  torch::Tensor forward(torch::Tensor const &x, TimeDirection direction);

  ComplexConv2d conv_in{nullptr};
  ComplexConv2d conv_hid{nullptr};
  ModReLU act{nullptr};
};
TORCH_MODULE(CCrnn);

/// Forward and backward C-CRNN, concatenated and fused by a 1x1 complex conv.
class CBcrnnImpl : public torch::nn::Module
{
public:
  CBcrnnImpl(int64_t channels, int64_t kernel, int64_t fusion_kernel);
  torch::Tensor forward(torch::Tensor const &x);

  CCrnn forward_rnn{nullptr};
  CCrnn backward_rnn{nullptr};
  ComplexConv2d fuse{nullptr};
};
TORCH_MODULE(CBcrnn);

struct UNetConfig
{
  int64_t channels = 64;
  int64_t kernel = 3;
  int64_t fusion_kernel = 1;
};

struct UNetOutput
{
  torch::Tensor auto_out;                   ///< [T, 2C, H, W]
  std::vector<torch::Tensor> decoder_feats; ///< per decoder level, [T, 2*channels, H, W]
};

/// Two encoder levels, bottleneck and two decoder levels, all at full
/// resolution. Skip connections concatenate the matching encoder output and
/// fuse it back to `channels` before each decoder block.
class ComplexUNetImpl : public torch::nn::Module
{
public:
  ComplexUNetImpl(int64_t coils, UNetConfig const &cfg);
  UNetOutput forward(torch::Tensor const &planes);

  int64_t coils() const { return coils_; }
  UNetConfig const &config() const { return cfg_; }

  ComplexConv2d head{nullptr};
  CBcrnn enc1{nullptr}, enc2{nullptr}, bottleneck{nullptr}, dec2{nullptr}, dec1{nullptr};
  ComplexConv2d skip2{nullptr}, skip1{nullptr};
  ComplexConv2d tail{nullptr};

private:
  int64_t coils_;
  UNetConfig cfg_;
};
TORCH_MODULE(ComplexUNet);

/// Reads the complex channel vector of each decoder level at every (t, x, y)
/// and sums the levels. Returns real [N, 2*channels] laid out real|imag.
torch::Tensor sample_features(std::vector<torch::Tensor> const &decoder_feats, torch::Tensor const &grid_coords);

} // namespace kpinr
