#pragma once

#include "kpinr/complex_unet.hpp"
#include "kpinr/core_data.hpp"

#include <torch/torch.h>

#include <complex>
#include <optional>

namespace kpinr {

/// NeRF spatial levels and random-Fourier temporal features. Lengths are fixed
/// at 2*2*120 = 480 and 2*48 = 96; construction rejects anything else.
struct EncodingSpec
{
  int64_t spatial_levels = 120;
  int64_t temporal_features = 48;
  uint64_t seed = 0;

  int64_t spatial_len() const { return 4 * spatial_levels; }
  int64_t temporal_len() const { return 2 * temporal_features; }
  int64_t total_len() const { return spatial_len() + temporal_len(); }
  void validate() const;
};

struct BranchSpec
{
  int64_t depth = 7;          ///< affine layers per branch, input and output included
  int64_t mid_layer = 3;      ///< fusion tap: output of this layer
  int64_t hidden = 512;       ///< P-INR width, K-INR width after fusion, fused width
  int64_t kinr_width = 64;    ///< K-INR width before fusion
  int64_t fusion_layers = 2;  ///< depth of the mid-network fusion MLP
  double wire_omega0 = 10.0;
  double wire_sigma0 = 5.0;
  double leaky_slope = 0.01;
};

enum class BranchSet
{
  Dual,          ///< KP-INR
  PositionalOnly ///< P-INR ablation: no U-Net, K-INR, exchange or fusion
};

std::string to_string(BranchSet b);
BranchSet branch_set_from_string(std::string const &s);

struct ModelConfig
{
  int64_t coils = 1;
  EncodingSpec encoding;
  BranchSpec branch;
  UNetConfig unet;
  BranchSet branches = BranchSet::Dual;
};

/// gamma(P_s) for P_s real [N, 2] in [-1, 1] -> [N, 4L]. Layout per coordinate
/// (x first, then y), per level l = 0..L-1: sin(2^l pi p), cos(2^l pi p).
/// Evaluated in double precision.
torch::Tensor encode_spatial(torch::Tensor const &ps, int64_t levels);

/// gamma(P_t) for P_t real [N, 1] and B real [F, 1] -> [N, 2F]: the cos block
/// then the sin block.
torch::Tensor encode_temporal(torch::Tensor const &pt, torch::Tensor const &B);

/// Deterministic N(0,1) matrix [features, 1] drawn from `seed`.
torch::Tensor make_fourier_matrix(int64_t features, uint64_t seed);

/// psi(z) = exp(i omega0 z) exp(-|sigma0 z|^2)
std::complex<double> wire_activate(std::complex<double> z, double omega0, double sigma0);
/// Elementwise psi on complex planes [N, 2ch] (real | imag).
torch::Tensor wire_activate_planes(torch::Tensor const &z, double omega0, double sigma0);

/// Affine map with complex weights producing complex planes [N, 2*out].
/// With real input [N, in] the map lifts to complex; with complex input
/// [N, 2*in] it is the full complex-linear map.
class ComplexLinearImpl : public torch::nn::Module
{
public:
  ComplexLinearImpl(int64_t in, int64_t out, bool complex_input);
  torch::Tensor forward(torch::Tensor const &x);

  torch::Tensor weight_real, weight_imag, bias_real, bias_imag;

private:
  bool complex_input_;
};
TORCH_MODULE(ComplexLinear);

/// WIRE MLP. Layers 1..depth-1 are complex-weighted affine maps followed by
/// psi; the last layer maps (real | imag) of its complex input to [N, 2C]
/// through a real affine map. The mid tap is Re of the layer `mid_layer` activation.
class PinrBranchImpl : public torch::nn::Module
{
public:
  PinrBranchImpl(int64_t in_len, int64_t resume_len, int64_t coils, BranchSpec const &spec);

  /// Layers 1..mid_layer on the positional embedding; returns the real mid tap [N, hidden].
  torch::Tensor front(torch::Tensor const &pe);
  /// Remaining layers on the (possibly fused) real input [N, resume_len].
  torch::Tensor back(torch::Tensor const &p_in);

  torch::nn::ModuleList front_layers, back_layers;
  torch::nn::Linear head{nullptr};

private:
  BranchSpec spec_;
};
TORCH_MODULE(PinrBranch);

/// Leaky-ReLU MLP over k-space features: width kinr_width up to the mid tap,
/// hidden after fusion, [N, 2C] out.
class KinrBranchImpl : public torch::nn::Module
{
public:
  KinrBranchImpl(int64_t in_len, int64_t resume_len, int64_t coils, BranchSpec const &spec);

  torch::Tensor front(torch::Tensor const &kf);
  torch::Tensor back(torch::Tensor const &k_in);

  torch::nn::ModuleList front_layers, back_layers;
  torch::nn::Linear head{nullptr};

private:
  BranchSpec spec_;
};
TORCH_MODULE(KinrBranch);

/// Input-level exchange: pe' = pe + Lin(kf), kf' = kf + Lin(pe). Zero-initialized.
class CrossExchangeImpl : public torch::nn::Module
{
public:
  CrossExchangeImpl(int64_t pe_len, int64_t kf_len);
  std::pair<torch::Tensor, torch::Tensor> forward(torch::Tensor const &pe, torch::Tensor const &kf);

  torch::nn::Linear k_to_p{nullptr};
  torch::nn::Linear p_to_k{nullptr};
};
TORCH_MODULE(CrossExchange);

/// fused = MLP(concat(mid_p, mid_k)); returns (concat(mid_p, fused), concat(mid_k, fused)).
class MidFusionImpl : public torch::nn::Module
{
public:
  MidFusionImpl(int64_t p_len, int64_t k_len, int64_t out_len, int64_t layers, double slope);
  std::pair<torch::Tensor, torch::Tensor> forward(torch::Tensor const &mid_p, torch::Tensor const &mid_k);

  torch::nn::ModuleList layers;

private:
  double slope_;
};
TORCH_MODULE(MidFusion);

struct BranchOutputs
{
  torch::Tensor y_kv; ///< [N, 2C]; undefined for the positional-only ablation
  torch::Tensor y_pv; ///< [N, 2C]
};

/// The dual-branch coordinate network including its complex U-Net.
class KpInrImpl : public torch::nn::Module
{
public:
  explicit KpInrImpl(ModelConfig const &cfg);

  bool dual() const { return cfg_.branches == BranchSet::Dual; }
  ModelConfig const &config() const { return cfg_; }

  /// Positional embedding [N, 576] of normalized coordinates [N, 3] (t, x, y).
  torch::Tensor positional_embedding(torch::Tensor const &norm_coords) const;

  /// U-Net pass over the current k-space input planes [T, 2C, H, W].
  UNetOutput encode_kspace(torch::Tensor const &planes);

  /// Branch outputs at `coords`. `unet` is required for the dual model.
  BranchOutputs query(UNetOutput const *unet, CoordinateSet const &coords);

  /// Full composition: U-Net pass, feature sampling, exchange, both branches.
  BranchOutputs forward(KSpaceVolume const &ksp_in, CoordinateSet const &coords);

  ComplexUNet unet{nullptr};
  PinrBranch pinr{nullptr};
  KinrBranch kinr{nullptr};
  CrossExchange exchange{nullptr};
  MidFusion fusion{nullptr};
  torch::Tensor fourier_B;

private:
  ModelConfig cfg_;
};
TORCH_MODULE(KpInr);

/// Complex [N, C] from the real [N, 2C] branch layout (first C real, last C imaginary).
torch::Tensor branch_to_complex(torch::Tensor const &y);
/// Inverse of branch_to_complex.
torch::Tensor complex_to_branch(torch::Tensor const &z);

} // namespace kpinr
