#pragma once

#include "kpinr/core_data.hpp"
#include "kpinr/kpinr_model.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <vector>

namespace kpinr {

struct LossWeights
{
  double kv = 1.0;      ///< K-INR branch data term
  double pv = 1.0;      ///< P-INR branch data term
  double ae_acq = 0.05; ///< auto-encoding, acquired region
  double ae_zf = 0.025; ///< auto-encoding, zero-filled region
  double hdr_eps = 1e-2;

  void validate() const;
};

struct TrainSchedule
{
  int64_t total_epochs = 6000;
  int64_t refine_every = 500;
  double lr = 5e-5;
  double lr_decay = 0.95;
  int64_t decay_every = 500;
  double lr_min = 2e-6;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t batch_coords = 65536;
  int64_t inference_chunk = 16384;
  uint64_t seed = 0;

  void validate() const;
};

/// max(lr * decay^floor(epoch / decay_every), lr_min) for a 0-based epoch index.
double lr_at(int64_t epoch, TrainSchedule const &sched);

/// Mean over points and coils of |(pred - target) / (|sg(pred)| + eps)|^2 with
/// pred/target in the [N, 2C] real|imag layout; sg stops the gradient.
torch::Tensor hdr_loss(torch::Tensor const &pred, torch::Tensor const &target, double eps);

/// Mean of |a - b|^2 over the entries of `region` [H, W, T] and all coils, a/b complex [H, W, C, T].
torch::Tensor masked_mse(torch::Tensor const &auto_out, torch::Tensor const &target, torch::Tensor const &region);

struct LossTerms
{
  torch::Tensor total;
  double kv = 0.0, pv = 0.0, ae_acq = 0.0, ae_zf = 0.0;
  double total_value = 0.0;
};

/// Weighted four-term objective. Components whose inputs are undefined (the
/// positional-only ablation has no y_kv and no auto-encoder) contribute 0.
LossTerms total_loss(BranchOutputs const &outs, torch::Tensor const &y_meas, torch::Tensor const &auto_out,
                     torch::Tensor const &ksp_in, SamplingMask const &mask, LossWeights const &w);

/// out = mask ? meas : pred, selected per entry (sampled entries are copied bit-exactly).
KSpaceVolume hard_dc(KSpaceVolume const &pred, KSpaceVolume const &meas, SamplingMask const &mask);

struct LossRecord
{
  int64_t epoch = 0;
  double lr = 0.0;
  double total = 0.0, kv = 0.0, pv = 0.0, ae_acq = 0.0, ae_zf = 0.0;
};

struct RefinedKSpace
{
  KSpaceVolume ksp;
  int64_t generation = 0; ///< 0 is the zero-filled input
  int64_t epoch = 0;      ///< boundary epoch that produced it
};

struct TrainerConfig
{
  ModelConfig model;
  LossWeights weights;
  TrainSchedule schedule;
};

/// P-INR ablation of a KP-INR configuration: positional branch only, no auto-encoding terms.
TrainerConfig positional_only(TrainerConfig cfg);

/// Owns the model, optimizer and the current U-Net input for one scan.
/// The measured data is read only at mask = 1 locations.
class Trainer
{
public:
  /// `measured` may hold anything (including NaN) at unacquired locations.
  Trainer(TrainerConfig cfg, KSpaceVolume const &measured, SamplingMask mask);

  /// One optimizer step on the batch assigned to `epoch` (1-based).
  LossRecord optimize_epoch(int64_t epoch);

  /// Evaluates the frozen model on the full grid, averages branches and applies hard DC.
  KSpaceVolume inference_full_grid(int64_t chunk = 0);

  /// Replaces the U-Net input by a refined generation.
  void set_kspace_input(RefinedKSpace const &refined);

  /// Sampled coordinates of the batch for `epoch`.
  CoordinateSet batch_for_epoch(int64_t epoch) const;

  KSpaceVolume const &measured() const { return measured_; }
  KSpaceVolume const &kspace_input() const { return ksp_in_; }
  SamplingMask const &mask() const { return mask_; }
  CoordinateSet const &sampled() const { return sampled_; }
  TrainerConfig const &config() const { return cfg_; }
  KpInr &model() { return model_; }
  torch::optim::AdamW &optimizer() { return *optimizer_; }
  int64_t generation() const { return generation_; }

  void save_checkpoint(std::filesystem::path const &path, int64_t epoch) const;
  /// Returns the epoch stored in the checkpoint.
  int64_t load_checkpoint(std::filesystem::path const &path);

private:
  torch::Tensor batch_indices(int64_t epoch) const;

  TrainerConfig cfg_;
  KSpaceVolume measured_; ///< zero-filled, unit-max normalized
  SamplingMask mask_;
  CoordinateSet sampled_;
  torch::Tensor y_sampled_; ///< [N, 2C] measured values at sampled_
  KSpaceVolume ksp_in_;
  int64_t generation_ = 0;
  KpInr model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
};

/// Hooks for persisting progress; every method has a no-op default.
class RunObserver
{
public:
  virtual ~RunObserver() = default;
  virtual void on_loss(LossRecord const &) {}
  virtual void on_refined(RefinedKSpace const &) {}
  virtual void on_boundary(Trainer const &, int64_t /*epoch*/) {}
};

struct ReconstructionResult
{
  CineImageSeries image;             ///< in ingest units
  RefinedKSpace final_kspace;        ///< normalized units
  std::vector<LossRecord> losses;
  std::vector<int64_t> refine_epochs;
};

/// Alternating optimize / refine loop. `measured` is undersampled or full
/// k-space; only mask = 1 entries are used. Optionally resumes from a checkpoint.
ReconstructionResult run_reconstruction(TrainerConfig const &cfg, KSpaceVolume const &measured,
                                        SamplingMask const &mask, CoilSensitivityMaps const &csm,
                                        RunObserver *observer = nullptr,
                                        std::filesystem::path const &resume_from = {});

} // namespace kpinr
