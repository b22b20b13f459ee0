#include "kpinr/training.hpp"

#include "kpinr/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace kpinr {

void LossWeights::validate() const
{
  if (kv < 0 || pv < 0 || ae_acq < 0 || ae_zf < 0) { throw std::invalid_argument("LossWeights: weights must be >= 0"); }
  if (!(hdr_eps > 0)) { throw std::invalid_argument("LossWeights: hdr_eps must be > 0"); }
}

void TrainSchedule::validate() const
{
  if (total_epochs < 0) { throw std::invalid_argument("TrainSchedule: total_epochs must be >= 0"); }
  if (refine_every < 1 || decay_every < 1) { throw std::invalid_argument("TrainSchedule: intervals must be >= 1"); }
  if (decay_every % refine_every != 0) {
    throw std::invalid_argument("TrainSchedule: refine_every must divide the decay interval");
  }
  if (lr < 0 || lr_min < 0 || !(lr_decay > 0) || weight_decay < 0) {
    throw std::invalid_argument("TrainSchedule: invalid learning-rate settings");
  }
  if (batch_coords < 1 || inference_chunk < 1) { throw std::invalid_argument("TrainSchedule: batch sizes must be >= 1"); }
}

double lr_at(int64_t epoch, TrainSchedule const &sched)
{
  if (epoch < 0) { throw std::invalid_argument("lr_at: epoch must be >= 0"); }
  double const decayed = sched.lr * std::pow(sched.lr_decay, double(epoch / sched.decay_every));
  return std::max(decayed, sched.lr_min);
}

torch::Tensor hdr_loss(torch::Tensor const &pred, torch::Tensor const &target, double eps)
{
  if (!(eps > 0)) { throw std::invalid_argument("hdr_loss: eps must be > 0"); }
  if (!pred.sizes().equals(target.sizes()) || pred.dim() != 2 || pred.size(1) % 2 != 0) {
    throw std::invalid_argument("hdr_loss: expected matching [N, 2C] tensors");
  }
  auto const p = pred.chunk(2, 1);
  auto const y = target.chunk(2, 1);
  auto const denom = ((p[0].square() + p[1].square()).sqrt() + eps).detach();
  auto const residual = (p[0] - y[0]).square() + (p[1] - y[1]).square();
  return (residual / denom.square()).mean();
}

torch::Tensor masked_mse(torch::Tensor const &auto_out, torch::Tensor const &target, torch::Tensor const &region)
{
  if (!auto_out.sizes().equals(target.sizes()) || auto_out.dim() != 4 || region.dim() != 3 ||
      region.size(0) != auto_out.size(0) || region.size(1) != auto_out.size(1) || region.size(2) != auto_out.size(3)) {
    throw std::invalid_argument("masked_mse: shape mismatch");
  }
  auto const count = region.sum().item<int64_t>();
  if (count == 0) { throw std::invalid_argument("masked_mse: empty region"); }
  auto const sel = region.unsqueeze(2).expand_as(auto_out);
  auto const diff = (auto_out - target).abs().square();
  auto const zero = torch::zeros({}, diff.options());
  return torch::where(sel, diff, zero).sum() / double(count * auto_out.size(2));
}

LossTerms total_loss(BranchOutputs const &outs, torch::Tensor const &y_meas, torch::Tensor const &auto_out,
                     torch::Tensor const &ksp_in, SamplingMask const &mask, LossWeights const &w)
{
  w.validate();
  LossTerms terms;
  auto total = torch::zeros({}, y_meas.options());
  auto add = [&](torch::Tensor const &c, double weight, double &slot) {
    slot = c.item<double>();
    if (weight != 0.0) { total = total + weight * c; }
  };
  if (outs.y_kv.defined()) { add(hdr_loss(outs.y_kv, y_meas, w.hdr_eps), w.kv, terms.kv); }
  if (outs.y_pv.defined()) { add(hdr_loss(outs.y_pv, y_meas, w.hdr_eps), w.pv, terms.pv); }
  if (auto_out.defined()) {
    auto const acquired = mask.mask;
    auto const target = ksp_in.to(auto_out.scalar_type());
    if (acquired.any().item<bool>()) { add(masked_mse(auto_out, target, acquired), w.ae_acq, terms.ae_acq); }
    auto const unacquired = acquired.logical_not();
    if (unacquired.any().item<bool>()) { add(masked_mse(auto_out, target, unacquired), w.ae_zf, terms.ae_zf); }
  }
  terms.total = total;
  terms.total_value = total.item<double>();
  return terms;
}

KSpaceVolume hard_dc(KSpaceVolume const &pred, KSpaceVolume const &meas, SamplingMask const &mask)
{
  if (!pred.data.sizes().equals(meas.data.sizes()) || pred.H() != mask.H() || pred.W() != mask.W() ||
      pred.T() != mask.T()) {
    throw std::invalid_argument("hard_dc: shape mismatch");
  }
  KSpaceVolume out = meas;
  out.data = torch::where(mask.mask.unsqueeze(2), meas.data, pred.data.to(meas.data.scalar_type()));
  return out;
}

TrainerConfig positional_only(TrainerConfig cfg)
{
  cfg.model.branches = BranchSet::PositionalOnly;
  cfg.weights.ae_acq = 0.0;
  cfg.weights.ae_zf = 0.0;
  return cfg;
}

namespace {

uint64_t splitmix64(uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void set_lr(torch::optim::AdamW &opt, double lr)
{
  for (auto &group : opt.param_groups()) { static_cast<torch::optim::AdamWOptions &>(group.options()).lr(lr); }
}

} // namespace

Trainer::Trainer(TrainerConfig cfg, KSpaceVolume const &measured, SamplingMask mask)
  : cfg_(std::move(cfg))
  , mask_(std::move(mask))
{
  cfg_.weights.validate();
  cfg_.schedule.validate();
  mask_.validate();
  if (measured.data.dim() != 4 || measured.H() != mask_.H() || measured.W() != mask_.W() || measured.T() != mask_.T()) {
    throw std::invalid_argument("Trainer: measured k-space and mask disagree in shape");
  }
  if (cfg_.model.coils != measured.C()) { throw std::invalid_argument("Trainer: model coil count differs from data"); }
  measured_ = normalize_kspace(zero_fill(measured, mask_));
  measured_.validate();
  ksp_in_ = measured_;

  sampled_ = mask_to_coordinates(mask_);
  if (sampled_.count() == 0) { throw std::invalid_argument("Trainer: mask has no sampled locations"); }
  auto const g = sampled_.grid;
  auto const values = measured_.data.index({g.select(1, 1), g.select(1, 2), torch::indexing::Slice(), g.select(1, 0)});
  y_sampled_ = complex_to_branch(values).to(torch::kFloat);

  torch::manual_seed(splitmix64(cfg_.schedule.seed ^ 0x6d6f64656cULL));
  model_ = KpInr(cfg_.model);
  auto const &s = cfg_.schedule;
  optimizer_ = std::make_unique<torch::optim::AdamW>(
    model_->parameters(), torch::optim::AdamWOptions(s.lr).betas({s.beta1, s.beta2}).eps(s.adam_eps).weight_decay(s.weight_decay));
}

torch::Tensor Trainer::batch_indices(int64_t epoch) const
{
  int64_t const N = sampled_.count();
  int64_t const B = std::min(cfg_.schedule.batch_coords, N);
  int64_t const per_pass = (N + B - 1) / B;
  int64_t const pass = (epoch - 1) / per_pass;
  int64_t const slot = (epoch - 1) % per_pass;

  std::vector<int64_t> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  if (B < N) {
    std::mt19937_64 rng(splitmix64(cfg_.schedule.seed ^ splitmix64(uint64_t(pass))));
    for (int64_t i = N - 1; i > 0; --i) { std::swap(perm[i], perm[rng() % uint64_t(i + 1)]); }
  }
  int64_t const begin = slot * B;
  int64_t const end = std::min(begin + B, N);
  return torch::tensor(std::vector<int64_t>(perm.begin() + begin, perm.begin() + end), torch::kLong);
}

CoordinateSet Trainer::batch_for_epoch(int64_t epoch) const
{
  auto const idx = batch_indices(epoch);
  return {sampled_.grid.index_select(0, idx), sampled_.norm.index_select(0, idx)};
}

LossRecord Trainer::optimize_epoch(int64_t epoch)
{
  if (epoch < 1) { throw std::invalid_argument("optimize_epoch: epochs are 1-based"); }
  auto const idx = batch_indices(epoch);
  CoordinateSet const batch{sampled_.grid.index_select(0, idx), sampled_.norm.index_select(0, idx)};
  double const lr = lr_at(epoch - 1, cfg_.schedule);
  set_lr(*optimizer_, lr);
  optimizer_->zero_grad();
  model_->train();

  UNetOutput unet_out;
  torch::Tensor auto_out;
  if (model_->dual()) {
    unet_out = model_->encode_kspace(kspace_to_planes(ksp_in_.data).to(torch::kFloat));
    auto_out = planes_to_kspace(unet_out.auto_out);
  }
  auto const outs = model_->query(model_->dual() ? &unet_out : nullptr, batch);
  // Targets come only from the sampled list, never from unacquired locations.
  auto const terms = total_loss(outs, y_sampled_.index_select(0, idx), auto_out, ksp_in_.data, mask_, cfg_.weights);
  if (!std::isfinite(terms.total_value)) {
    throw NumericalError("optimize_epoch: non-finite loss at epoch " + std::to_string(epoch));
  }
  terms.total.backward();
  optimizer_->step();
  return {epoch, lr, terms.total_value, terms.kv, terms.pv, terms.ae_acq, terms.ae_zf};
}

KSpaceVolume Trainer::inference_full_grid(int64_t chunk)
{
  if (chunk <= 0) { chunk = cfg_.schedule.inference_chunk; }
  torch::NoGradGuard no_grad;
  model_->eval();
  int64_t const H = measured_.H(), W = measured_.W(), C = measured_.C(), T = measured_.T();
  UNetOutput unet_out;
  if (model_->dual()) { unet_out = model_->encode_kspace(kspace_to_planes(ksp_in_.data).to(torch::kFloat)); }
  auto const grid = full_grid_coordinates(H, W, T);
  int64_t const N = grid.count();

  auto predict = [&](int64_t step) {
    std::vector<torch::Tensor> parts;
    for (int64_t begin = 0; begin < N; begin += step) {
      int64_t const len = std::min(step, N - begin);
      CoordinateSet const part{grid.grid.narrow(0, begin, len), grid.norm.narrow(0, begin, len)};
      auto const outs = model_->query(model_->dual() ? &unet_out : nullptr, part);
      parts.push_back(outs.y_kv.defined() ? (outs.y_kv + outs.y_pv) / 2.0 : outs.y_pv);
    }
    return torch::cat(parts, 0);
  };
  torch::Tensor pred;
  for (;;) {
    try {
      pred = predict(chunk);
      break;
    } catch (c10::OutOfMemoryError const &) {
      if (chunk == 1) { throw; }
      chunk = std::max<int64_t>(1, chunk / 2);
    }
  }
  // Grid order is (t, x, y) lexicographic.
  auto const values = branch_to_complex(pred).reshape({T, H, W, C}).permute({1, 2, 3, 0});
  KSpaceVolume predicted = measured_;
  predicted.data = values.to(measured_.data.scalar_type()).contiguous();
  return hard_dc(predicted, measured_, mask_);
}

void Trainer::set_kspace_input(RefinedKSpace const &refined)
{
  if (!refined.ksp.data.sizes().equals(measured_.data.sizes())) {
    throw std::invalid_argument("set_kspace_input: shape mismatch");
  }
  ksp_in_ = refined.ksp;
  generation_ = refined.generation;
}

void Trainer::save_checkpoint(std::filesystem::path const &path, int64_t epoch) const
{
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive model_archive;
  model_->save(model_archive);
  archive.write("model", model_archive);
  torch::serialize::OutputArchive optim_archive;
  optimizer_->save(optim_archive);
  archive.write("optimizer", optim_archive);
  archive.write("ksp_in", torch::view_as_real(ksp_in_.data).contiguous());
  archive.write("epoch", torch::tensor(epoch, torch::kLong));
  archive.write("generation", torch::tensor(generation_, torch::kLong));
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

int64_t Trainer::load_checkpoint(std::filesystem::path const &path)
{
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  model_->load(model_archive);
  torch::serialize::InputArchive optim_archive;
  archive.read("optimizer", optim_archive);
  optimizer_->load(optim_archive);
  torch::Tensor ksp, epoch, generation;
  archive.read("ksp_in", ksp);
  archive.read("epoch", epoch);
  archive.read("generation", generation);
  ksp_in_ = measured_;
  ksp_in_.data = torch::view_as_complex(ksp).clone();
  generation_ = generation.item<int64_t>();
  return epoch.item<int64_t>();
}

ReconstructionResult run_reconstruction(TrainerConfig const &cfg, KSpaceVolume const &measured,
                                        SamplingMask const &mask, CoilSensitivityMaps const &csm,
                                        RunObserver *observer, std::filesystem::path const &resume_from)
{
  RunObserver fallback;
  RunObserver &obs = observer != nullptr ? *observer : fallback;
  Trainer trainer(cfg, measured, mask);
  int64_t start = 1;
  if (!resume_from.empty()) { start = trainer.load_checkpoint(resume_from) + 1; }

  ReconstructionResult result;
  if (start == 1) { obs.on_refined({trainer.kspace_input(), 0, 0}); }
  int64_t const total = cfg.schedule.total_epochs;
  int64_t last_refined = start - 1;
  for (int64_t epoch = start; epoch <= total; ++epoch) {
    auto const record = trainer.optimize_epoch(epoch);
    result.losses.push_back(record);
    obs.on_loss(record);
    if (epoch % cfg.schedule.refine_every == 0) {
      RefinedKSpace const refined{trainer.inference_full_grid(), trainer.generation() + 1, epoch};
      trainer.set_kspace_input(refined);
      result.refine_epochs.push_back(epoch);
      last_refined = epoch;
      obs.on_refined(refined);
      obs.on_boundary(trainer, epoch);
    }
  }
  if (total > 0 && last_refined != total) {
    RefinedKSpace const refined{trainer.inference_full_grid(), trainer.generation() + 1, total};
    trainer.set_kspace_input(refined);
    obs.on_refined(refined);
  }
  result.final_kspace = {trainer.kspace_input(), trainer.generation(), total};
  auto const &k = trainer.kspace_input();
  auto const ingest = (k.data.to(torch::kComplexDouble) * k.norm_scale).to(torch::kComplexFloat);
  result.image = kspace_to_image(ingest, csm);
  return result;
}

} // namespace kpinr
