#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kpinr {

/// Keeps rows [floor(H/4), floor(3H/4)) of a real [H, W, T] series.
torch::Tensor crop_eval_region(torch::Tensor const &img);

/// 10 log10(max(ref)^2 / MSE(x, ref)) over the whole series; +inf when x == ref.
double psnr(torch::Tensor const &x, torch::Tensor const &ref);

/// Gaussian-window SSIM (7x7, sigma 1.5, K1 0.01, K2 0.03, range max(ref)),
/// valid-region mean per frame, averaged over frames.
double ssim(torch::Tensor const &x, torch::Tensor const &ref);

/// Feature stages consumed by the DISTS combination rule. A stage is [K, h, w].
class DistsBackend
{
public:
  virtual ~DistsBackend() = default;
  virtual std::string name() const = 0;
  virtual std::vector<torch::Tensor> features(torch::Tensor const &frame) const = 0;
};

/// Registry keyed by name. Nothing is registered by default.
void register_dists_backend(std::string const &name, std::function<std::unique_ptr<DistsBackend>()> factory);
std::unique_ptr<DistsBackend> make_dists_backend(std::string const &name);
std::vector<std::string> dists_backends();

/// Raw-intensity pyramid (1x, 2x and 4x average pooling). Not perceptual: useful
/// to exercise the combination rule, never a default.
class PixelPyramidBackend : public DistsBackend
{
public:
  std::string name() const override { return "pixel-pyramid"; }
  std::vector<torch::Tensor> features(torch::Tensor const &frame) const override;
};

/// 1 - DISTS distance (higher is better), averaged over frames. nullopt without a backend.
std::optional<double> dists(torch::Tensor const &x, torch::Tensor const &ref, DistsBackend const *backend);

struct WilcoxonResult
{
  double p = 1.0;
  double statistic = 0.0; ///< W+ (sum of positive ranks)
  int64_t n = 0;          ///< pairs after dropping zero differences
  bool exact = false;
  std::string warning;
};

/// Two-sided signed-rank test of a - b. Exact for n <= 25 (tie-aware
/// enumeration), normal approximation with tie correction above.
WilcoxonResult wilcoxon_signed_rank(std::vector<double> const &a, std::vector<double> const &b);

inline constexpr double kSignificance = 0.05;

struct MetricRow
{
  std::string method, subject, view, pattern;
  double R = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::optional<double> dists;
};

/// Cropped-region metrics of a reconstruction against a reference (both magnitude [H, W, T]).
MetricRow evaluate_images(torch::Tensor const &recon_mag, torch::Tensor const &ref_mag, DistsBackend const *backend);

void write_metrics_csv(std::filesystem::path const &path, std::vector<MetricRow> const &rows);
std::vector<MetricRow> read_metrics_csv(std::filesystem::path const &path);

struct Stat
{
  double mean = 0.0;
  double std = 0.0; ///< population standard deviation
  int64_t n = 0;
};
Stat summarize(std::vector<double> const &values);

struct ReportCell
{
  Stat stat;
  bool available = true;
  bool best = false;
  bool dagger = false;
  std::optional<double> p_value;
};

struct ReportRow
{
  std::string pattern;
  double R = 0.0;
  std::string method;
  ReportCell psnr, ssim, dists;
};

struct Report
{
  std::vector<ReportRow> rows;
  std::string text; ///< Markdown-style table
  std::string csv;
};

/// Mean +- std per (pattern, R, method); bold-best per setting and metric; a
/// dagger where the paired signed-rank test against `reference_method` gives p < 0.05.
Report make_report(std::vector<MetricRow> const &rows, std::string const &reference_method);

/// Magnitude along the central phase-encode column over time: [H, T].
torch::Tensor xt_strip(torch::Tensor const &mag);

/// 8-bit binary PGM scaled to the image maximum.
void write_pgm(std::filesystem::path const &path, torch::Tensor const &image2d);

} // namespace kpinr
