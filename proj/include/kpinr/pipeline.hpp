#pragma once

#include "kpinr/config.hpp"
#include "kpinr/evaluation.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kpinr {

inline std::vector<std::string> const kMethods{"kpinr", "pinr", "ktgrappa", "lps", "zerofill"};

/// Reads KPINR_DEVICE (unset, "cpu"). Anything else is a runtime error: this build computes on the CPU.
torch::Device resolve_device();

/// Exclusive ownership of a run directory through an O_EXCL lock file.
class RunLock
{
public:
  explicit RunLock(std::filesystem::path dir);
  RunLock(RunLock const &) = delete;
  RunLock &operator=(RunLock const &) = delete;
  ~RunLock();

private:
  std::filesystem::path lock_;
};

struct ReconInputs
{
  KSpaceVolume kspace; ///< only mask = 1 entries are read
  SamplingMask mask;
  std::optional<CoilSensitivityMaps> csm; ///< required unless csm.source = acs-estimated
  std::optional<CineImageSeries> reference;
  std::string subject = "phantom";
};

struct RunSummary
{
  std::filesystem::path dir;
  CineImageSeries image;
  nlohmann::json info;
};

/// Runs cfg["method"] and writes config.json, run.json, mask, csm, recon, the
/// reference (when given) and, for the INR methods, loss.csv, refined
/// generations and checkpoints. `resume` continues from checkpoints/latest.pt.
RunSummary run_method(ReconConfig const &cfg, ReconInputs const &in, std::filesystem::path const &run_dir,
                      bool resume = false);

/// Metrics of one run directory against its stored reference.
MetricRow evaluate_run(std::filesystem::path const &run_dir, DistsBackend const *backend);

/// metrics.csv, table.md, report.csv and x-t strips (xt/*.pgm) in out_dir.
std::vector<MetricRow> evaluate_runs(std::vector<std::filesystem::path> const &run_dirs,
                                     std::filesystem::path const &out_dir, DistsBackend const *backend,
                                     std::string const &reference_method = "kpinr");

} // namespace kpinr
