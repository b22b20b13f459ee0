#include "kpinr/pipeline.hpp"

#include "kpinr/container.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>

namespace kpinr {

namespace fs = std::filesystem;

torch::Device resolve_device()
{
  char const *env = std::getenv("KPINR_DEVICE");
  std::string const name = env != nullptr ? env : "";
  if (name.empty() || name == "cpu") { return torch::kCPU; }
  throw std::runtime_error("KPINR_DEVICE='" + name + "' is not supported; this build runs on the CPU only");
}

RunLock::RunLock(fs::path dir)
  : lock_(std::move(dir) / "lock")
{
  int const fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) { throw std::runtime_error("run directory is locked by another process: " + lock_.string()); }
  auto const pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto const n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock()
{
  std::error_code ec;
  fs::remove(lock_, ec);
}

namespace {

void write_text(fs::path const &path, std::string const &text)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << text;
}

class RunDirObserver : public RunObserver
{
public:
  RunDirObserver(fs::path dir, Provenance prov, bool append)
    : dir_(std::move(dir))
    , prov_(std::move(prov))
  {
    fs::create_directories(dir_ / "refined");
    fs::create_directories(dir_ / "checkpoints");
    bool const fresh = !append || !fs::exists(dir_ / "loss.csv");
    loss_.open(dir_ / "loss.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!loss_) { throw std::runtime_error("cannot write " + (dir_ / "loss.csv").string()); }
    if (fresh) { loss_ << "epoch,lr,total,kv,pv,ae_acq,ae_zf\n"; }
    loss_ << std::setprecision(10);
  }

  void on_loss(LossRecord const &r) override
  {
    loss_ << r.epoch << ',' << r.lr << ',' << r.total << ',' << r.kv << ',' << r.pv << ',' << r.ae_acq << ','
          << r.ae_zf << '\n';
  }

  void on_refined(RefinedKSpace const &r) override
  {
    std::ostringstream name;
    name << "gen_" << std::setw(3) << std::setfill('0') << r.generation << ".kptc";
    auto ksp = r.ksp;
    ksp.meta["epoch"] = std::to_string(r.epoch);
    ksp.meta["generation"] = std::to_string(r.generation);
    save_kspace(dir_ / "refined" / name.str(), ksp, prov_);
  }

  void on_boundary(Trainer const &trainer, int64_t epoch) override
  {
    loss_.flush();
    trainer.save_checkpoint(dir_ / "checkpoints" / "latest.pt", epoch);
  }

private:
  fs::path dir_;
  Provenance prov_;
  std::ofstream loss_;
};

} // namespace

RunSummary run_method(ReconConfig const &cfg, ReconInputs const &in, fs::path const &run_dir, bool resume)
{
  resolve_device();
  auto const method = cfg.get<std::string>("method");
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end()) {
    throw std::invalid_argument("unknown method '" + method + "'");
  }
  fs::create_directories(run_dir);
  RunLock const lock(run_dir);

  Provenance const prov{cfg.hash(), cfg.get<uint64_t>("seed"), ""};
  auto const &mask = in.mask;
  mask.validate();
  CoilSensitivityMaps csm;
  if (cfg.get<std::string>("csm.source") == "acs-estimated") {
    csm = estimate_csm_from_acs(zero_fill(in.kspace, mask), mask);
  } else if (in.csm) {
    csm = *in.csm;
  } else {
    throw std::invalid_argument("csm.source is ground-truth but no coil sensitivity maps were given");
  }

  write_text(run_dir / "config.json", cfg.dump());
  save_mask(run_dir / "mask.kptc", mask, prov);
  save_csm(run_dir / "csm.kptc", csm, prov);
  if (in.reference) { save_image(run_dir / "reference.kptc", {in.reference->magnitude().to(torch::kFloat)}, prov); }

  RunSummary out;
  out.dir = run_dir;
  auto const view = in.kspace.meta.count("view") ? in.kspace.meta.at("view") : std::string("unknown");
  out.info = {{"method", method},
              {"subject", in.subject},
              {"view", view},
              {"pattern", cfg.get<std::string>("mask.pattern")},
              {"R", mask.nominal_R},
              {"effective_R", effective_acceleration(mask)},
              {"config_hash", prov.config_hash},
              {"seed", prov.seed}};

  if (method == "zerofill") {
    out.image = kspace_to_image(zero_fill(in.kspace, mask).data, csm);
  } else if (method == "ktgrappa") {
    KtGrappaCoverage cov;
    auto const filled = kt_grappa_reconstruct(in.kspace, mask, cfg.ktgrappa_spec(), &cov);
    out.image = kspace_to_image(filled.data, csm);
    out.info["coverage"] = {{"kernel_lines", cov.kernel_lines},
                            {"fallback_lines", cov.fallback_lines},
                            {"unfilled_lines", cov.unfilled_lines},
                            {"classes", cov.classes}};
  } else if (method == "lps") {
    auto const res = lps_reconstruct(in.kspace, mask, csm, cfg.lps_spec());
    out.image = res.image;
    std::ostringstream trace;
    trace << std::setprecision(12) << "iteration,objective,dc_residual\n";
    for (size_t i = 0; i < res.objective.size(); ++i) {
      trace << i + 1 << ',' << res.objective[i] << ',' << res.dc_residual[i] << '\n';
    }
    write_text(run_dir / "lps_trace.csv", trace.str());
    out.info["lps"] = {{"iterations", res.iterations}, {"converged", res.converged},
                       {"lambda_L", res.lambda_L}, {"lambda_S", res.lambda_S}};
  } else {
    auto tc = cfg.trainer_config(in.kspace.C());
    if (method == "pinr") { tc = positional_only(tc); }
    auto const ckpt = run_dir / "checkpoints" / "latest.pt";
    bool const resuming = resume && fs::exists(ckpt);
    RunDirObserver obs(run_dir, prov, resuming);
    auto const res = run_reconstruction(tc, in.kspace, mask, csm, &obs, resuming ? ckpt : fs::path{});
    out.image = res.image;
    out.info["refine_epochs"] = res.refine_epochs;
    out.info["generations"] = res.final_kspace.generation;
  }

  save_image(run_dir / "recon.kptc", out.image, prov);
  write_text(run_dir / "run.json", out.info.dump(2) + "\n");
  return out;
}

MetricRow evaluate_run(fs::path const &run_dir, DistsBackend const *backend)
{
  std::ifstream is(run_dir / "run.json");
  if (!is) { throw std::runtime_error(run_dir.string() + " is not a run directory (no run.json)"); }
  auto const info = nlohmann::json::parse(is);
  if (!fs::exists(run_dir / "reference.kptc")) {
    throw std::runtime_error(run_dir.string() + " has no reference.kptc to evaluate against");
  }
  auto const recon = load_image(run_dir / "recon.kptc");
  auto const ref = load_image(run_dir / "reference.kptc");
  auto row = evaluate_images(recon.magnitude(), ref.magnitude(), backend);
  row.method = info.at("method").get<std::string>();
  row.subject = info.at("subject").get<std::string>();
  row.view = info.at("view").get<std::string>();
  row.pattern = info.at("pattern").get<std::string>();
  row.R = info.at("R").get<double>();
  return row;
}

std::vector<MetricRow> evaluate_runs(std::vector<fs::path> const &run_dirs, fs::path const &out_dir,
                                     DistsBackend const *backend, std::string const &reference_method)
{
  fs::create_directories(out_dir / "xt");
  std::vector<MetricRow> rows;
  for (auto const &dir : run_dirs) {
    auto row = evaluate_run(dir, backend);
    auto const stem = row.method + "_" + row.subject + "_" + row.view + "_" + row.pattern + "_R" +
                      std::to_string(int64_t(std::lround(row.R)));
    write_pgm(out_dir / "xt" / (stem + ".pgm"), xt_strip(load_image(dir / "recon.kptc").magnitude()));
    write_pgm(out_dir / "xt" / ("reference_" + row.subject + "_" + row.view + ".pgm"),
              xt_strip(load_image(dir / "reference.kptc").magnitude()));
    rows.push_back(row);
  }
  write_metrics_csv(out_dir / "metrics.csv", rows);
  auto const report = make_report(rows, reference_method);
  write_text(out_dir / "table.md", report.text);
  write_text(out_dir / "report.csv", report.csv);
  return rows;
}

} // namespace kpinr
