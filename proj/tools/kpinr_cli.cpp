#include "kpinr/cmrxrecon.hpp"
#include "kpinr/container.hpp"
#include "kpinr/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace kpinr;

namespace {

struct ConfigOptions
{
  std::string file;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
};

void add_config_options(CLI::App *cmd, ConfigOptions &o)
{
  cmd->add_option("--config", o.file, "flat JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "key=value override (repeatable)");
  cmd->add_option("--seed", o.seed, "master seed; overrides every module seed");
}

// Thrown for user mistakes that CLI11 cannot see (exit code 1).
struct UsageError : std::invalid_argument
{
  using std::invalid_argument::invalid_argument;
};

ReconConfig build_config(ConfigOptions const &o)
{
  try {
    ReconConfig cfg = o.file.empty() ? ReconConfig{} : ReconConfig::from_file(o.file);
    for (auto const &s : o.sets) { cfg.apply_override(s); }
    if (o.seed) { cfg.set("seed", *o.seed); }
    return cfg;
  } catch (std::invalid_argument const &e) {
    throw UsageError(e.what());
  }
}

bool is_container(fs::path const &p)
{
  std::ifstream is(p, std::ios::binary);
  char magic[8] = {};
  is.read(magic, 8);
  return is && std::string(magic, 8) == "KPINRTC1";
}

KSpaceVolume load_any_kspace(fs::path const &p, ReconConfig const &cfg)
{
  if (is_container(p)) { return load_kspace(p); }
  CmrxLoadOptions opts;
  opts.variable = cfg.get<std::string>("io.variable");
  opts.axis_order = cfg.get<std::string>("io.axis_order");
  opts.slice = cfg.get<int64_t>("io.slice");
  opts.view = cfg.get<std::string>("io.view");
  return load_cmrxrecon(p, opts);
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"KP-INR cardiac cine reconstruction toolkit"};
  app.require_subcommand(1);

  ConfigOptions ph_cfg;
  std::string ph_out;
  auto *phantom = app.add_subcommand("phantom", "generate a synthetic cine phantom");
  add_config_options(phantom, ph_cfg);
  phantom->add_option("--out", ph_out, "output directory")->required();

  ConfigOptions mk_cfg;
  std::string mk_kspace, mk_out;
  std::vector<int64_t> mk_shape;
  auto *mask = app.add_subcommand("mask", "emit a sampling mask container");
  add_config_options(mask, mk_cfg);
  auto *mk_from = mask->add_option("--kspace", mk_kspace, "take H, W, T from this k-space");
  mask->add_option("--shape", mk_shape, "H W T")->expected(3)->excludes(mk_from);
  mask->add_option("--out", mk_out, "mask container path")->required();

  ConfigOptions rc_cfg;
  std::string rc_method, rc_kspace, rc_mask, rc_csm, rc_ref, rc_out, rc_subject = "phantom";
  bool rc_resume = false;
  auto *recon = app.add_subcommand("reconstruct", "reconstruct into a run directory");
  add_config_options(recon, rc_cfg);
  recon->add_option("--method", rc_method, "reconstruction method")->check(CLI::IsMember(kMethods));
  recon->add_option("--kspace", rc_kspace, "k-space container or CMRxRecon .mat")->required()->check(CLI::ExistingFile);
  recon->add_option("--mask", rc_mask, "mask container")->required()->check(CLI::ExistingFile);
  recon->add_option("--csm", rc_csm, "coil sensitivity container")->check(CLI::ExistingFile);
  recon->add_option("--reference", rc_ref, "reference image container for evaluation")->check(CLI::ExistingFile);
  recon->add_option("--subject", rc_subject, "case label");
  recon->add_option("--out", rc_out, "run directory")->required();
  recon->add_flag("--resume", rc_resume, "continue from the last checkpoint");

  std::vector<std::string> ev_runs;
  std::string ev_out, ev_reference = "kpinr", ev_dists;
  auto *evaluate = app.add_subcommand("evaluate", "metrics CSV, table and x-t strips from run directories");
  evaluate->add_option("runs", ev_runs, "run directories")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--out", ev_out, "output directory")->required();
  evaluate->add_option("--reference-method", ev_reference, "method the significance tests compare against");
  evaluate->add_option("--dists-backend", ev_dists, "registered DISTS feature backend (default: none, reported NA)");

  std::string in_path;
  auto *inspect = app.add_subcommand("inspect", "print a container header");
  inspect->add_option("file", in_path, "container path")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    if (e.get_exit_code() == 0) { return app.exit(e); }
    std::cerr << "usage-error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (*phantom) {
      auto const cfg = build_config(ph_cfg);
      auto const spec = cfg.phantom_spec();
      auto const ph = generate_phantom(spec);
      fs::create_directories(ph_out);
      Provenance const prov{cfg.hash(), cfg.get<uint64_t>("seed"), ""};
      save_kspace(fs::path(ph_out) / "kspace.kptc", ph.kspace, prov);
      save_csm(fs::path(ph_out) / "csm.kptc", ph.csm, prov);
      save_image(fs::path(ph_out) / "image.kptc", ph.image, prov);
      std::cout << "phantom " << ph_out << " [" << spec.H << "," << spec.W << "," << spec.coils << "," << spec.frames
                << "]\n";
    } else if (*mask) {
      auto const cfg = build_config(mk_cfg);
      int64_t H = 0, W = 0, T = 0;
      if (!mk_kspace.empty()) {
        auto const shape = read_container_header(mk_kspace).at("shape").get<std::vector<int64_t>>();
        if (shape.size() != 4) { throw UsageError("--kspace must be an [H,W,C,T] container"); }
        H = shape[0], W = shape[1], T = shape[3];
      } else if (mk_shape.size() == 3) {
        H = mk_shape[0], W = mk_shape[1], T = mk_shape[2];
      } else {
        throw UsageError("mask needs --kspace or --shape H W T");
      }
      auto const m = make_mask(cfg.mask_spec(), H, W, T);
      save_mask(mk_out, m, {cfg.hash(), cfg.get<uint64_t>("seed"), ""});
      std::cout << "mask " << mk_out << " effective_R=" << effective_acceleration(m) << "\n";
    } else if (*recon) {
      auto cfg = build_config(rc_cfg);
      if (!rc_method.empty()) { cfg.set("method", rc_method); }
      ReconInputs in;
      in.kspace = load_any_kspace(rc_kspace, cfg);
      in.mask = load_mask(rc_mask);
      if (!rc_csm.empty()) { in.csm = load_csm(rc_csm); }
      if (!rc_ref.empty()) { in.reference = load_image(rc_ref); }
      in.subject = rc_subject;
      auto const res = run_method(cfg, in, rc_out, rc_resume);
      std::cout << "reconstruct " << cfg.get<std::string>("method") << " -> " << res.dir.string() << "\n";
    } else if (*evaluate) {
      std::unique_ptr<DistsBackend> backend;
      if (!ev_dists.empty()) {
        backend = make_dists_backend(ev_dists);
        if (!backend) { throw UsageError("unknown DISTS backend '" + ev_dists + "'"); }
      }
      std::vector<fs::path> runs(ev_runs.begin(), ev_runs.end());
      auto const rows = evaluate_runs(runs, ev_out, backend.get(), ev_reference);
      std::cout << "evaluate " << rows.size() << " runs -> " << (fs::path(ev_out) / "metrics.csv").string() << "\n";
    } else if (*inspect) {
      auto const h = read_container_header(in_path);
      std::cout << h.dump(2) << "\n";
      std::cout << "shape " << h.at("shape").dump() << "\n";
    }
  } catch (UsageError const &e) {
    std::cerr << "usage-error: " << e.what() << "\n";
    return 1;
  } catch (std::exception const &e) {
    std::string msg = e.what();
    for (auto &c : msg) {
      if (c == '\n') { c = ' '; }
    }
    std::cerr << "error: " << msg << "\n";
    return 2;
  }
  return 0;
}
