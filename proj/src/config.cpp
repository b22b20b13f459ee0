#include "kpinr/config.hpp"

#include "kpinr/container.hpp"

#include <fstream>

namespace kpinr {

std::vector<ConfigKey> const &config_keys()
{
  static std::vector<ConfigKey> const keys{
    {"method", "kpinr", "kpinr | pinr | ktgrappa | lps | zerofill"},
    {"seed", 0, "master seed; every module stream derives from it"},
    {"csm.source", "ground-truth", "ground-truth | acs-estimated"},

    {"mask.pattern", "uniform", "uniform | gaussian"},
    {"mask.R", 4.0, "nominal acceleration"},
    {"mask.acs_lines", 16, "fully sampled central phase-encode lines"},
    {"mask.interleave", true, "shift the pattern across frames"},

    {"phantom.H", 64, ""},
    {"phantom.W", 64, ""},
    {"phantom.coils", 4, ""},
    {"phantom.frames", 8, ""},
    {"phantom.motion_amplitude", 2.0, "pixels"},
    {"phantom.contraction", 0.25, ""},
    {"phantom.noise_std", 0.0, ""},

    {"model.spatial_levels", 120, "NeRF levels L (480 values for 2-D)"},
    {"model.temporal_features", 48, "rows of B (96 values)"},
    {"model.depth", 7, ""},
    {"model.mid_layer", 3, ""},
    {"model.hidden", 512, ""},
    {"model.kinr_width", 64, ""},
    {"model.fusion_layers", 2, ""},
    {"model.wire_omega0", 10.0, ""},
    {"model.wire_sigma0", 5.0, ""},
    {"model.leaky_slope", 0.01, ""},
    {"unet.channels", 64, ""},
    {"unet.kernel", 3, ""},
    {"unet.fusion_kernel", 1, ""},

    {"train.epochs", 6000, ""},
    {"train.refine_every", 500, ""},
    {"train.lr", 5e-5, ""},
    {"train.lr_decay", 0.95, ""},
    {"train.decay_every", 500, ""},
    {"train.lr_min", 2e-6, ""},
    {"train.weight_decay", 0.1, ""},
    {"train.beta1", 0.9, ""},
    {"train.beta2", 0.999, ""},
    {"train.adam_eps", 1e-8, ""},
    {"train.batch_coords", 65536, "sampled coordinates per epoch"},
    {"train.inference_chunk", 16384, "coordinates per full-grid inference chunk"},

    {"loss.kv", 1.0, ""},
    {"loss.pv", 1.0, ""},
    {"loss.ae_acq", 0.05, ""},
    {"loss.ae_zf", 0.025, ""},
    {"loss.hdr_eps", 1e-2, ""},

    {"ktgrappa.rho", 1e-4, "relative Tikhonov weight"},
    {"lps.lambda_L_scale", 0.01, ""},
    {"lps.lambda_S_scale", 0.025, ""},
    {"lps.max_iters", 100, ""},
    {"lps.tol", 1e-5, ""},

    {"io.variable", "", "HDF5 dataset name (empty: first known name)"},
    {"io.axis_order", "", "stored axis order, e.g. T,S,C,W,H"},
    {"io.slice", -1, "-1: middle slice"},
    {"io.view", "", "LAX | SAX (empty: from file name)"},
  };
  return keys;
}

namespace {

bool same_kind(nlohmann::json const &def, nlohmann::json const &v)
{
  if (def.is_boolean()) { return v.is_boolean(); }
  if (def.is_string()) { return v.is_string(); }
  if (def.is_number_integer()) { return v.is_number_integer(); }
  if (def.is_number_float()) { return v.is_number(); }
  return false;
}

std::string kind_name(nlohmann::json const &def)
{
  if (def.is_boolean()) { return "boolean"; }
  if (def.is_string()) { return "string"; }
  if (def.is_number_integer()) { return "integer"; }
  return "number";
}

uint64_t splitmix64(uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

} // namespace

ReconConfig::ReconConfig()
  : values_(nlohmann::json::object())
{
  for (auto const &k : config_keys()) { values_[k.name] = k.default_value; }
}

ReconConfig ReconConfig::from_file(std::filesystem::path const &path)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot read config " + path.string()); }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (nlohmann::json::parse_error const &e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  ReconConfig cfg;
  cfg.merge(j);
  return cfg;
}

void ReconConfig::set(std::string const &key, nlohmann::json value)
{
  if (!values_.contains(key)) { throw std::invalid_argument("unknown config key '" + key + "'"); }
  nlohmann::json def;
  for (auto const &k : config_keys()) {
    if (k.name == key) { def = k.default_value; }
  }
  if (!same_kind(def, value)) {
    throw std::invalid_argument("config key '" + key + "' expects a " + kind_name(def) + ", got " + value.dump());
  }
  if (def.is_number_float()) { value = value.get<double>(); }
  values_[key] = std::move(value);
}

void ReconConfig::apply_override(std::string const &assignment)
{
  auto const eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) { throw std::invalid_argument("expected key=value, got '" + assignment + "'"); }
  auto const key = assignment.substr(0, eq);
  auto const text = assignment.substr(eq + 1);
  auto parsed = nlohmann::json::parse(text, nullptr, false);
  if (parsed.is_discarded()) { parsed = text; }
  if (at(key).is_string() && !parsed.is_string()) { parsed = text; }
  set(key, parsed);
}

void ReconConfig::merge(nlohmann::json const &object)
{
  if (!object.is_object()) { throw std::invalid_argument("config must be a flat JSON object"); }
  for (auto const &[k, v] : object.items()) { set(k, v); }
}

nlohmann::json const &ReconConfig::at(std::string const &key) const
{
  if (!values_.contains(key)) { throw std::invalid_argument("unknown config key '" + key + "'"); }
  return values_.at(key);
}

std::string ReconConfig::hash() const
{
  auto const text = values_.dump();
  return content_id(text.data(), text.size());
}

uint64_t ReconConfig::seed_for(std::string const &module) const
{
  uint64_t h = splitmix64(get<uint64_t>("seed"));
  for (unsigned char c : module) { h = splitmix64(h ^ c); }
  return h;
}

MaskSpec ReconConfig::mask_spec() const
{
  MaskSpec s;
  s.pattern = mask_pattern_from_string(get<std::string>("mask.pattern"));
  s.R = get<double>("mask.R");
  s.acs_lines = get<int64_t>("mask.acs_lines");
  s.interleave = get<bool>("mask.interleave");
  s.seed = seed_for("mask");
  return s;
}

PhantomSpec ReconConfig::phantom_spec() const
{
  PhantomSpec s;
  s.H = get<int64_t>("phantom.H");
  s.W = get<int64_t>("phantom.W");
  s.coils = get<int64_t>("phantom.coils");
  s.frames = get<int64_t>("phantom.frames");
  s.motion_amplitude = get<double>("phantom.motion_amplitude");
  s.contraction = get<double>("phantom.contraction");
  s.noise_std = get<double>("phantom.noise_std");
  s.seed = seed_for("phantom");
  return s;
}

TrainerConfig ReconConfig::trainer_config(int64_t coils) const
{
  TrainerConfig c;
  auto &m = c.model;
  m.coils = coils;
  m.encoding.spatial_levels = get<int64_t>("model.spatial_levels");
  m.encoding.temporal_features = get<int64_t>("model.temporal_features");
  m.encoding.seed = seed_for("encoding");
  m.branch.depth = get<int64_t>("model.depth");
  m.branch.mid_layer = get<int64_t>("model.mid_layer");
  m.branch.hidden = get<int64_t>("model.hidden");
  m.branch.kinr_width = get<int64_t>("model.kinr_width");
  m.branch.fusion_layers = get<int64_t>("model.fusion_layers");
  m.branch.wire_omega0 = get<double>("model.wire_omega0");
  m.branch.wire_sigma0 = get<double>("model.wire_sigma0");
  m.branch.leaky_slope = get<double>("model.leaky_slope");
  m.unet.channels = get<int64_t>("unet.channels");
  m.unet.kernel = get<int64_t>("unet.kernel");
  m.unet.fusion_kernel = get<int64_t>("unet.fusion_kernel");

  auto &s = c.schedule;
  s.total_epochs = get<int64_t>("train.epochs");
  s.refine_every = get<int64_t>("train.refine_every");
  s.lr = get<double>("train.lr");
  s.lr_decay = get<double>("train.lr_decay");
  s.decay_every = get<int64_t>("train.decay_every");
  s.lr_min = get<double>("train.lr_min");
  s.weight_decay = get<double>("train.weight_decay");
  s.beta1 = get<double>("train.beta1");
  s.beta2 = get<double>("train.beta2");
  s.adam_eps = get<double>("train.adam_eps");
  s.batch_coords = get<int64_t>("train.batch_coords");
  s.inference_chunk = get<int64_t>("train.inference_chunk");
  s.seed = seed_for("train");

  auto &w = c.weights;
  w.kv = get<double>("loss.kv");
  w.pv = get<double>("loss.pv");
  w.ae_acq = get<double>("loss.ae_acq");
  w.ae_zf = get<double>("loss.ae_zf");
  w.hdr_eps = get<double>("loss.hdr_eps");
  return c;
}

KtGrappaSpec ReconConfig::ktgrappa_spec() const
{
  KtGrappaSpec s;
  s.rho = get<double>("ktgrappa.rho");
  return s;
}

LpsSpec ReconConfig::lps_spec() const
{
  LpsSpec s;
  s.lambda_L_scale = get<double>("lps.lambda_L_scale");
  s.lambda_S_scale = get<double>("lps.lambda_S_scale");
  s.max_iters = get<int64_t>("lps.max_iters");
  s.tol = get<double>("lps.tol");
  return s;
}

} // namespace kpinr
