#pragma once

#include "kpinr/baselines.hpp"
#include "kpinr/phantom.hpp"
#include "kpinr/sampling.hpp"
#include "kpinr/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace kpinr {

struct ConfigKey
{
  std::string name;
  nlohmann::json default_value;
  std::string help;
};

/// Every recognized key with its default.
std::vector<ConfigKey> const &config_keys();

/// Flat dotted-key configuration stored as a JSON object. Unknown keys and
/// values whose type differs from the default's are rejected.
class ReconConfig
{
public:
  ReconConfig();

  static ReconConfig from_file(std::filesystem::path const &path);

  void set(std::string const &key, nlohmann::json value);
  /// "key=value"; value is parsed as JSON, falling back to a plain string.
  void apply_override(std::string const &assignment);
  void merge(nlohmann::json const &object);

  nlohmann::json const &at(std::string const &key) const;
  template<class T>
  T get(std::string const &key) const
  {
    return at(key).get<T>();
  }

  nlohmann::json const &values() const { return values_; }
  std::string dump() const { return values_.dump(2) + "\n"; }
  /// SHA-1 of the canonical dump.
  std::string hash() const;

  /// Independent per-module stream derived from the master seed.
  uint64_t seed_for(std::string const &module) const;

  MaskSpec mask_spec() const;
  PhantomSpec phantom_spec() const;
  TrainerConfig trainer_config(int64_t coils) const;
  KtGrappaSpec ktgrappa_spec() const;
  LpsSpec lps_spec() const;

private:
  nlohmann::json values_;
};

} // namespace kpinr
