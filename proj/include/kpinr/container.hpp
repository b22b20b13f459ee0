#pragma once

#include "kpinr/core_data.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace kpinr {

// File layout: "KPINRTC1", uint64 little-endian header length, UTF-8 JSON
// header, raw row-major payload.

enum class DType
{
  Complex64, ///< interleaved float32 (re, im)
  Float32,
  UInt8
};

std::string to_string(DType d);
DType dtype_from_string(std::string const &s);
int64_t dtype_size(DType d);

struct Provenance
{
  std::string config_hash;
  uint64_t seed = 0;
  std::string content_id; ///< git blob SHA-1 of the payload, filled on write
};

struct TensorContainer
{
  DType dtype = DType::Float32;
  std::vector<int64_t> shape;
  std::vector<std::string> axes;
  double norm_scale = 1.0;
  Provenance provenance;
  nlohmann::json meta = nlohmann::json::object();
  torch::Tensor tensor; ///< complex64, float32 or bool/uint8, contiguous

  nlohmann::json header() const;
};

/// git-style blob id: sha1("blob <n>\0" + bytes).
std::string content_id(void const *data, size_t size);

/// Wraps a tensor; dtype follows the tensor (bool stores as uint8).
TensorContainer make_container(torch::Tensor t, std::vector<std::string> axes);

void write_container(std::filesystem::path const &path, TensorContainer c);
TensorContainer read_container(std::filesystem::path const &path);
/// Header only; the payload is not read.
nlohmann::json read_container_header(std::filesystem::path const &path);

// Typed helpers. Axis names are fixed per kind.
void save_kspace(std::filesystem::path const &path, KSpaceVolume const &ksp, Provenance const &prov = {});
KSpaceVolume load_kspace(std::filesystem::path const &path);
void save_mask(std::filesystem::path const &path, SamplingMask const &mask, Provenance const &prov = {});
SamplingMask load_mask(std::filesystem::path const &path);
void save_csm(std::filesystem::path const &path, CoilSensitivityMaps const &csm, Provenance const &prov = {});
CoilSensitivityMaps load_csm(std::filesystem::path const &path);
void save_image(std::filesystem::path const &path, CineImageSeries const &img, Provenance const &prov = {});
CineImageSeries load_image(std::filesystem::path const &path);

} // namespace kpinr
