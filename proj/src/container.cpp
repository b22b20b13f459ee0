#include "kpinr/container.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace kpinr {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'K', 'P', 'I', 'N', 'R', 'T', 'C', '1'};

torch::ScalarType scalar_type(DType d)
{
  switch (d) {
    case DType::Complex64: return torch::kComplexFloat;
    case DType::Float32: return torch::kFloat;
    case DType::UInt8: return torch::kUInt8;
  }
  throw std::invalid_argument("unknown dtype");
}

int64_t numel(std::vector<int64_t> const &shape)
{
  int64_t n = 1;
  for (auto s : shape) {
    if (s < 0) { throw std::runtime_error("container: negative dimension"); }
    n *= s;
  }
  return n;
}

} // namespace

std::string to_string(DType d)
{
  switch (d) {
    case DType::Complex64: return "complex64-interleaved";
    case DType::Float32: return "float32";
    case DType::UInt8: return "uint8";
  }
  return "?";
}

DType dtype_from_string(std::string const &s)
{
  if (s == "complex64-interleaved") { return DType::Complex64; }
  if (s == "float32") { return DType::Float32; }
  if (s == "uint8") { return DType::UInt8; }
  throw std::runtime_error("container: unknown dtype '" + s + "'");
}

int64_t dtype_size(DType d)
{
  switch (d) {
    case DType::Complex64: return 8;
    case DType::Float32: return 4;
    case DType::UInt8: return 1;
  }
  return 0;
}

std::string content_id(void const *data, size_t size)
{
  std::string const prefix = "blob " + std::to_string(size) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX *ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) != 1 || EVP_DigestUpdate(ctx, data, size) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("content_id: SHA-1 failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) { os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]); }
  return os.str();
}

nlohmann::json TensorContainer::header() const
{
  return {{"dtype", to_string(dtype)},
          {"shape", shape},
          {"axes", axes},
          {"endianness", "little"},
          {"norm_scale", norm_scale},
          {"provenance",
           {{"config_hash", provenance.config_hash}, {"seed", provenance.seed}, {"content_id", provenance.content_id}}},
          {"meta", meta}};
}

TensorContainer make_container(torch::Tensor t, std::vector<std::string> axes)
{
  TensorContainer c;
  if (t.scalar_type() == torch::kBool) { t = t.to(torch::kUInt8); }
  switch (t.scalar_type()) {
    case torch::kComplexFloat: c.dtype = DType::Complex64; break;
    case torch::kFloat: c.dtype = DType::Float32; break;
    case torch::kUInt8: c.dtype = DType::UInt8; break;
    default: throw std::invalid_argument("make_container: unsupported tensor dtype");
  }
  if (!axes.empty() && int64_t(axes.size()) != t.dim()) {
    throw std::invalid_argument("make_container: axis names do not match rank");
  }
  c.tensor = t.contiguous().cpu();
  c.shape = c.tensor.sizes().vec();
  c.axes = std::move(axes);
  return c;
}

void write_container(std::filesystem::path const &path, TensorContainer c)
{
  auto const expected = scalar_type(c.dtype);
  if (!c.tensor.defined() || c.tensor.scalar_type() != expected) {
    throw std::invalid_argument("write_container: tensor dtype does not match header dtype");
  }
  c.tensor = c.tensor.contiguous().cpu();
  if (c.tensor.sizes().vec() != c.shape) { throw std::invalid_argument("write_container: shape mismatch"); }
  size_t const bytes = size_t(c.tensor.numel()) * size_t(dtype_size(c.dtype));
  c.provenance.content_id = content_id(c.tensor.data_ptr(), bytes);
  std::string const header = c.header().dump();
  uint64_t const len = header.size();

  auto const tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) { throw std::runtime_error("cannot write " + path.string()); }
    os.write(kMagic, sizeof kMagic);
    os.write(reinterpret_cast<char const *>(&len), sizeof len);
    os.write(header.data(), std::streamsize(header.size()));
    os.write(static_cast<char const *>(c.tensor.data_ptr()), std::streamsize(bytes));
    if (!os) { throw std::runtime_error("short write to " + path.string()); }
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string read_header_text(std::ifstream &is, std::filesystem::path const &path)
{
  char magic[8];
  uint64_t len = 0;
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + " is not a tensor container");
  }
  is.read(reinterpret_cast<char *>(&len), sizeof len);
  if (!is || len > (uint64_t(1) << 30)) { throw std::runtime_error(path.string() + ": corrupt header length"); }
  std::string text(len, '\0');
  is.read(text.data(), std::streamsize(len));
  if (!is) { throw std::runtime_error(path.string() + ": truncated header"); }
  return text;
}

std::ifstream open_input(std::filesystem::path const &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) { throw std::runtime_error("cannot open " + path.string()); }
  return is;
}

} // namespace

nlohmann::json read_container_header(std::filesystem::path const &path)
{
  auto is = open_input(path);
  return nlohmann::json::parse(read_header_text(is, path));
}

TensorContainer read_container(std::filesystem::path const &path)
{
  auto is = open_input(path);
  auto const h = nlohmann::json::parse(read_header_text(is, path));
  if (h.value("endianness", "") != "little") { throw std::runtime_error(path.string() + ": unsupported endianness"); }
  TensorContainer c;
  c.dtype = dtype_from_string(h.at("dtype").get<std::string>());
  c.shape = h.at("shape").get<std::vector<int64_t>>();
  c.axes = h.at("axes").get<std::vector<std::string>>();
  c.norm_scale = h.at("norm_scale").get<double>();
  auto const &p = h.at("provenance");
  c.provenance = {p.at("config_hash").get<std::string>(), p.at("seed").get<uint64_t>(),
                  p.at("content_id").get<std::string>()};
  c.meta = h.at("meta");

  int64_t const bytes = numel(c.shape) * dtype_size(c.dtype);
  c.tensor = torch::empty(c.shape, torch::TensorOptions().dtype(scalar_type(c.dtype)));
  is.read(static_cast<char *>(c.tensor.data_ptr()), std::streamsize(bytes));
  if (!is || is.gcount() != bytes) {
    throw std::runtime_error(path.string() + ": payload shorter than shape x dtype size");
  }
  is.peek();
  if (!is.eof()) { throw std::runtime_error(path.string() + ": trailing bytes after payload"); }
  if (content_id(c.tensor.data_ptr(), size_t(bytes)) != c.provenance.content_id) {
    throw std::runtime_error(path.string() + ": content id mismatch");
  }
  return c;
}

namespace {

TensorContainer with_provenance(TensorContainer c, Provenance const &prov)
{
  c.provenance.config_hash = prov.config_hash;
  c.provenance.seed = prov.seed;
  return c;
}

void expect_axes(TensorContainer const &c, std::vector<std::string> const &axes, std::filesystem::path const &path)
{
  if (c.axes != axes) {
    std::string want;
    for (auto const &a : axes) { want += a + ' '; }
    throw std::runtime_error(path.string() + ": expected axes " + want);
  }
}

} // namespace

void save_kspace(std::filesystem::path const &path, KSpaceVolume const &ksp, Provenance const &prov)
{
  auto c = with_provenance(make_container(ksp.data.to(torch::kComplexFloat), {"H", "W", "C", "T"}), prov);
  c.norm_scale = ksp.norm_scale;
  for (auto const &[k, v] : ksp.meta) { c.meta[k] = v; }
  write_container(path, std::move(c));
}

KSpaceVolume load_kspace(std::filesystem::path const &path)
{
  auto c = read_container(path);
  if (c.dtype != DType::Complex64) { throw std::runtime_error(path.string() + ": k-space must be complex64"); }
  expect_axes(c, {"H", "W", "C", "T"}, path);
  KSpaceVolume ksp{c.tensor, c.norm_scale, {}};
  for (auto const &[k, v] : c.meta.items()) { ksp.meta[k] = v.is_string() ? v.get<std::string>() : v.dump(); }
  return ksp;
}

void save_mask(std::filesystem::path const &path, SamplingMask const &mask, Provenance const &prov)
{
  auto c = with_provenance(make_container(mask.mask, {"H", "W", "T"}), prov);
  c.meta = {{"acs_lines", mask.acs_lines}, {"pattern", to_string(mask.pattern)}, {"nominal_R", mask.nominal_R}};
  write_container(path, std::move(c));
}

SamplingMask load_mask(std::filesystem::path const &path)
{
  auto c = read_container(path);
  if (c.dtype != DType::UInt8) { throw std::runtime_error(path.string() + ": mask must be uint8"); }
  expect_axes(c, {"H", "W", "T"}, path);
  SamplingMask m{c.tensor.to(torch::kBool), c.meta.at("acs_lines").get<int64_t>(),
                 mask_pattern_from_string(c.meta.at("pattern").get<std::string>()), c.meta.at("nominal_R").get<double>()};
  m.validate();
  return m;
}

void save_csm(std::filesystem::path const &path, CoilSensitivityMaps const &csm, Provenance const &prov)
{
  auto c = with_provenance(make_container(csm.maps.to(torch::kComplexFloat), {"H", "W", "C"}), prov);
  c.meta = {{"source", to_string(csm.source)}};
  write_container(path, std::move(c));
}

CoilSensitivityMaps load_csm(std::filesystem::path const &path)
{
  auto c = read_container(path);
  if (c.dtype != DType::Complex64) { throw std::runtime_error(path.string() + ": CSMs must be complex64"); }
  expect_axes(c, {"H", "W", "C"}, path);
  return {c.tensor, csm_source_from_string(c.meta.at("source").get<std::string>())};
}

void save_image(std::filesystem::path const &path, CineImageSeries const &img, Provenance const &prov)
{
  auto const t = img.data.is_complex() ? img.data.to(torch::kComplexFloat) : img.data.to(torch::kFloat);
  write_container(path, with_provenance(make_container(t, {"H", "W", "T"}), prov));
}

CineImageSeries load_image(std::filesystem::path const &path)
{
  auto c = read_container(path);
  if (c.dtype == DType::UInt8) { throw std::runtime_error(path.string() + ": image must be complex64 or float32"); }
  expect_axes(c, {"H", "W", "T"}, path);
  return {c.tensor};
}

} // namespace kpinr
