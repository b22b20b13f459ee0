#include "kpinr/cmrxrecon.hpp"

#include <hdf5.h>

#include <algorithm>
#include <cctype>
#include <sstream>

namespace kpinr {

namespace {

// Closes an HDF5 handle on scope exit.
class Handle
{
public:
  Handle(hid_t id, herr_t (*close)(hid_t))
    : id_(id)
    , close_(close)
  {}
  Handle(Handle &&o) noexcept
    : id_(o.id_)
    , close_(o.close_)
  {
    o.id_ = -1;
  }
  Handle(Handle const &) = delete;
  Handle &operator=(Handle const &) = delete;
  ~Handle()
  {
    if (id_ >= 0) { close_(id_); }
  }
  hid_t get() const { return id_; }
  bool valid() const { return id_ >= 0; }

private:
  hid_t id_;
  herr_t (*close_)(hid_t);
};

struct ComplexD
{
  double real, imag;
};

struct ComplexF
{
  float real, imag;
};

Handle complex_type(bool dbl)
{
  size_t const size = dbl ? sizeof(ComplexD) : sizeof(ComplexF);
  Handle t(H5Tcreate(H5T_COMPOUND, size), H5Tclose);
  if (dbl) {
    H5Tinsert(t.get(), "real", HOFFSET(ComplexD, real), H5T_NATIVE_DOUBLE);
    H5Tinsert(t.get(), "imag", HOFFSET(ComplexD, imag), H5T_NATIVE_DOUBLE);
  } else {
    H5Tinsert(t.get(), "real", HOFFSET(ComplexF, real), H5T_NATIVE_FLOAT);
    H5Tinsert(t.get(), "imag", HOFFSET(ComplexF, imag), H5T_NATIVE_FLOAT);
  }
  return t;
}

herr_t collect_name(hid_t, char const *name, H5L_info_t const *, void *out)
{
  static_cast<std::vector<std::string> *>(out)->emplace_back(name);
  return 0;
}

std::string join(std::vector<std::string> const &v)
{
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) { s += (i ? ", " : "") + v[i]; }
  return s;
}

std::string shape_string(std::vector<hsize_t> const &dims)
{
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < dims.size(); ++i) { os << (i ? "," : "") << dims[i]; }
  os << ']';
  return os.str();
}

std::vector<std::string> split_axes(std::string const &s)
{
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }), tok.end());
    std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return char(std::toupper(c)); });
    out.push_back(tok);
  }
  return out;
}

Handle open_file(std::filesystem::path const &path)
{
  if (!std::filesystem::exists(path)) { throw std::runtime_error("cmrxrecon: no such file " + path.string()); }
  Handle f(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (!f.valid()) { throw std::runtime_error("cmrxrecon: " + path.string() + " is not an HDF5 / MATLAB v7.3 file"); }
  return f;
}

} // namespace

std::vector<std::string> const &cmrx_known_variables()
{
  static std::vector<std::string> const names{"kspace_full", "kspace", "kspace_sub04", "kspace_sub08", "kspace_sub10"};
  return names;
}

std::string cmrx_default_axis_order(int64_t rank)
{
  if (rank == 4) { return "T,C,W,H"; }
  if (rank == 5) { return "T,S,C,W,H"; }
  return "";
}

std::vector<std::string> cmrx_list_variables(std::filesystem::path const &path)
{
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  auto const f = open_file(path);
  std::vector<std::string> names;
  H5Literate(f.get(), H5_INDEX_NAME, H5_ITER_INC, nullptr, collect_name, &names);
  return names;
}

KSpaceVolume load_cmrxrecon(std::filesystem::path const &path, CmrxLoadOptions const &opts)
{
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  auto const available = cmrx_list_variables(path);
  auto const f = open_file(path);

  std::string var = opts.variable;
  if (var.empty()) {
    for (auto const &k : cmrx_known_variables()) {
      if (std::find(available.begin(), available.end(), k) != available.end()) {
        var = k;
        break;
      }
    }
  }
  if (var.empty() || std::find(available.begin(), available.end(), var) == available.end()) {
    throw std::runtime_error("cmrxrecon: variable '" + (var.empty() ? join(cmrx_known_variables()) : var) +
                             "' not found in " + path.string() + "; available keys: " + join(available));
  }

  Handle ds(H5Dopen2(f.get(), var.c_str(), H5P_DEFAULT), H5Dclose);
  Handle space(H5Dget_space(ds.get()), H5Sclose);
  Handle ftype(H5Dget_type(ds.get()), H5Tclose);
  int const rank = H5Sget_simple_extent_ndims(space.get());
  std::vector<hsize_t> dims(size_t(std::max(rank, 0)));
  H5Sget_simple_extent_dims(space.get(), dims.data(), nullptr);

  std::string const order_text = opts.axis_order.empty() ? cmrx_default_axis_order(rank) : opts.axis_order;
  auto const axes = split_axes(order_text);
  std::string const report = "dataset '" + var + "' has rank " + std::to_string(rank) + " and shape " +
                             shape_string(dims) + "; set io.axis_order to name each stored axis (H,W,C,T[,S])";
  if (axes.empty() || int64_t(axes.size()) != rank) { throw std::runtime_error("cmrxrecon: unknown layout: " + report); }
  for (auto const *need : {"H", "W", "C", "T"}) {
    if (std::count(axes.begin(), axes.end(), need) != 1) {
      throw std::runtime_error("cmrxrecon: axis order '" + order_text + "' lacks " + need + ": " + report);
    }
  }
  for (auto const &a : axes) {
    if (a != "H" && a != "W" && a != "C" && a != "T" && a != "S") {
      throw std::runtime_error("cmrxrecon: unknown axis '" + a + "': " + report);
    }
  }

  if (H5Tget_class(ftype.get()) != H5T_COMPOUND || H5Tget_member_index(ftype.get(), "real") < 0 ||
      H5Tget_member_index(ftype.get(), "imag") < 0) {
    throw std::runtime_error("cmrxrecon: dataset '" + var + "' is not a {real, imag} compound");
  }

  int64_t total = 1;
  std::vector<int64_t> shape;
  for (auto d : dims) {
    total *= int64_t(d);
    shape.push_back(int64_t(d));
  }
  auto const mtype = complex_type(true);
  std::vector<ComplexD> buf(static_cast<size_t>(total));
  if (H5Dread(ds.get(), mtype.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.data()) < 0) {
    throw std::runtime_error("cmrxrecon: failed to read '" + var + "'");
  }
  auto raw = torch::from_blob(buf.data(), {total, 2}, torch::kDouble).clone();
  auto data = torch::view_as_complex(raw).reshape(shape);

  Meta meta{{"source", path.filename().string()}, {"variable", var}, {"axis_order", order_text}};
  auto const s_it = std::find(axes.begin(), axes.end(), "S");
  std::vector<std::string> kept = axes;
  if (s_it != axes.end()) {
    int64_t const s_dim = s_it - axes.begin();
    int64_t const n_slices = data.size(s_dim);
    int64_t const slice = opts.slice < 0 ? n_slices / 2 : opts.slice;
    if (slice >= n_slices) {
      throw std::runtime_error("cmrxrecon: slice " + std::to_string(slice) + " out of range (" +
                               std::to_string(n_slices) + " slices)");
    }
    data = data.select(s_dim, slice);
    kept.erase(kept.begin() + s_dim);
    meta["slice"] = std::to_string(slice);
    meta["slices"] = std::to_string(n_slices);
  }
  std::vector<int64_t> perm;
  for (auto const *a : {"H", "W", "C", "T"}) { perm.push_back(std::find(kept.begin(), kept.end(), a) - kept.begin()); }
  data = data.permute(perm).contiguous().to(torch::kComplexFloat);

  std::string view = opts.view;
  if (view.empty()) {
    std::string lower = path.filename().string();
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    if (lower.find("lax") != std::string::npos) {
      view = "LAX";
    } else if (lower.find("sax") != std::string::npos) {
      view = "SAX";
    } else {
      view = "unknown";
    }
  }
  meta["view"] = view;

  KSpaceVolume out{data, 1.0, meta};
  out.validate();
  return out;
}

void write_cmrxrecon(std::filesystem::path const &path, std::string const &variable, torch::Tensor const &data)
{
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  auto const c = data.to(torch::kComplexFloat).contiguous();
  Handle f(H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT), H5Fclose);
  if (!f.valid()) { throw std::runtime_error("cmrxrecon: cannot create " + path.string()); }
  std::vector<hsize_t> dims;
  for (auto s : c.sizes()) { dims.push_back(hsize_t(s)); }
  Handle space(H5Screate_simple(int(dims.size()), dims.data(), nullptr), H5Sclose);
  auto const type = complex_type(false);
  Handle ds(H5Dcreate2(f.get(), variable.c_str(), type.get(), space.get(), H5P_DEFAULT, H5P_DEFAULT, H5P_DEFAULT),
            H5Dclose);
  if (!ds.valid() || H5Dwrite(ds.get(), type.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, c.data_ptr()) < 0) {
    throw std::runtime_error("cmrxrecon: failed to write '" + variable + "'");
  }
}

} // namespace kpinr
