#pragma once

#include "kpinr/core_data.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace kpinr {

struct CmrxLoadOptions
{
  std::string variable;   ///< dataset name; empty picks the first known k-space name
  std::string axis_order; ///< stored axes in file (C) order, e.g. "T,S,C,W,H"; empty uses the default for the rank
  int64_t slice = -1;     ///< slice of an S axis; -1 takes the middle slice
  std::string view;       ///< LAX/SAX; empty infers from the file name
};

/// Names tried, in order, when no variable is given.
std::vector<std::string> const &cmrx_known_variables();

/// Default stored axis order: MATLAB's (kx, ky, coil, [slice,] t) read in C order.
std::string cmrx_default_axis_order(int64_t rank);

/// MATLAB v7.3 / HDF5 complex k-space (compound {real, imag}, float or double)
/// permuted to complex64 [H, W, C, T].
KSpaceVolume load_cmrxrecon(std::filesystem::path const &path, CmrxLoadOptions const &opts = {});

/// Dataset names at the file root.
std::vector<std::string> cmrx_list_variables(std::filesystem::path const &path);

/// Writes `data` (complex, already in stored axis order) as a compound
/// {real, imag} float32 dataset. Used to build fixtures.
void write_cmrxrecon(std::filesystem::path const &path, std::string const &variable, torch::Tensor const &data);

} // namespace kpinr
