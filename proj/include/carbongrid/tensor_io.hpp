#pragma once

#include <filesystem>
#include <iosfwd>

#include "carbongrid/tensor.hpp"

namespace carbongrid {

// Portable tensor file: one JSON header line {"shape":[...],"dtype":"f64"}
// followed by the raw little-endian row-major float64 payload.

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace carbongrid
