#include "carbongrid/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "carbongrid/errors.hpp"

namespace carbongrid {

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are written as native little-endian doubles");

void write_tensor(std::ostream& out, const Tensor& tensor) {
  std::string header = "{\"shape\":[";
  for (std::size_t i = 0; i < tensor.rank(); ++i) {
    if (i) header += ",";
    header += std::to_string(tensor.extent(i));
  }
  header += "],\"dtype\":\"f64\"}\n";
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto data = tensor.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw FormatError("failed to write tensor payload");
}

Tensor read_tensor(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("tensor file: missing header line");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tensor file: bad header: ") + e.what());
  }
  if (!meta.is_object() || meta.value("dtype", "") != "f64" || !meta.contains("shape") ||
      !meta["shape"].is_array()) {
    throw FormatError("tensor file: header must be {\"shape\":[...],\"dtype\":\"f64\"}");
  }
  Shape shape;
  for (const auto& d : meta["shape"]) {
    if (!d.is_number_unsigned()) throw FormatError("tensor file: shape entries must be >= 0");
    shape.push_back(d.get<std::size_t>());
  }
  std::vector<double> data(shape_size(shape));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != data.size() * sizeof(double)) {
    throw FormatError("tensor file: truncated payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("tensor file: trailing bytes after payload");
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace carbongrid
