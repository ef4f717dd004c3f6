#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace heteo {

/// Dense row-major float32 tensor as stored in an EOT1 container.
///
/// `meta` holds any header keys beyond shape/dtype/order (source label,
/// pipeline fingerprint, unit ids); they round-trip untouched.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  nlohmann::json meta = nlohmann::json::object();

  Tensor() = default;
  Tensor(std::vector<std::int64_t> shape_, std::vector<float> data_);

  std::size_t element_count() const;
  std::size_t rank() const { return shape.size(); }
};

std::size_t shape_product(const std::vector<std::int64_t>& shape);

// EOT1 layout:
//   "EOT1" | uint32 LE header length | JSON header | float32 LE payload
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(std::string_view bytes);

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& t, const std::filesystem::path& path);

}  // namespace heteo
