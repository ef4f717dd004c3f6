#include "heteo/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "heteo/common.hpp"

namespace heteo {

namespace {

constexpr std::string_view kMagic = "EOT1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

void append_u32(std::string& out, std::uint32_t v) {
  v = to_le(v);
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

std::uint32_t read_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return to_le(v);
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (data.size() != element_count())
    throw ShapeError("tensor data has " + std::to_string(data.size()) + " elements, shape needs " +
                     std::to_string(element_count()));
}

std::size_t shape_product(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::size_t Tensor::element_count() const { return shape_product(shape); }

std::string encode_tensor(const Tensor& t) {
  if (t.data.size() != t.element_count()) throw ShapeError("tensor data does not match its shape");
  for (std::size_t i = 0; i < t.data.size(); ++i)
    if (!std::isfinite(t.data[i]))
      throw DomainError("non-finite tensor entry at flat index " + std::to_string(i));

  nlohmann::json header = t.meta.is_object() ? t.meta : nlohmann::json::object();
  header["shape"] = t.shape;
  header["dtype"] = "f32";
  header["order"] = "row-major";
  const std::string text = header.dump();

  std::string out;
  out.reserve(8 + text.size() + 4 * t.data.size());
  out.append(kMagic);
  append_u32(out, static_cast<std::uint32_t>(text.size()));
  out.append(text);
  for (float f : t.data) append_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Tensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != kMagic) throw FormatError("bad magic: expected EOT1");
  if (bytes.size() < 8) throw TruncationError("file ends inside the header length field");
  const std::uint32_t header_len = read_u32(bytes.data() + 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(header_len))
    throw TruncationError("file ends inside the JSON header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed EOT1 header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("shape") || !header["shape"].is_array())
    throw FormatError("EOT1 header lacks a shape array");
  if (header.value("dtype", "") != "f32") throw FormatError("unsupported dtype, expected f32");
  if (header.value("order", "") != "row-major") throw FormatError("unsupported order, expected row-major");

  Tensor t;
  t.shape = header["shape"].get<std::vector<std::int64_t>>();
  header.erase("shape");
  header.erase("dtype");
  header.erase("order");
  t.meta = std::move(header);

  const std::size_t count = shape_product(t.shape);
  const std::size_t payload = bytes.size() - 8 - header_len;
  if (payload != 4 * count)
    throw TruncationError("payload has " + std::to_string(payload) + " bytes, shape requires " +
                          std::to_string(4 * count));
  t.data.resize(count);
  const char* p = bytes.data() + 8 + header_len;
  for (std::size_t i = 0; i < count; ++i) t.data[i] = std::bit_cast<float>(read_u32(p + 4 * i));
  return t;
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_tensor(ss.str());
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  const std::string bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace heteo
