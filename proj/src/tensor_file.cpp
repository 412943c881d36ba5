// SPDX-License-Identifier: Apache-2.0
#include "pwt/tensor_file.hpp"

#include <cstring>
#include <fstream>

#include "pwt/error.hpp"

namespace pwt {

namespace {

constexpr char kMagic[4] = {'P', 'W', 'T', '1'};

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  return v;
}

template <typename T>
std::vector<std::byte> to_bytes(const std::vector<T>& v) {
  std::vector<std::byte> b(v.size() * sizeof(T));
  if (!v.empty()) std::memcpy(b.data(), v.data(), b.size());
  return b;
}

template <typename T>
std::vector<T> from_bytes(const std::vector<std::byte>& b) {
  std::vector<T> v(b.size() / sizeof(T));
  if (!v.empty()) std::memcpy(v.data(), b.data(), v.size() * sizeof(T));
  return v;
}

std::int64_t product(const std::vector<std::int64_t>& dims) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
  }
  throw Error("bad-tensor-dtype", "unknown dtype code");
}

std::int64_t TensorFile::element_count() const { return product(dims); }

TensorFile TensorFile::from_f64(std::vector<std::int64_t> d, const std::vector<double>& v) {
  TensorFile t;
  t.dtype = DType::f64;
  t.dims = std::move(d);
  t.payload = to_bytes(v);
  if (t.element_count() != static_cast<std::int64_t>(v.size()))
    throw Error("bad-tensor-shape", "dims do not match element count");
  return t;
}

TensorFile TensorFile::from_f32(std::vector<std::int64_t> d, const std::vector<float>& v) {
  TensorFile t;
  t.dtype = DType::f32;
  t.dims = std::move(d);
  t.payload = to_bytes(v);
  if (t.element_count() != static_cast<std::int64_t>(v.size()))
    throw Error("bad-tensor-shape", "dims do not match element count");
  return t;
}

TensorFile TensorFile::from_u8(std::vector<std::int64_t> d, const std::vector<std::uint8_t>& v) {
  TensorFile t;
  t.dtype = DType::u8;
  t.dims = std::move(d);
  t.payload = to_bytes(v);
  if (t.element_count() != static_cast<std::int64_t>(v.size()))
    throw Error("bad-tensor-shape", "dims do not match element count");
  return t;
}

TensorFile TensorFile::from_matrix(const Eigen::ArrayXXd& a) {
  std::vector<double> v(static_cast<std::size_t>(a.size()));
  // row-major on disk
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) v[static_cast<std::size_t>(r * a.cols() + c)] = a(r, c);
  return from_f64({a.rows(), a.cols()}, v);
}

std::vector<double> TensorFile::as_f64() const {
  if (dtype != DType::f64) throw Error("bad-tensor-dtype", "expected f64le");
  return from_bytes<double>(payload);
}

std::vector<float> TensorFile::as_f32() const {
  if (dtype != DType::f32) throw Error("bad-tensor-dtype", "expected f32le");
  return from_bytes<float>(payload);
}

std::vector<std::uint8_t> TensorFile::as_u8() const {
  if (dtype != DType::u8) throw Error("bad-tensor-dtype", "expected u8");
  return from_bytes<std::uint8_t>(payload);
}

Eigen::ArrayXXd TensorFile::as_matrix() const {
  if (dims.size() != 2) throw Error("bad-tensor-shape", "expected 2-D tensor");
  const auto v = to_f64_widened();
  Eigen::ArrayXXd a(dims[0], dims[1]);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = v[static_cast<std::size_t>(r * a.cols() + c)];
  return a;
}

std::vector<double> TensorFile::to_f64_widened() const {
  switch (dtype) {
    case DType::f64: return from_bytes<double>(payload);
    case DType::f32: {
      const auto f = from_bytes<float>(payload);
      return {f.begin(), f.end()};
    }
    case DType::u8: {
      const auto u = from_bytes<std::uint8_t>(payload);
      return {u.begin(), u.end()};
    }
  }
  throw Error("bad-tensor-dtype", "unknown dtype code");
}

void write_tensor(const std::filesystem::path& path, const TensorFile& t) {
  if (t.element_count() * static_cast<std::int64_t>(dtype_size(t.dtype)) !=
      static_cast<std::int64_t>(t.payload.size()))
    throw Error("bad-tensor-shape", "payload length does not match dims");
  std::vector<std::byte> buf;
  buf.reserve(64 + t.payload.size());
  for (char c : kMagic) buf.push_back(static_cast<std::byte>(c));
  buf.push_back(static_cast<std::byte>(t.dtype));
  buf.push_back(static_cast<std::byte>(t.dims.size()));
  for (auto d : t.dims) put_u64(buf, static_cast<std::uint64_t>(d));
  const std::string meta = t.meta.dump();
  put_u64(buf, meta.size());
  for (char c : meta) buf.push_back(static_cast<std::byte>(c));
  buf.insert(buf.end(), t.payload.begin(), t.payload.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io-error", "cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("io-error", "short write: " + path.string());
}

TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("io-error", "cannot open for read: " + path.string());
  const auto file_size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> buf(file_size);
  if (file_size > 0) in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(file_size));
  if (!in && file_size > 0) throw Error("io-error", "short read: " + path.string());

  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (buf.size() - off < n) throw Error("bad-tensor-header", "truncated file: " + path.string());
  };
  need(6);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw Error("bad-tensor-header", "bad magic: " + path.string());
  off = 4;
  const auto dtype_code = std::to_integer<std::uint8_t>(buf[off++]);
  if (dtype_code > 2) throw Error("bad-tensor-header", "unknown dtype code");
  const auto ndim = std::to_integer<std::uint8_t>(buf[off++]);

  TensorFile t;
  t.dtype = static_cast<DType>(dtype_code);
  need(8 * static_cast<std::size_t>(ndim) + 8);
  t.dims.resize(ndim);
  for (int i = 0; i < ndim; ++i, off += 8) t.dims[i] = static_cast<std::int64_t>(get_u64(buf.data() + off));
  const std::uint64_t meta_len = get_u64(buf.data() + off);
  off += 8;
  need(meta_len);
  std::string meta_str(meta_len, '\0');
  std::memcpy(meta_str.data(), buf.data() + off, meta_len);
  off += meta_len;
  try {
    t.meta = meta_str.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception&) {
    throw Error("bad-tensor-header", "metadata is not valid JSON");
  }

  const std::uint64_t payload_len =
      static_cast<std::uint64_t>(t.element_count()) * dtype_size(t.dtype);
  need(payload_len);
  if (buf.size() - off != payload_len)
    throw Error("bad-tensor-header", "payload length does not match dims");
  t.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(off), buf.end());
  return t;
}

}  // namespace pwt
