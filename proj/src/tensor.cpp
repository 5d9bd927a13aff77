#include "fct/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace fct {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

Tensor::Tensor() : Tensor(Shape{0}, DType::f32, std::make_shared<Buffer>(std::vector<float>{})) {}

Tensor::Tensor(Shape shape, DType dtype, std::shared_ptr<Buffer> storage)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)), dtype_(dtype), storage_(std::move(storage)) {}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  if (dtype == DType::f32)
    return Tensor(std::move(shape), dtype, std::make_shared<Buffer>(std::vector<float>(n, static_cast<float>(value))));
  return Tensor(std::move(shape), dtype, std::make_shared<Buffer>(std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  return Tensor(std::move(shape), DType::f32, std::make_shared<Buffer>(std::move(values)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  return Tensor(std::move(shape), DType::f64, std::make_shared<Buffer>(std::move(values)));
}

Tensor Tensor::scalar(double value, DType dtype) { return full(Shape{}, value, dtype); }

Tensor Tensor::meta(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype, nullptr); }

std::int64_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(shape_.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(a)];
}

template <typename T>
std::span<const T> Tensor::data() const {
  if (!storage_) throw ValueError("data() on a meta tensor " + shape_str(shape_));
  if (dtype_ != dtype_of<T>())
    throw ValueError(std::string("dtype mismatch: tensor is ") + dtype_name(dtype_) + ", requested " +
                     dtype_name(dtype_of<T>()));
  const auto& v = std::get<std::vector<T>>(*storage_);
  return {v.data(), v.size()};
}

template <typename T>
std::span<T> Tensor::mutable_data() {
  if (!storage_) throw ValueError("mutable_data() on a meta tensor " + shape_str(shape_));
  if (dtype_ != dtype_of<T>())
    throw ValueError(std::string("dtype mismatch: tensor is ") + dtype_name(dtype_) + ", requested " +
                     dtype_name(dtype_of<T>()));
  if (storage_.use_count() > 1) storage_ = std::make_shared<Buffer>(*storage_);
  auto& v = std::get<std::vector<T>>(*storage_);
  return {v.data(), v.size()};
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::flat(std::int64_t i) const {
  if (i < 0 || i >= numel_) throw ShapeError("flat index " + std::to_string(i) + " out of range");
  return dispatch(dtype_, [&]<typename T>() { return static_cast<double>(data<T>()[static_cast<std::size_t>(i)]); });
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank does not match shape " + shape_str(shape_));
  std::int64_t offset = 0;
  std::size_t a = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[a]) throw ShapeError("index out of range for shape " + shape_str(shape_));
    offset = offset * shape_[a] + i;
    ++a;
  }
  return flat(offset);
}

double Tensor::item() const {
  if (numel_ != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return flat(0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype_, [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return *this;
  if (!storage_) return meta(shape_, dtype);
  if (dtype == DType::f64) {
    auto d = data<float>();
    return from(shape_, std::vector<double>(d.begin(), d.end()));
  }
  auto d = data<double>();
  std::vector<float> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = static_cast<float>(d[i]);
  return from(shape_, std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel_)
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape) + ": element count differs");
  return Tensor(std::move(shape), dtype_, storage_);
}

Tensor Tensor::clone() const {
  if (!storage_) return *this;
  return Tensor(shape_, dtype_, std::make_shared<Buffer>(*storage_));
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  if (is_meta() || other.is_meta()) return is_meta() && other.is_meta();
  return dispatch(dtype_, [&]<typename T>() {
    auto a = data<T>();
    auto b = other.data<T>();
    return std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
  });
}

bool Tensor::all_finite() const {
  if (!storage_) return true;
  return dispatch(dtype_, [&]<typename T>() {
    for (T v : data<T>())
      if (!std::isfinite(v)) return false;
    return true;
  });
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_fctt(const Tensor& tensor) {
  if (tensor.is_meta()) throw ValueError("cannot encode a meta tensor");
  if (tensor.rank() > 255) throw ShapeError("rank too large for .fctt");
  const Tensor t = tensor.to(DType::f32);
  std::vector<std::uint8_t> out{'F', 'C', 'T', 'T', 1, static_cast<std::uint8_t>(t.rank())};
  out.reserve(6 + 4 * t.rank() + 4 * static_cast<std::size_t>(t.numel()));
  for (auto e : t.shape()) {
    if (e > 0xFFFFFFFFll) throw ShapeError("extent too large for .fctt");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (float v : t.data<float>()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_fctt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), "FCTT", 4) != 0) throw IoError(".fctt: bad magic");
  if (bytes[4] != 1) throw IoError(".fctt: unsupported version " + std::to_string(bytes[4]));
  const std::size_t rank = bytes[5];
  std::size_t at = 6;
  if (bytes.size() < at + 4 * rank) throw IoError(".fctt: truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, at += 4) shape[i] = get_u32(bytes, at);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  if (bytes.size() != at + 4 * n)
    throw IoError(".fctt: payload is " + std::to_string(bytes.size() - at) + " bytes, expected " +
                  std::to_string(4 * n) + " for shape " + shape_str(shape));
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i, at += 4) values[i] = std::bit_cast<float>(get_u32(bytes, at));
  return Tensor::from(std::move(shape), std::move(values));
}

void save_fctt(const Tensor& tensor, const std::filesystem::path& path) {
  const auto bytes = encode_fctt(tensor);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Tensor load_fctt(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_fctt(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace fct
