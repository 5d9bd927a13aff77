#ifndef FCT_TENSOR_HPP
#define FCT_TENSOR_HPP

// Dense N-dimensional tensors.
//
// Layout is row-major with the last axis fastest. 4-D activations are NHWC
// (batch, height, width, channels) everywhere in this library.
//
// A Tensor is a cheap handle onto shared storage. Once a tensor has been
// handed to another owner it is treated as immutable; mutable_data() performs
// copy-on-write when the storage is shared.

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace fct {

using Shape = std::vector<std::int64_t>;

enum class DType : std::uint8_t { f32, f64 };

class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class ValueError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);
const char* dtype_name(DType dtype);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

class Tensor {
public:
  /// Empty rank-1 tensor with zero elements.
  Tensor();

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor ones(Shape shape, DType dtype = DType::f32) { return full(std::move(shape), 1.0, dtype); }
  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value, DType dtype = DType::f32);

  /// Shape-only tensor without storage. Operations on meta tensors compute
  /// output shapes (and FLOP counts) but never touch data.
  static Tensor meta(Shape shape, DType dtype = DType::f32);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return numel_; }
  /// Extent of axis `axis`; negative values count from the back.
  std::int64_t dim(int axis) const;
  DType dtype() const { return dtype_; }
  bool is_meta() const { return storage_ == nullptr; }

  template <typename T>
  std::span<const T> data() const;

  /// Writable view; copies the buffer first if it is shared.
  template <typename T>
  std::span<T> mutable_data();

  /// Element `i` in row-major order, widened to double.
  double flat(std::int64_t i) const;
  double at(std::initializer_list<std::int64_t> index) const;
  /// Value of a single-element tensor.
  double item() const;
  std::vector<double> to_vector() const;

  Tensor to(DType dtype) const;
  /// Reinterprets the flat buffer with a new shape; shares storage.
  Tensor reshaped(Shape shape) const;
  Tensor clone() const;

  bool bit_equal(const Tensor& other) const;
  bool all_finite() const;

private:
  using Buffer = std::variant<std::vector<float>, std::vector<double>>;

  Tensor(Shape shape, DType dtype, std::shared_ptr<Buffer> storage);

  Shape shape_;
  std::int64_t numel_ = 0;
  DType dtype_ = DType::f32;
  std::shared_ptr<Buffer> storage_;
};

/// Invokes `fn.template operator()<T>()` with T = float or double.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

// .fctt binary tensor files: "FCTT", version byte (1), rank byte, rank x u32
// little-endian extents, then row-major f32 little-endian values. f64 tensors
// are narrowed to f32 on write.
std::vector<std::uint8_t> encode_fctt(const Tensor& tensor);
Tensor decode_fctt(std::span<const std::uint8_t> bytes);
void save_fctt(const Tensor& tensor, const std::filesystem::path& path);
Tensor load_fctt(const std::filesystem::path& path);

}  // namespace fct

#endif  // FCT_TENSOR_HPP
