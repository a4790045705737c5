#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace crackbench {

/// Thrown whenever operand extents do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NCHW extents. Every tensor in the engine is 4-D; scalars are 1x1x1x1.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  constexpr Shape() = default;
  constexpr Shape(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {}

  [[nodiscard]] constexpr std::ptrdiff_t numel() const {
    return static_cast<std::ptrdiff_t>(n) * c * h * w;
  }
  [[nodiscard]] constexpr std::ptrdiff_t plane() const {
    return static_cast<std::ptrdiff_t>(h) * w;
  }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

/// Dense NCHW array backed by an Eigen column vector.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(validated(shape)), data_(Vector::Constant(shape.numel(), fill)) {}
  Tensor(Shape shape, Vector data) : shape_(validated(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s, Scalar(0)); }
  static Tensor constant(Shape s, Scalar v) { return Tensor(s, v); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::ptrdiff_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.size() == 0; }

  Vector& array() { return data_; }
  [[nodiscard]] const Vector& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  [[nodiscard]] const Scalar* data() const { return data_.data(); }

  Scalar& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  Scalar operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  Scalar& operator[](std::ptrdiff_t i) { return data_[i]; }
  Scalar operator[](std::ptrdiff_t i) const { return data_[i]; }

  /// View of one (n, c) plane as a row-major H x W matrix.
  using PlaneMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstPlaneMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  PlaneMap plane(int n, int c) { return PlaneMap(data() + index(n, c, 0, 0), shape_.h, shape_.w); }
  [[nodiscard]] ConstPlaneMap plane(int n, int c) const {
    return ConstPlaneMap(data() + index(n, c, 0, 0), shape_.h, shape_.w);
  }

  [[nodiscard]] Scalar item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  [[nodiscard]] bool all_finite() const { return data_.isFinite().all(); }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  [[nodiscard]] std::ptrdiff_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::ptrdiff_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

 private:
  static Shape validated(Shape s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
      throw ShapeError("negative extent in shape " + s.str());
    return s;
  }

  Shape shape_;
  Vector data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Single-plane maps used by losses, metrics and I/O (row-major H x W).
using BinaryMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ProbMap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool is_binary(const BinaryMap& m) { return (m <= std::uint8_t(1)).all(); }

/// A named tensor that an optimizer may update. Frozen parameters are never touched.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  bool learnable = true;
  Tensor<Scalar> grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor<Scalar> value_, bool learnable_ = true)
      : name(std::move(name_)), value(std::move(value_)), learnable(learnable_),
        grad(Tensor<Scalar>::zeros(value.shape())) {}

  void zero_grad() { grad = Tensor<Scalar>::zeros(value.shape()); }
};

}  // namespace crackbench
