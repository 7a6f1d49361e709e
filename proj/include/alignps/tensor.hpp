// Dense row-major tensor of rank 1..4 backed by a flat Eigen array.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace alignps {

template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  template <int Options = Eigen::RowMajor>
  using MatMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Options>>;
  template <int Options = Eigen::RowMajor>
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Options>>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Storage::Zero(count());
  }

  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(Scalar v) { return full({1}, v); }

  static Tensor from_vector(const std::vector<Scalar>& v) {
    Tensor t({static_cast<int>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) t.data_[static_cast<Eigen::Index>(i)] = v[i];
    return t;
  }

  template <typename Rng>
  static Tensor randn(std::vector<int> shape, Rng& rng, Scalar stddev = Scalar(1)) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < t.data_.size(); ++i)
      t.data_[i] = static_cast<Scalar>(dist(rng)) * stddev;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  Eigen::Index numel() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  Scalar& operator()(int a) { return data_[a]; }
  Scalar operator()(int a) const { return data_[a]; }

  Scalar& operator()(int a, int b) { return data_[flat2(a, b)]; }
  Scalar operator()(int a, int b) const { return data_[flat2(a, b)]; }

  Scalar& operator()(int a, int b, int c) { return data_[flat3(a, b, c)]; }
  Scalar operator()(int a, int b, int c) const { return data_[flat3(a, b, c)]; }

  Scalar& operator()(int a, int b, int c, int d) { return data_[flat4(a, b, c, d)]; }
  Scalar operator()(int a, int b, int c, int d) const { return data_[flat4(a, b, c, d)]; }

  // 2-D view as (rows x cols); requires rows*cols == numel().
  MatMap<> mat(int rows, int cols) {
    require(static_cast<Eigen::Index>(rows) * cols == numel(), "mat: size mismatch");
    return MatMap<>(data_.data(), rows, cols);
  }
  ConstMatMap<> mat(int rows, int cols) const {
    require(static_cast<Eigen::Index>(rows) * cols == numel(), "mat: size mismatch");
    return ConstMatMap<>(data_.data(), rows, cols);
  }

  // Natural matrix view of a rank-2 tensor.
  MatMap<> mat() { return mat(dim(0), dim(1)); }
  ConstMatMap<> mat() const { return mat(dim(0), dim(1)); }

  Tensor reshaped(std::vector<int> shape) const {
    Tensor t;
    t.shape_ = std::move(shape);
    t.check_shape();
    require(t.count() == numel(), "reshape: element count mismatch");
    t.data_ = data_;
    return t;
  }

  void set_zero() { data_.setZero(); }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  Eigen::Index flat2(int a, int b) const {
    return static_cast<Eigen::Index>(a) * shape_[1] + b;
  }
  Eigen::Index flat3(int a, int b, int c) const {
    return (static_cast<Eigen::Index>(a) * shape_[1] + b) * shape_[2] + c;
  }
  Eigen::Index flat4(int a, int b, int c, int d) const {
    return ((static_cast<Eigen::Index>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  Eigen::Index count() const {
    Eigen::Index n = 1;
    for (int d : shape_) n *= d;
    return n;
  }

  void check_shape() const {
    require(!shape_.empty() && shape_.size() <= 4, "tensor rank must be 1..4");
    for (int d : shape_) require(d >= 0, "negative dimension");
  }

  static void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("Tensor: ") + msg);
  }

  std::vector<int> shape_;
  Storage data_;
};

using Tensord = Tensor<double>;
using Tensorf = Tensor<float>;

}  // namespace alignps
