#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seanet/common.hpp"

namespace seanet {

/// Buffer type for everything Eigen kernels may touch. The consistent
/// max alignment keeps Eigen's vectorized loops on one code path for every
/// allocation, which is what makes runs bit-reproducible: pointer-dependent
/// loop peeling would otherwise reorder reductions between allocations.
template <typename S>
using AlignedVec = std::vector<S, Eigen::aligned_allocator<S>>;

/// Dimension list for a dense tensor. Image tensors are NHWC, feature
/// matrices are NxC. All dims are >= 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims) : d_(dims) { validate(); }
  explicit Shape(std::vector<std::int64_t> dims) : d_(std::move(dims)) { validate(); }

  std::int64_t rank() const { return static_cast<std::int64_t>(d_.size()); }
  std::int64_t operator[](std::int64_t i) const { return d_[static_cast<std::size_t>(i)]; }
  const std::vector<std::int64_t>& dims() const { return d_; }

  std::int64_t numel() const {
    if (d_.empty()) return 0;
    std::int64_t n = 1;
    for (auto d : d_) n *= d;
    return n;
  }

  bool operator==(const Shape& o) const { return d_ == o.d_; }
  bool operator!=(const Shape& o) const { return d_ != o.d_; }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < d_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(d_[i]);
    }
    return s + "]";
  }

 private:
  void validate() const {
    for (auto d : d_) {
      if (d < 1) throw ShapeError("shape dims must be positive, got " + str());
    }
  }

  std::vector<std::int64_t> d_;
};

/// Dense row-major tensor. Copies are shallow handles: data, the gradient
/// buffer and the requires_grad flag live in shared storage so every handle
/// of one tensor agrees on them. Data is immutable after creation except
/// through optimizer updates. The (graph id, node id) stamp is per-handle
/// and ties a value to the tape that produced it.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(const Shape& shape, Scalar fill = Scalar(0)) {
    if (shape.rank() == 0) throw ShapeError("tensor shape must have at least one dim");
    shape_ = shape;
    st_ = std::make_shared<Storage>();
    st_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
  }

  static Tensor from(const Shape& shape, const std::vector<Scalar>& values) {
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    Tensor t(shape);
    t.st_->data.assign(values.begin(), values.end());
    return t;
  }

  bool empty() const { return !st_; }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return shape_.rank(); }
  std::int64_t dim(std::int64_t i) const { return shape_[i]; }
  std::int64_t numel() const { return st_ ? static_cast<std::int64_t>(st_->data.size()) : 0; }

  Scalar* data() { return st_->data.data(); }
  const Scalar* data() const { return st_->data.data(); }
  std::span<Scalar> values() { return {st_->data.data(), st_->data.size()}; }
  std::span<const Scalar> values() const { return {st_->data.data(), st_->data.size()}; }

  Scalar& at(std::initializer_list<std::int64_t> idx) {
    return st_->data[static_cast<std::size_t>(offset_of(idx))];
  }
  Scalar at(std::initializer_list<std::int64_t> idx) const {
    return st_->data[static_cast<std::size_t>(offset_of(idx))];
  }

  Tensor& set_requires_grad(bool b) {
    st_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return st_ && st_->requires_grad; }

  bool has_grad() const { return st_ && !st_->grad.empty(); }

  void zero_grad() {
    if (!st_) return;
    st_->grad.assign(st_->data.size(), Scalar(0));
  }

  void drop_grad() {
    if (st_) st_->grad.clear();
  }

  std::span<Scalar> grad() {
    if (!has_grad()) throw GraphError("tensor has no gradient buffer");
    return {st_->grad.data(), st_->grad.size()};
  }
  std::span<const Scalar> grad() const {
    if (!has_grad()) throw GraphError("tensor has no gradient buffer");
    return {st_->grad.data(), st_->grad.size()};
  }

  void accumulate_grad(std::span<const Scalar> g) {
    if (!has_grad()) zero_grad();
    if (g.size() != st_->grad.size()) throw GraphError("gradient size mismatch");
    Scalar* dst = st_->grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  /// Deep copy of the data. Gradient buffer and tape stamp are not copied.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    if (st_) {
      t.st_ = std::make_shared<Storage>();
      t.st_->data = st_->data;
      t.st_->requires_grad = st_->requires_grad;
    }
    return t;
  }

  /// New handle onto the same storage with a different shape.
  Tensor reshaped(const Shape& s) const {
    if (s.numel() != numel()) {
      throw ShapeError("reshape from " + shape_.str() + " to " + s.str() +
                       " changes element count");
    }
    Tensor t;
    t.shape_ = s;
    t.st_ = st_;
    return t;
  }

  std::uint64_t graph_id() const { return graph_id_; }
  std::int64_t node_id() const { return node_; }
  void set_stamp(std::uint64_t gid, std::int64_t node) {
    graph_id_ = gid;
    node_ = node;
  }

 private:
  struct Storage {
    AlignedVec<Scalar> data;
    AlignedVec<Scalar> grad;  // empty until a gradient is requested
    bool requires_grad = false;
  };

  std::int64_t offset_of(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<std::int64_t>(idx.size()) != shape_.rank()) {
      throw ShapeError("index rank mismatch for shape " + shape_.str());
    }
    std::int64_t off = 0;
    std::int64_t d = 0;
    for (auto i : idx) {
      off = off * shape_[d] + i;
      ++d;
    }
    return off;
  }

  Shape shape_;
  std::shared_ptr<Storage> st_;
  std::uint64_t graph_id_ = 0;
  std::int64_t node_ = -1;
};

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatrixRM<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatrixRM<S>>;
template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <typename S>
MatMap<S> as_matrix(Tensor<S>& t, std::int64_t rows, std::int64_t cols) {
  return MatMap<S>(t.data(), rows, cols);
}
template <typename S>
ConstMatMap<S> as_matrix(const Tensor<S>& t, std::int64_t rows, std::int64_t cols) {
  return ConstMatMap<S>(t.data(), rows, cols);
}
template <typename S>
ArrMap<S> as_array(Tensor<S>& t) {
  return ArrMap<S>(t.data(), t.numel());
}
template <typename S>
ConstArrMap<S> as_array(const Tensor<S>& t) {
  return ConstArrMap<S>(t.data(), t.numel());
}

/// NaN/Inf is an error state, never silent: every op calls this on its
/// output. A single reduction keeps the check cheap; non-finite values
/// poison the sum.
template <typename S>
void require_finite(const Tensor<S>& t, const char* op) {
  const S total = as_array(t).sum();
  if (!std::isfinite(static_cast<double>(total))) {
    if (!as_array(t).isFinite().all()) {
      throw NumericError(std::string(op) + " produced non-finite values");
    }
  }
}

template <typename S>
void fill_uniform(Tensor<S>& t, Rng& rng, double lo, double hi) {
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(lo, hi));
}

}  // namespace seanet
