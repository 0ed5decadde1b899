#pragma once

#include <cstring>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vit3d/error.hpp"

namespace vit3d {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array of Scalar with an explicit shape. A rank-0 tensor
/// (empty shape) holds one value.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() : data_(Array::Zero(1)) {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Array::Zero(numel(shape_));
  }
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != numel(shape_)) {
      throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          vit3d::to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Array::Constant(n, value));
  }
  static Tensor scalar(Scalar value) { return Tensor({}, Array::Constant(1, value)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  // Negative axes count from the end.
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis < 0 ? rank() + axis : axis)); }
  Index size() const { return data_.size(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + vit3d::to_string(shape_));
    return data_[0];
  }

  // View as (rows, cols) with cols = last dim (1 for scalars).
  Eigen::Map<RowMatrix> as_matrix(Index rows, Index cols) { return {data_.data(), rows, cols}; }
  Eigen::Map<const RowMatrix> as_matrix(Index rows, Index cols) const { return {data_.data(), rows, cols}; }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size()) {
      throw ContractError("cannot reshape " + vit3d::to_string(shape_) + " to " + vit3d::to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data_.data(), other.data_.data(), static_cast<std::size_t>(size()) * sizeof(Scalar)) == 0;
  }

 private:
  void check_shape() const {
    for (Index d : shape_) {
      if (d <= 0) throw ContractError("tensor dims must be positive, got " + vit3d::to_string(shape_));
    }
  }

  Shape shape_;
  Array data_;
};

/// Ordered collection of named tensors with stable insertion order, used for
/// model parameters, gradients and optimizer moments.
template <typename Scalar>
class NamedTensors {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  void insert(std::string name, Tensor<Scalar> value) {
    if (index_.count(name)) throw ContractError("duplicate tensor name " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor<Scalar>& at(const std::string& name) { return entries_[lookup(name)].second; }
  const Tensor<Scalar>& at(const std::string& name) const { return entries_[lookup(name)].second; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  Index total_elements() const {
    Index n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  bool bit_equal(const NamedTensors& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].first != other.entries_[i].first || !entries_[i].second.bit_equal(other.entries_[i].second)) {
        return false;
      }
    }
    return true;
  }

  template <typename Other>
  NamedTensors<Other> cast() const {
    NamedTensors<Other> out;
    for (const auto& [name, t] : entries_) out.insert(name, t.template cast<Other>());
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown tensor name " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
using ParamStore = NamedTensors<Scalar>;

}  // namespace vit3d
