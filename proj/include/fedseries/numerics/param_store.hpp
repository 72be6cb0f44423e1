#pragma once

#include "fedseries/numerics/tensor.hpp"

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fedseries {

/// One named parameter tensor with its gradient slot.
template <typename Scalar>
struct ParamEntry {
  std::string name;
  std::string layer;  // aggregation group
  Shape shape;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Index size() const { return value.size(); }
};

/// Ordered collection of named parameters. Iteration follows insertion order.
template <typename Scalar>
class ParamStore {
 public:
  using Entry = ParamEntry<Scalar>;

  /// Adds a parameter. Rank-1 shapes are stored as a 1×n row.
  Entry& add(std::string name, std::string layer, Shape shape, Matrix<Scalar> value) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
    if (shape.empty() || shape.size() > 2) {
      throw ShapeError("parameter " + name + ": rank must be 1 or 2");
    }
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("parameter " + name + ": non-positive dimension");
    }
    const Index rows = shape.size() == 2 ? shape[0] : 1;
    const Index cols = shape.back();
    if (value.rows() != rows || value.cols() != cols) {
      throw ShapeError("parameter " + name + ": value does not match shape " + shape_string(shape));
    }
    index_.emplace(name, entries_.size());
    Entry e{std::move(name), std::move(layer), std::move(shape), std::move(value), {}};
    e.grad = Matrix<Scalar>::Zero(rows, cols);
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  Entry& add(std::string name, Shape shape, Matrix<Scalar> value) {
    std::string layer = name;
    return add(std::move(name), std::move(layer), std::move(shape), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Entry& at(const std::string& name) { return entries_[lookup(name)]; }
  const Entry& at(const std::string& name) const { return entries_[lookup(name)]; }
  std::size_t position(const std::string& name) const { return lookup(name); }

  std::span<Entry> entries() { return entries_; }
  std::span<const Entry> entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  Index total_size() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.size();
    return n;
  }

  Vector<Scalar> flatten() const { return gather([](const Entry& e) -> auto& { return e.value; }); }
  Vector<Scalar> flatten_grads() const {
    return gather([](const Entry& e) -> auto& { return e.grad; });
  }

  void unflatten(const Eigen::Ref<const Vector<Scalar>>& flat) {
    if (flat.size() != total_size()) throw ShapeError("unflatten: length mismatch");
    Index off = 0;
    for (auto& e : entries_) {
      e.value = Eigen::Map<const Matrix<Scalar>>(flat.data() + off, e.value.rows(), e.value.cols());
      off += e.size();
    }
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
  }

  /// Distinct layer tags in first-appearance order.
  std::vector<std::string> layers() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (std::find(out.begin(), out.end(), e.layer) == out.end()) out.push_back(e.layer);
    }
    return out;
  }

  /// True when both stores hold the same names, tags and shapes in the same order.
  bool same_layout(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.layer != b.layer || a.shape != b.shape) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  template <typename Get>
  Vector<Scalar> gather(Get get) const {
    Vector<Scalar> flat(total_size());
    Index off = 0;
    for (const auto& e : entries_) {
      const auto& m = get(e);
      flat.segment(off, m.size()) = Eigen::Map<const Vector<Scalar>>(m.data(), m.size());
      off += m.size();
    }
    return flat;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace fedseries
