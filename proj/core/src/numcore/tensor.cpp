#include "mal/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mal/error.hpp"
#include "mal/numcore/param_store.hpp"

namespace mal::numcore {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    fail(ErrorKind::Shape, "tensor of shape " + shape_string(shape_) + " given " + std::to_string(values_.size()) +
                               " values");
  }
}

void Tensor::fill(double value) noexcept { std::fill(values_.begin(), values_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) fail(ErrorKind::Config, "duplicate parameter name " + name);
  ParamEntry e;
  e.grad = Tensor(value.shape());
  e.moment1 = Tensor(value.shape());
  e.moment2 = Tensor(value.shape());
  e.value = std::move(value);
  return entries_.emplace(name, std::move(e)).first->second.value;
}

ParamEntry& ParamStore::entry(const std::string& name) {
  const auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorKind::Index, "unknown parameter " + name);
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorKind::Index, "unknown parameter " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, e] : entries_) e.grad.fill(0.0);
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, e] : entries_) {
    if (name.compare(0, prefix.size(), prefix) == 0) e.trainable = trainable;
  }
}

}  // namespace mal::numcore
