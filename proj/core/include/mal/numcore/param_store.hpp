#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mal/numcore/tensor.hpp"

namespace mal::numcore {

struct ParamEntry {
  Tensor value;
  Tensor grad;
  // Adam first and second moments.
  Tensor moment1;
  Tensor moment2;
  bool trainable = true;
};

// Named parameters with parallel gradient and optimizer state. Iteration is
// in name order, which keeps every sweep deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }
  const Tensor& grad(const std::string& name) const { return entry(name).grad; }

  std::vector<std::string> names() const;
  std::size_t parameter_count() const;
  void zero_grads();
  // Marks every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool trainable);

  std::map<std::string, ParamEntry>& entries() noexcept { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const noexcept { return entries_; }

  std::uint64_t step = 0;

 private:
  std::map<std::string, ParamEntry> entries_;
};

}  // namespace mal::numcore
