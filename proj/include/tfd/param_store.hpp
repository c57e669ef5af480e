#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "tfd/rng.hpp"
#include "tfd/tensor.hpp"

namespace tfd {

/// Named parameter registry. Iteration follows insertion order; references
/// returned by add()/at() stay valid for the store's lifetime.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Tensor& add(const std::string& name, Tensor value, bool trainable = true);
  /// Fills with N(0, stddev^2) draws from `rng`.
  Tensor& add_normal(const std::string& name, Shape shape, double stddev, Rng& rng);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grads();
  void set_trainable(bool on);

  /// Copies values from `other`; names and shapes must match exactly.
  /// Throws ShapeError naming the first offending parameter.
  void assign_from(const ParamStore& other);

  /// Bitwise equality of names, shapes and values.
  bool identical(const ParamStore& other) const;

 private:
  std::deque<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace tfd
