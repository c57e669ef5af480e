#include "tfd/param_store.hpp"

#include <cstring>

namespace tfd {

ParamStore::ParamStore(const ParamStore& other) : entries_(other.entries_), index_(other.index_) {}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    entries_ = other.entries_;
    index_ = other.index_;
  }
  return *this;
}

Tensor& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(trainable);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(value)});
  return entries_.back().tensor;
}

Tensor& ParamStore::add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return add(name, std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamStore::set_trainable(bool on) {
  for (auto& e : entries_) e.tensor.set_requires_grad(on);
}

void ParamStore::assign_from(const ParamStore& other) {
  for (const auto& e : entries_) {
    if (!other.contains(e.name)) throw ShapeError("parameter '" + e.name + "' missing from source");
  }
  for (const auto& e : other.entries_) {
    if (!contains(e.name)) throw ShapeError("unexpected parameter '" + e.name + "'");
    const Tensor& mine = at(e.name);
    if (mine.shape() != e.tensor.shape()) {
      throw ShapeError("parameter '" + e.name + "' has shape " + shape_str(e.tensor.shape()) +
                       ", expected " + shape_str(mine.shape()));
    }
  }
  for (auto& e : entries_) {
    const Tensor& src = other.at(e.name);
    std::copy(src.data().begin(), src.data().end(), e.tensor.data().begin());
  }
}

bool ParamStore::identical(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
    if (std::memcmp(a.tensor.data().data(), b.tensor.data().data(),
                    a.tensor.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace tfd
