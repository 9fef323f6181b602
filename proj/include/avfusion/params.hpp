#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "avfusion/graph.hpp"
#include "avfusion/tensor.hpp"

namespace avf {

/// Named trainable tensors in a fixed insertion order.
template <class T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> value) {
    if (find(name) != npos) throw std::invalid_argument("duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& operator[](std::size_t i) { return values_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return values_[i]; }

  std::size_t index(const std::string& name) const {
    const std::size_t i = find(name);
    if (i == npos) throw std::out_of_range("no parameter named '" + name + "'");
    return i;
  }
  Tensor<T>& get(const std::string& name) { return values_[index(name)]; }
  const Tensor<T>& get(const std::string& name) const { return values_[index(name)]; }
  bool contains(const std::string& name) const { return find(name) != npos; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return npos;
  }

  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

/// Graph leaves for every parameter of a set, looked up by name.
template <class T>
struct BoundParams {
  const ParamSet<T>* set = nullptr;
  std::vector<Var> vars;

  Var operator[](const std::string& name) const { return vars[set->index(name)]; }
};

template <class T>
BoundParams<T> bind(Graph<T>& g, const ParamSet<T>& params, bool requires_grad = true) {
  BoundParams<T> b{&params, {}};
  b.vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) b.vars.push_back(g.leaf(params[i], requires_grad));
  return b;
}

}  // namespace avf
