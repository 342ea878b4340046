#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dpmkit/common.hpp"
#include "dpmkit/tape.hpp"

namespace dpmkit {

// Named parameter set. std::map keeps iteration order deterministic, which
// matters for reproducible optimizer updates and archive layout.
class ParamStore {
 public:
  Mat& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::config, "unknown parameter: " + name);
    return it->second;
  }
  const Mat& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::config, "unknown parameter: " + name);
    return it->second;
  }

  void add(const std::string& name, Mat value) {
    require(!params_.count(name), ErrorKind::config, "duplicate parameter: " + name);
    params_.emplace(name, std::move(value));
  }

  void set(const std::string& name, Mat value) { params_[name] = std::move(value); }
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  void remove(const std::string& name) { params_.erase(name); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& kv : params_) out.push_back(kv.first);
    return out;
  }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& kv : params_)
      if (kv.first.rfind(prefix, 0) == 0) out.push_back(kv.first);
    return out;
  }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Mat> params_;
};

// One training step's compute graph: a tape plus the bindings from parameter
// names to their leaf nodes. Parameters bound more than once share a leaf so
// gradients accumulate correctly.
class Graph {
 public:
  explicit Graph(ParamStore& store) : store_(&store) {}

  Tape tape;

  Var param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape.leaf(store_->at(name));
    bound_.emplace(name, v);
    return v;
  }

  // Frozen view of a parameter: participates in the forward pass but never
  // accumulates a gradient.
  Var frozen(const std::string& name) {
    auto it = frozen_.find(name);
    if (it != frozen_.end()) return it->second;
    Var v = tape.constant(store_->at(name));
    frozen_.emplace(name, v);
    return v;
  }

  void backward(Var loss) { tape.backward(loss); }

  // Gradients for every bound (non-frozen) parameter, in name order.
  std::map<std::string, Mat> grads() const {
    std::map<std::string, Mat> out;
    for (const auto& kv : bound_) out.emplace(kv.first, tape.grad_or_zero(kv.second));
    return out;
  }

  Mat grad_of(const std::string& name) const {
    auto it = bound_.find(name);
    require(it != bound_.end(), ErrorKind::config, "parameter not bound: " + name);
    return tape.grad_or_zero(it->second);
  }

  ParamStore& store() { return *store_; }

 private:
  ParamStore* store_;
  std::map<std::string, Var> bound_;
  std::map<std::string, Var> frozen_;
};

}  // namespace dpmkit
