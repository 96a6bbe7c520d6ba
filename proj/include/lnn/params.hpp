#pragma once

// Named parameter store. Parameters are created once in a fixed order (which
// also fixes the initialization stream) and registered lazily on a tape per
// forward pass through a ParamContext.

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lnn/common.hpp"
#include "lnn/rng.hpp"
#include "lnn/tape.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

enum class ParamGroup { Euclidean, LogScalar, Manifold };

template <typename T>
struct ParamDef {
  std::string name;
  Tensor<T> value;
  ParamGroup group = ParamGroup::Euclidean;
};

template <typename T>
class ParamStore {
 public:
  using Id = std::size_t;

  Id add(std::string name, Tensor<T> value, ParamGroup group = ParamGroup::Euclidean) {
    if (index_.count(name)) throw usage_error("duplicate parameter " + name);
    index_[name] = items_.size();
    items_.push_back(ParamDef<T>{std::move(name), std::move(value), group});
    return items_.size() - 1;
  }

  Id add_normal(std::string name, Shape shape, Rng& rng, double stddev,
                ParamGroup group = ParamGroup::Euclidean) {
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
    return add(std::move(name), std::move(t), group);
  }

  std::size_t size() const { return items_.size(); }
  ParamDef<T>& def(Id id) { return items_[id]; }
  const ParamDef<T>& def(Id id) const { return items_[id]; }
  Tensor<T>& value(Id id) { return items_[id].value; }
  const Tensor<T>& value(Id id) const { return items_[id].value; }

  Id find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw usage_error("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

 private:
  std::vector<ParamDef<T>> items_;
  std::unordered_map<std::string, Id> index_;
};

// Per-tape registration cache; each parameter becomes one tracked leaf per
// forward pass no matter how many layers touch it.
template <typename T>
class ParamContext {
 public:
  ParamContext(Tape<T>& tape, ParamStore<T>& store, bool track = true)
      : tape_(&tape), store_(&store), track_(track), cache_(store.size()) {}

  Value<T> operator[](typename ParamStore<T>::Id id) {
    if (id >= cache_.size()) cache_.resize(store_->size());
    if (!cache_[id]) cache_[id] = tape_->leaf(store_->value(id), track_);
    return *cache_[id];
  }

  // Adopt an existing leaf for a parameter (finite-difference harnesses hand
  // their own perturbed leaves to the layers this way).
  void preset(typename ParamStore<T>::Id id, Value<T> v) {
    if (id >= cache_.size()) cache_.resize(store_->size());
    if (v.val().shape() != store_->value(id).shape())
      throw dim_error("preset leaf shape mismatch for " + store_->def(id).name);
    cache_[id] = v;
  }

  bool registered(typename ParamStore<T>::Id id) const {
    return id < cache_.size() && cache_[id].has_value();
  }

  // Gradient for a parameter after backward; zeros if it never entered.
  Tensor<T> grad(typename ParamStore<T>::Id id) const {
    if (!registered(id)) return Tensor<T>(store_->value(id).shape(), T(0));
    return tape_->grad(*cache_[id]);
  }

  Tape<T>& tape() { return *tape_; }

 private:
  Tape<T>* tape_;
  ParamStore<T>* store_;
  bool track_;
  std::vector<std::optional<Value<T>>> cache_;
};

}  // namespace lnn
