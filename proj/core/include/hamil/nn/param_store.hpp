#pragma once

#include "hamil/common/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace hamil::nn {

template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  Vec<T> value;
  // Non-trainable tensors (batch-norm running statistics) are checkpointed
  // but never touched by the optimizer.
  bool trainable = true;

  std::int64_t size() const { return value.size(); }
};

// Ordered collection of named tensors. The single owner of every model's
// parameters; gradient collections are built with zeros_like().
template <typename T>
class ParamStore {
 public:
  int add(std::string name, std::vector<int> shape, bool trainable = true);

  NamedTensor<T>& operator[](int index) { return tensors_[static_cast<std::size_t>(index)]; }
  const NamedTensor<T>& operator[](int index) const { return tensors_[static_cast<std::size_t>(index)]; }

  int find(const std::string& name) const;  // -1 when absent
  std::size_t size() const { return tensors_.size(); }
  std::int64_t scalar_count(bool trainable_only = false) const;

  ParamStore zeros_like() const;
  void set_zero();
  // this += scale * other; shapes must match.
  void add_scaled(const ParamStore& other, T scale);
  bool same_layout(const ParamStore& other) const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::vector<NamedTensor<T>> tensors_;
};

// Copies every tensor across precisions (used by checkpoint I/O).
template <typename To, typename From>
ParamStore<To> cast_store(const ParamStore<From>& from);

}  // namespace hamil::nn
