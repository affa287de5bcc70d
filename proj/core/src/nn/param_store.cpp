#include "hamil/nn/param_store.hpp"

#include "hamil/common/errors.hpp"

#include <numeric>

namespace hamil::nn {

template <typename T>
int ParamStore<T>::add(std::string name, std::vector<int> shape, bool trainable) {
  require(find(name) < 0, "duplicate tensor name");
  const std::int64_t n = std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  NamedTensor<T> t;
  t.name = std::move(name);
  t.shape = std::move(shape);
  t.value = Vec<T>::Zero(n);
  t.trainable = trainable;
  tensors_.push_back(std::move(t));
  return static_cast<int>(tensors_.size() - 1);
}

template <typename T>
int ParamStore<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return static_cast<int>(i);
  return -1;
}

template <typename T>
std::int64_t ParamStore<T>::scalar_count(bool trainable_only) const {
  std::int64_t n = 0;
  for (const auto& t : tensors_)
    if (!trainable_only || t.trainable) n += t.size();
  return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros_like() const {
  ParamStore out = *this;
  out.set_zero();
  return out;
}

template <typename T>
void ParamStore<T>::set_zero() {
  for (auto& t : tensors_) t.value.setZero();
}

template <typename T>
void ParamStore<T>::add_scaled(const ParamStore& other, T scale) {
  require(same_layout(other), "parameter layout mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value += scale * other.tensors_[i].value;
}

template <typename T>
bool ParamStore<T>::same_layout(const ParamStore& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name != other.tensors_[i].name || tensors_[i].shape != other.tensors_[i].shape) return false;
  return true;
}

template <typename To, typename From>
ParamStore<To> cast_store(const ParamStore<From>& from) {
  ParamStore<To> out;
  for (const auto& t : from) {
    const int i = out.add(t.name, t.shape, t.trainable);
    out[i].value = t.value.template cast<To>();
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ParamStore<float> cast_store<float, float>(const ParamStore<float>&);
template ParamStore<float> cast_store<float, double>(const ParamStore<double>&);
template ParamStore<double> cast_store<double, float>(const ParamStore<float>&);
template ParamStore<double> cast_store<double, double>(const ParamStore<double>&);

}  // namespace hamil::nn
