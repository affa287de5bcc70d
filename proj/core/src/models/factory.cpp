#include "hamil/models/model.hpp"

namespace hamil::models {

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::hamil: return std::make_unique<HamilModel<T>>(spec);
    case ModelKind::abmil: return std::make_unique<AbmilModel<T>>(spec);
    case ModelKind::dtfd: return std::make_unique<DtfdModel<T>>(spec);
    case ModelKind::supervised3d: return std::make_unique<Supervised3dModel<T>>(spec);
  }
  return nullptr;
}

template std::unique_ptr<Model<float>> make_model<float>(const ModelSpec&);
template std::unique_ptr<Model<double>> make_model<double>(const ModelSpec&);

}  // namespace hamil::models
