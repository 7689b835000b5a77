#include "curio/eval/novel_view.hpp"

#include "curio/errors.hpp"

namespace curio::eval {

EvalReport novel_view_eval(const nn::Model& model, const worlds::Dataset& data,
                           const render::Camera& novel, const EvalOptions& options) {
  if (novel == data.world.camera) {
    throw InvalidConfig("the evaluation camera must differ from the training camera");
  }
  const std::size_t begin = data.split.test_begin();
  if (data.split.test == 0) throw InvalidConfig("dataset has no test split");
  const std::vector<render::Image> images(data.images.begin() + static_cast<long>(begin),
                                          data.images.begin() + static_cast<long>(begin + data.split.test));
  std::vector<SceneCode> gt;
  for (std::size_t i = 0; i < data.split.test; ++i) gt.push_back(data.label(begin + i));
  return evaluate_codes(model.predict(images), gt, data.world, novel, options);
}

}  // namespace curio::eval
