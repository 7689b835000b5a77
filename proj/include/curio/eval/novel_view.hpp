#pragma once

#include "curio/eval/report.hpp"
#include "curio/nn/model.hpp"
#include "curio/worlds/dataset.hpp"

namespace curio::eval {

/// Encodes every test-split image, then scores the predicted codes against
/// the labels with both codes rendered from `novel`. Label access goes
/// through the dataset, so a label-hidden dataset raises CapabilityError.
/// Throws InvalidConfig when `novel` is the training camera.
EvalReport novel_view_eval(const nn::Model& model, const worlds::Dataset& data,
                           const render::Camera& novel, const EvalOptions& options = {});

}  // namespace curio::eval
