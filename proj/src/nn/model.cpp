#include "curio/nn/model.hpp"

#include <algorithm>

#include "curio/errors.hpp"
#include "curio/rng.hpp"

namespace curio::nn {

NetworkConfig network_for(const worlds::WorldSpec& world, double width_scale,
                          std::size_t latent_dim) {
  NetworkConfig cfg;
  cfg.image_size = world.image_size();
  cfg.width_scale = width_scale;
  cfg.latent_dim = latent_dim;
  cfg.n_proposals = world.max_objects;
  cfg.heads = world.groups;
  cfg.spatial_dims = world.dims;
  cfg.validate();
  return cfg;
}

Model::Model(const NetworkConfig& cfg, bool with_critic, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng = seeded_rng(seed, {0});
  encoder_ = std::make_unique<Encoder>(cfg_, gen_, rng);
  heads_ = std::make_unique<Heads>(cfg_, gen_, rng);
  if (with_critic) {
    std::mt19937_64 crng = seeded_rng(seed, {1});
    critic_ = std::make_unique<Critic>(cfg_, critic_store_, crng);
  }
}

HeadOutputs Model::forward(Tape& tape, Var images, bool training) const {
  return heads_->forward(tape, encoder_->forward(tape, images, training));
}

const Critic& Model::critic() const {
  if (!critic_) throw CapabilityError("this model was built without a critic");
  return *critic_;
}

std::vector<SceneCode> Model::predict(const std::vector<render::Image>& images,
                                      std::size_t batch) const {
  std::vector<SceneCode> codes;
  codes.reserve(images.size());
  batch = std::max<std::size_t>(batch, 1);
  for (std::size_t begin = 0; begin < images.size(); begin += batch) {
    const std::size_t count = std::min(batch, images.size() - begin);
    Tape tape(false);
    const HeadOutputs out = forward(tape, tape.constant(stack_images(images, begin, count)), false);
    for (SceneCode& c : decode(out, cfg_)) codes.push_back(std::move(c));
  }
  return codes;
}

render::SceneVars scene_vars(const HeadOutputs& out) {
  return {out.center, out.rgb, out.confidence, out.light};
}

Tensor stack_images(const std::vector<render::Image>& images, std::size_t begin,
                    std::size_t count) {
  if (count == 0 || begin + count > images.size()) {
    throw ShapeMismatch("image range out of bounds");
  }
  const render::Image& first = images[begin];
  Tensor t({count, 3, first.height, first.width});
  for (std::size_t i = 0; i < count; ++i) render::copy_to_batch(images[begin + i], t, i);
  return t;
}

}  // namespace curio::nn
