#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "curio/nn/networks.hpp"
#include "curio/render/image.hpp"
#include "curio/render/renderer.hpp"
#include "curio/worlds/spec.hpp"

namespace curio::nn {

/// Heads, proposal count and spatial dims that fit a world.
NetworkConfig network_for(const worlds::WorldSpec& world, double width_scale = 0.5,
                          std::size_t latent_dim = 64);

/// Encoder and heads (the generator) plus an optional critic. The critic
/// draws from its own seed stream so that the generator's initialization does
/// not depend on whether a critic exists. Parameters live in the two stores
/// at stable addresses, so a Model is neither copyable nor movable.
class Model {
 public:
  Model(const NetworkConfig& cfg, bool with_critic, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const NetworkConfig& config() const { return cfg_; }
  bool has_critic() const { return critic_ != nullptr; }

  HeadOutputs forward(Tape& tape, Var images, bool training) const;
  const Critic& critic() const;

  ParameterStore& generator_params() { return gen_; }
  ParameterStore& critic_params() { return critic_store_; }
  const ParameterStore& generator_params() const { return gen_; }
  const ParameterStore& critic_params() const { return critic_store_; }

  /// Eval-mode predictions in chunks of `batch` images.
  std::vector<SceneCode> predict(const std::vector<render::Image>& images,
                                 std::size_t batch = 32) const;

 private:
  NetworkConfig cfg_;
  ParameterStore gen_;
  ParameterStore critic_store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Heads> heads_;
  std::unique_ptr<Critic> critic_;
};

/// Head outputs as renderer inputs.
render::SceneVars scene_vars(const HeadOutputs& out);

/// Stacks images into [B,3,S,S].
Tensor stack_images(const std::vector<render::Image>& images, std::size_t begin,
                    std::size_t count);

}  // namespace curio::nn
