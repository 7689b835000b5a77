#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "curio/autodiff/ops.hpp"
#include "curio/autodiff/optim.hpp"
#include "curio/scene.hpp"

namespace curio::nn {

struct NetworkConfig {
  std::size_t image_size = 64;
  double width_scale = 0.5;
  std::size_t latent_dim = 64;
  std::size_t n_proposals = 1;
  /// Groups the heads predict; position is the center head, color the rgb
  /// head.
  GroupSet heads{Group::position};
  /// 2 for planar worlds, 3 for sphere worlds.
  std::size_t spatial_dims = 2;

  /// Throws InvalidConfig.
  void validate() const;
};

struct ConvSpec {
  std::size_t kernel;
  std::size_t stride;
  std::size_t pad;
};

using ConvTable = std::array<ConvSpec, 5>;

/// Five strided layers that bring image_size down to 1x1.
ConvTable encoder_convs(std::size_t image_size);
ConvTable critic_convs(std::size_t image_size);

/// ceil(c * width_scale), at least 8.
std::size_t scaled_channels(std::size_t base, double width_scale);

/// Output channels per layer. The encoder's last layer is latent_dim wide.
std::array<std::size_t, 5> encoder_channels(const NetworkConfig& cfg);
std::array<std::size_t, 5> critic_channels(const NetworkConfig& cfg);

/// Kaiming-uniform initialization for a weight with the given fan-in.
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// conv -> bias -> batch norm -> activation, repeated five times.
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(ParameterStore& store, const std::string& prefix,
            std::size_t in_channels, const std::array<std::size_t, 5>& channels,
            const ConvTable& convs, std::mt19937_64& rng);

  /// `last` is the activation applied after the fifth batch norm.
  Var forward(Tape& tape, Var x, bool training, Activation hidden,
              Activation last) const;
  std::vector<Shape> layer_shapes(std::size_t image_size) const;

 private:
  struct Layer {
    ConvSpec conv;
    std::size_t channels;
    Parameter* weight;
    Parameter* bias;
    Parameter* gamma;
    Parameter* beta;
    mutable RunningStats stats;
  };
  std::vector<Layer> layers_;
};

/// Image [B,3,S,S] -> latent [B,latent_dim].
class Encoder {
 public:
  Encoder(const NetworkConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
          const std::string& prefix = "enc");
  Var forward(Tape& tape, Var images, bool training) const;
  std::vector<Shape> layer_shapes() const;

 private:
  NetworkConfig cfg_;
  ConvStack stack_;
};

/// Image [B,3,S,S] -> probability of being real, [B]. Fully convolutional;
/// the last feature map is averaged and offset by a learned scalar before
/// the sigmoid.
class Critic {
 public:
  Critic(const NetworkConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
         const std::string& prefix = "critic");
  Var forward(Tape& tape, Var images, bool training) const;
  std::vector<Shape> layer_shapes() const;

 private:
  NetworkConfig cfg_;
  ConvStack stack_;
  Parameter* out_bias_;
};

/// Head outputs for a batch. Disabled groups hold an invalid Var.
struct HeadOutputs {
  Var center;      // [B,n,spatial_dims], linear
  Var rotation;    // [B,n,2], tanh
  Var rgb;         // [B,n,3], sigmoid
  Var confidence;  // [B,n], sigmoid
  Var light;       // [B,2]: azimuth (unwrapped), elevation in (0, pi/2]
};

inline constexpr double kMinElevation = 1e-3;

class Heads {
 public:
  Heads(const NetworkConfig& cfg, ParameterStore& store, std::mt19937_64& rng,
        const std::string& prefix = "heads");
  HeadOutputs forward(Tape& tape, Var latent) const;

 private:
  struct Dense {
    Parameter* weight;
    Parameter* bias;
  };
  struct Branch {
    Dense expand;  // 64 -> n*64, ReLU
    Dense out;     // 64 -> width, applied per proposal
  };
  Dense dense(ParameterStore& store, const std::string& name, std::size_t in,
              std::size_t out, std::mt19937_64& rng);
  Var apply(Tape& tape, const Dense& d, Var x) const;
  Var branch(Tape& tape, const Branch& b, Var trunk, std::size_t width) const;

  NetworkConfig cfg_;
  Dense trunk_;
  Branch center_{}, rotation_{}, rgb_{}, confidence_{};
  Dense light_hidden_{}, light_out_{};
};

inline constexpr std::size_t kHeadFeatures = 64;

/// Converts head outputs into plain scene codes, one per batch element.
/// Groups the heads do not predict keep SceneObject/Light defaults.
std::vector<SceneCode> decode(const HeadOutputs& out, const NetworkConfig& cfg);

/// Trainable parameter count of a freshly built network.
std::size_t encoder_parameter_count(const NetworkConfig& cfg);
std::size_t critic_parameter_count(const NetworkConfig& cfg);
std::size_t heads_parameter_count(const NetworkConfig& cfg);

}  // namespace curio::nn
