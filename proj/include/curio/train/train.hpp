#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "curio/eval/metrics.hpp"
#include "curio/nn/model.hpp"
#include "curio/worlds/dataset.hpp"

namespace curio::train {

enum class Mode { supervised, noncur, curious };

std::string mode_name(Mode m);
/// Throws InvalidConfig.
Mode parse_mode(const std::string& name);

/// How the image loss reduces over pixels: `mean` is the per-pixel MSE,
/// `sum` the per-image sum of squares (both averaged over the batch).
enum class Reduction { mean, sum };

std::string reduction_name(Reduction r);
/// Throws InvalidConfig.
Reduction parse_reduction(const std::string& name);

struct TrainConfig {
  Mode mode = Mode::curious;
  double supervision_frac = 1.0;
  std::size_t batch_size = 128;
  std::size_t virtual_batch = 128;
  double gen_lr = 1e-4;
  double critic_lr = 1e-6;
  double image_loss_weight = 0.01;
  Reduction image_loss_reduction = Reduction::mean;
  double critic_loss_weight = 10.0;
  double grad_clip = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t max_epochs = 200;
  /// Hard cap on optimizer steps; 0 means none.
  std::size_t max_steps = 0;
  /// Stop once validation image MSE improved by less than this fraction over
  /// the last `convergence_window` epochs.
  double convergence_threshold = 0.01;
  std::size_t convergence_window = 20;
  std::size_t val_images = 100;
  std::size_t checkpoint_every = 10;
  /// Batch norm uses running statistics during training steps.
  bool freeze_norm = false;
  /// 9x9 Gaussian blur of rendering and input before the image loss.
  bool blur = false;
  double blur_sigma = 2.0;
  eval::MetricWeights weights;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Mean squared pixel error. Throws ShapeMismatch.
Var l2_image_loss(Var rendered, Var input);
double l2_image_loss(const render::Image& rendered, const render::Image& input);

/// Mean binary cross-entropy of probabilities against a constant target.
Var bce(Var probs, double target);

struct CriticLosses {
  Var d_loss;  // BCE(real, 1) + BCE(fake detached, 0)
  Var g_loss;  // BCE(fake, 1)
};

/// Real and fake go through the critic as one joint batch. The discriminator
/// loss sees a detached copy of `fake`; the generator term keeps its graph.
CriticLosses critic_losses(const nn::Critic& critic, Tape& tape, Var real, Var fake,
                           bool training = true);

/// Parameter error of one scene code, exactly the evaluation metric.
double supervised_loss(const SceneCode& pred, const SceneCode& gt, const eval::MetricWeights& w,
                       const worlds::WorldSpec& world);

/// Batch mean of the parameter error with gradients into the head outputs.
/// The assignment is solved on values and held fixed for the gradient.
/// Variable-count worlds match ground truth into the proposals by position;
/// unmatched proposals are pushed toward confidence 0.
Var supervised_loss(const nn::HeadOutputs& out, const std::vector<SceneCode>& gt,
                    const nn::NetworkConfig& net, const eval::MetricWeights& w,
                    const worlds::WorldSpec& world);

/// Normalized 1D Gaussian taps. Throws InvalidConfig for even or zero sizes.
std::vector<double> gaussian_kernel(std::size_t size, double sigma);
/// Separable blur with reflect padding.
render::Image gaussian_blur(const render::Image& img, std::size_t size = 9, double sigma = 2.0);
/// The same blur on a [B,C,H,W] batch, differentiable.
Var gaussian_blur(Var images, std::size_t size = 9, double sigma = 2.0);

struct TrainState {
  AdamState gen_adam;
  AdamState critic_adam;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed optimizer steps
  std::vector<double> val_history;
};

struct StepMetrics {
  double image_mse = 0.0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double sup_loss = 0.0;
  double grad_norm = 0.0;  // generator, before clipping
};

/// One optimizer step on `images` ([B,3,S,S], B == batch_size). Curious mode
/// updates the critic first, then the generator against the updated critic.
/// `labels` is read only in supervised mode.
StepMetrics train_step(nn::Model& model, TrainState& state, const TrainConfig& cfg,
                       const worlds::WorldSpec& world, const Tensor& images,
                       const std::vector<SceneCode>* labels = nullptr);

struct LogRow {
  std::size_t epoch;
  std::string split;
  double image_mse;
  double d_loss;
  double g_loss;
  double eq1_error;  // NaN when labels are unavailable
};

std::string log_header();
std::string format_log_row(const LogRow& row);

struct TrainResult {
  std::vector<LogRow> log;
  bool converged = false;
  std::size_t epochs = 0;  // completed epochs, counting resumed ones
  double final_val_mse = 0.0;
};

/// Training indices whose labels supervised mode may read: the first
/// round(frac * train) entries of a seeded shuffle, at least one.
std::vector<std::size_t> supervised_subset(std::size_t n_train, double frac, std::uint64_t seed);

/// Writes parameters, optimizer states and loop counters into `dir`.
void save_checkpoint(const nn::Model& model, const TrainState& state,
                     const std::filesystem::path& dir);
/// Throws IoError or FormatError.
TrainState load_checkpoint(nn::Model& model, const std::filesystem::path& dir);

struct CheckpointInfo {
  nn::NetworkConfig net;
  bool critic = false;
  std::size_t epoch = 0;
  std::size_t step = 0;
};

/// Reads only the layout and counters, enough to rebuild the model.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

struct TrainOptions {
  /// Checkpoints and train_log.csv go here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from this checkpoint; the log file is appended to.
  std::optional<std::filesystem::path> resume;
  /// Called after every epoch's rows are appended.
  std::function<void(const LogRow&)> on_epoch;
};

/// Full loop with per-epoch validation. Unsupervised modes train on a
/// label-hidden copy of the dataset; the per-epoch parameter error is
/// instrumentation only and reads validation labels when the caller's
/// dataset carries them. NumericError is rethrown with the step index.
TrainResult train(nn::Model& model, const worlds::Dataset& data, const TrainConfig& cfg,
                  const TrainOptions& options = {});

}  // namespace curio::train
