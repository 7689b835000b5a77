#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "curio/eval/report.hpp"
#include "curio/train/train.hpp"
#include "curio/worlds/spec.hpp"

namespace curio::cli {

/// section -> key -> value. Keys before any header land in section "".
using Sections = std::map<std::string, std::map<std::string, std::string>>;

/// key = value lines under [section] headers; '#' and ';' start comments.
/// Throws InvalidConfig with the line number.
Sections parse_ini(const std::string& text);
Sections read_ini(const std::filesystem::path& path);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  /// Raw [world] fields; empty means "take the dataset's world".
  std::map<std::string, std::string> world_fields;
  double width_scale = 0.5;
  std::size_t latent_dim = 64;
  train::TrainConfig train;
  eval::EvalOptions eval;
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> out;

  /// The [world] section resolved to a spec. `image_size` is accepted as a
  /// shorthand for both cameras' image size.
  std::optional<worlds::WorldSpec> world() const;
};

/// Unknown sections or keys and a missing seed raise InvalidConfig.
ExperimentConfig to_experiment(const Sections& s);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Every resolved value, in the same format the loader reads.
std::string to_text(const ExperimentConfig& c);

/// A world by name, or from a key=value spec file when `name_or_path` names
/// an existing file.
worlds::WorldSpec resolve_world(const std::string& name_or_path, std::size_t image_size);

}  // namespace curio::cli
