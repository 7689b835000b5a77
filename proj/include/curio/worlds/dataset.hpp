#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "curio/render/image.hpp"
#include "curio/scene.hpp"
#include "curio/worlds/spec.hpp"

namespace curio::worlds {

inline constexpr int kMaxRejections = 1000;

/// Draws one scene. Object count is uniform in [min, max]; all positions are
/// redrawn together until every pair of centers is more than two radii
/// apart. Throws RejectionExhausted after kMaxRejections attempts.
SceneCode sample_scene(const WorldSpec& spec, std::mt19937_64& rng);

/// Independent stream for scene `index` of a dataset generated from `seed`.
std::mt19937_64 scene_rng(std::uint64_t seed, std::size_t index);

/// Contiguous index ranges: train first, then validation, then test.
struct Split {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t total() const { return train + val + test; }
  std::size_t val_begin() const { return train; }
  std::size_t test_begin() const { return train + val; }
  bool operator==(const Split&) const = default;
};

/// Half for training and a quarter each for validation and test.
Split make_split(std::size_t n_total);

class Dataset {
 public:
  WorldSpec world;
  std::uint64_t seed = 0;
  Split split;
  std::vector<render::Image> images;

  Dataset() = default;
  Dataset(WorldSpec w, std::uint64_t s, Split sp, std::vector<render::Image> imgs,
          std::vector<SceneCode> labels, bool labels_visible = true);

  std::size_t size() const { return images.size(); }
  bool labels_visible() const { return labels_visible_; }
  bool has_labels() const { return !labels_.empty(); }
  /// Throws CapabilityError unless labels are visible.
  const std::vector<SceneCode>& labels() const;
  const SceneCode& label(std::size_t i) const;
  /// Drops label visibility for this copy; cannot be undone.
  void hide_labels() { labels_visible_ = false; }

 private:
  std::vector<SceneCode> labels_;
  bool labels_visible_ = true;
};

/// Deterministic for a given seed regardless of `workers`.
Dataset generate_dataset(const WorldSpec& spec, std::size_t n_total, std::uint64_t seed,
                         std::size_t workers = 1);

/// Writes meta.txt, images.bin, labels.jsonl and preview PNGs.
void save_dataset(const Dataset& d, const std::filesystem::path& dir, bool previews = true);

/// With `labels` false the label file is never opened and label access
/// raises CapabilityError.
Dataset load_dataset(const std::filesystem::path& dir, bool labels = true);

/// One scene as a labels.jsonl object and back.
std::string scene_to_json(const SceneCode& s);
SceneCode scene_from_json(const std::string& text);

}  // namespace curio::worlds
