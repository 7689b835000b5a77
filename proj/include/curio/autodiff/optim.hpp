#pragma once

#include <deque>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "curio/autodiff/tape.hpp"

namespace curio {

/// Owns parameters at stable addresses so tapes and optimizers can hold
/// pointers to them.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  /// Every entry, buffers included, in insertion order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> trainable();

  std::size_t trainable_count() const;
  void zero_grad();
  std::size_t size() const noexcept { return params_.size(); }

 private:
  std::deque<Parameter> params_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

/// One bias-corrected Adam update from each parameter's `grad`. State is
/// created on the first call and must stay aligned with `params` afterwards.
void adam_step(std::span<Parameter* const> params, AdamState& state,
               const AdamConfig& cfg);

/// Scales all gradients by max_norm / norm when their global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_grad_l2(std::span<Parameter* const> params, double max_norm);

double grad_l2_norm(std::span<Parameter* const> params);

/// Binary parameter block: "CURIO1", then per entry a u32 name length, the
/// name, a u32 rank, u32 dims and f64 data, all little-endian.
void write_parameters(std::ostream& out, std::span<const Parameter* const> params);

struct NamedTensor {
  std::string name;
  Tensor value;
};

std::vector<NamedTensor> read_parameters(std::istream& in);

/// Copies values from `entries` into same-named parameters of `store`.
/// Throws FormatError for missing names or shape changes.
void assign_parameters(ParameterStore& store, const std::vector<NamedTensor>& entries);

void write_adam_state(std::ostream& out, const AdamState& state);
AdamState read_adam_state(std::istream& in);

}  // namespace curio
