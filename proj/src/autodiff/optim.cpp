#include "curio/autodiff/optim.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "curio/errors.hpp"

namespace curio {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

Parameter& ParameterStore::add(std::string name, Tensor value, bool trainable) {
  if (find(name) != nullptr) throw InvalidConfig("duplicate parameter " + name);
  Parameter& p = params_.emplace_back();
  p.name = std::move(name);
  p.grad = Tensor::zeros_like(value);
  p.value = std::move(value);
  p.trainable = trainable;
  return p;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (Parameter& p : params_) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

void adam_step(std::span<Parameter* const> params, AdamState& state,
               const AdamConfig& cfg) {
  if (state.m.empty() && state.step == 0) {
    for (const Parameter* p : params) {
      state.m.push_back(Tensor::zeros_like(p->value));
      state.v.push_back(Tensor::zeros_like(p->value));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeMismatch("optimizer state holds " + std::to_string(state.m.size()) +
                        " slots for " + std::to_string(params.size()) +
                        " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (state.m[i].size() != p.value.size() || p.grad.size() != p.value.size()) {
      throw ShapeMismatch("optimizer state or gradient misaligned with " + p.name);
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double grad_l2_norm(std::span<Parameter* const> params) {
  double ss = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data()) ss += g * g;
  }
  return std::sqrt(ss);
}

double clip_grad_l2(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidConfig("clip_grad_l2 needs max_norm > 0");
  const double norm = grad_l2_norm(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad.data()) g *= s;
    }
  }
  return norm;
}

namespace {

constexpr char kMagic[] = "CURIO1";
constexpr std::size_t kMagicLen = 6;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f64s(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  put_f64s(out, t.data());
}

bool get_bytes(std::istream& in, void* dst, std::size_t n) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint32_t get_u32(std::istream& in, long record) {
  std::uint32_t v = 0;
  if (!get_bytes(in, &v, sizeof v)) {
    throw FormatError("truncated parameter block", record);
  }
  return v;
}

// Reads one entry; returns false on clean end of stream.
bool get_tensor(std::istream& in, NamedTensor& out, long record) {
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (in.gcount() == 0) return false;
  if (in.gcount() != sizeof len) throw FormatError("truncated entry header", record);
  if (len > (1u << 16)) throw FormatError("implausible name length", record);
  out.name.assign(len, '\0');
  if (!get_bytes(in, out.name.data(), len)) {
    throw FormatError("truncated entry name", record);
  }
  const std::uint32_t rank = get_u32(in, record);
  if (rank > 8) throw FormatError("implausible rank for " + out.name, record);
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(in, record);
  std::vector<double> data(shape_size(shape));
  if (!get_bytes(in, data.data(), data.size() * sizeof(double))) {
    throw FormatError("truncated data for " + out.name, record);
  }
  out.value = Tensor(std::move(shape), std::move(data));
  return true;
}

void expect_magic(std::istream& in) {
  char magic[kMagicLen] = {};
  if (!get_bytes(in, magic, kMagicLen) ||
      std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw FormatError("missing CURIO1 magic");
  }
}

}  // namespace

void write_parameters(std::ostream& out, std::span<const Parameter* const> params) {
  out.write(kMagic, kMagicLen);
  for (const Parameter* p : params) put_tensor(out, p->name, p->value);
  if (!out) throw IoError("failed writing parameter block");
}

std::vector<NamedTensor> read_parameters(std::istream& in) {
  expect_magic(in);
  std::vector<NamedTensor> entries;
  NamedTensor entry;
  while (get_tensor(in, entry, static_cast<long>(entries.size()))) {
    entries.push_back(std::move(entry));
  }
  return entries;
}

void assign_parameters(ParameterStore& store, const std::vector<NamedTensor>& entries) {
  for (Parameter* p : store.all()) {
    const NamedTensor* hit = nullptr;
    for (const NamedTensor& e : entries) {
      if (e.name == p->name) hit = &e;
    }
    if (hit == nullptr) throw FormatError("checkpoint lacks parameter " + p->name);
    if (hit->value.shape() != p->value.shape()) {
      throw FormatError("checkpoint shape " + shape_string(hit->value.shape()) +
                        " for " + p->name + ", model expects " +
                        shape_string(p->value.shape()));
    }
    p->value = hit->value;
    p->zero_grad();
  }
}

void write_adam_state(std::ostream& out, const AdamState& state) {
  out.write(kMagic, kMagicLen);
  put_tensor(out, "step", Tensor::scalar(static_cast<double>(state.step)));
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    put_tensor(out, "m" + std::to_string(i), state.m[i]);
    put_tensor(out, "v" + std::to_string(i), state.v[i]);
  }
  if (!out) throw IoError("failed writing optimizer state");
}

AdamState read_adam_state(std::istream& in) {
  std::vector<NamedTensor> entries = read_parameters(in);
  if (entries.empty() || entries[0].name != "step" || entries.size() % 2 != 1) {
    throw FormatError("malformed optimizer state");
  }
  AdamState state;
  state.step = static_cast<long>(entries[0].value.item());
  for (std::size_t i = 1; i < entries.size(); i += 2) {
    state.m.push_back(std::move(entries[i].value));
    state.v.push_back(std::move(entries[i + 1].value));
  }
  return state;
}

}  // namespace curio
