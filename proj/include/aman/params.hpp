#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "aman/rng.hpp"
#include "aman/tensor.hpp"

namespace aman {

/// Named collection of tensors, ordered by name so iteration is deterministic.
class TensorMap {
 public:
  using Storage = std::map<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value) { entries_[name] = std::move(value); }
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  void erase(const std::string& name) { entries_.erase(name); }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t num_scalars() const;

  Storage::const_iterator begin() const { return entries_.begin(); }
  Storage::const_iterator end() const { return entries_.end(); }
  Storage::iterator begin() { return entries_.begin(); }
  Storage::iterator end() { return entries_.end(); }

  friend bool operator==(const TensorMap&, const TensorMap&) = default;

 private:
  Storage entries_;
};

using ModelParams = TensorMap;
using Gradients = TensorMap;

// p <- p - lr * g for every entry of grads. Entries absent from grads are untouched.
void sgd_step(ModelParams& params, const Gradients& grads, Real lr);

// into += scale * g, creating zero entries in `into` as needed.
void accumulate(Gradients& into, const Gradients& g, Real scale = 1.0);

// Global L2 norm over all entries.
Real global_norm(const Gradients& g);

// Uniform(-s, s) with s = gain/sqrt(fan_in). A gain of sqrt(3) keeps unit
// activation variance through a linear layer.
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng, Real gain = 1.0);

struct CheckpointManifest {
  static constexpr std::uint32_t kFormatVersion = 1;
  std::uint32_t format_version = kFormatVersion;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;
};

struct Checkpoint {
  ModelParams params;
  CheckpointManifest manifest;
};

// Binary archive: magic, manifest, then name/shape/little-endian f64 payload per
// tensor, closed by an FNV-1a checksum over everything before it.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const CheckpointManifest& manifest);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace aman
