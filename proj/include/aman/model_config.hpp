#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace aman {

enum class AttentionOrder { kChannelFirst, kSpatialFirst };

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Architecture hyperparameters. `desk()` is sized for CPU tests;
/// `paper_faithful()` carries the published LSTM/embedding/attention widths.
struct ModelConfig {
  std::string preset = "desk";
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t in_channels = 3;
  std::vector<std::size_t> trunk_widths = {16, 32, 64};
  std::size_t attr_channels = 32;
  std::size_t global_channels = 32;
  std::size_t attention_dim = 64;
  std::size_t hidden = 128;
  std::size_t embedding = 32;
  std::size_t max_len = 30;
  AttentionOrder order = AttentionOrder::kChannelFirst;
  bool share_decoder = false;
  std::uint64_t seed = 7;

  static ModelConfig desk();
  static ModelConfig paper_faithful();
  static ModelConfig preset_named(const std::string& name);

  void validate() const;

  // Spatial size of the dense feature map after the stride-2 trunk.
  std::size_t map_height() const;
  std::size_t map_width() const;

  std::map<std::string, std::string> to_kv() const;
  // Starts from the named preset (key "preset") and applies the other keys.
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

}  // namespace aman
