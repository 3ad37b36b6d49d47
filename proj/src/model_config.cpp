#include "aman/model_config.hpp"

#include <sstream>

namespace aman {

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("model." + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("model." + key + ": expected a boolean, got '" + v + "'");
}

}  // namespace

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_faithful() {
  ModelConfig c;
  c.preset = "paper-faithful";
  c.attr_channels = 512;
  c.global_channels = 512;
  c.attention_dim = 512;
  c.hidden = 1000;
  c.embedding = 50;
  return c;
}

ModelConfig ModelConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper-faithful") return paper_faithful();
  throw ConfigError("unknown model preset '" + name + "' (expected desk or paper-faithful)");
}

void ModelConfig::validate() const {
  if (in_channels != 3) throw ConfigError("model.in_channels must be 3");
  if (trunk_widths.empty()) throw ConfigError("model.trunk_widths must list at least one layer");
  for (auto w : trunk_widths) {
    if (w == 0) throw ConfigError("model.trunk_widths entries must be positive");
  }
  if (image_height == 0 || image_width == 0) throw ConfigError("model image size must be positive");
  if (attr_channels == 0 || global_channels == 0 || attention_dim == 0 || hidden == 0 || embedding == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (max_len == 0) throw ConfigError("model.max_len must be positive");
}

std::size_t ModelConfig::map_height() const {
  std::size_t h = image_height;
  for (std::size_t i = 0; i < trunk_widths.size(); ++i) h = (h + 2 - 3) / 2 + 1;
  return h;
}

std::size_t ModelConfig::map_width() const {
  std::size_t w = image_width;
  for (std::size_t i = 0; i < trunk_widths.size(); ++i) w = (w + 2 - 3) / 2 + 1;
  return w;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::ostringstream widths;
  for (std::size_t i = 0; i < trunk_widths.size(); ++i) widths << (i ? "," : "") << trunk_widths[i];
  return {
      {"preset", preset},
      {"image_height", std::to_string(image_height)},
      {"image_width", std::to_string(image_width)},
      {"trunk_widths", widths.str()},
      {"attr_channels", std::to_string(attr_channels)},
      {"global_channels", std::to_string(global_channels)},
      {"attention_dim", std::to_string(attention_dim)},
      {"hidden", std::to_string(hidden)},
      {"embedding", std::to_string(embedding)},
      {"max_len", std::to_string(max_len)},
      {"attention_order", order == AttentionOrder::kChannelFirst ? "channel_first" : "spatial_first"},
      {"share_decoder", share_decoder ? "true" : "false"},
      {"seed", std::to_string(seed)},
  };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c = desk();
  if (auto it = kv.find("preset"); it != kv.end()) c = preset_named(it->second);
  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    if (k == "image_height") c.image_height = parse_size(k, v);
    else if (k == "image_width") c.image_width = parse_size(k, v);
    else if (k == "attr_channels") c.attr_channels = parse_size(k, v);
    else if (k == "global_channels") c.global_channels = parse_size(k, v);
    else if (k == "attention_dim") c.attention_dim = parse_size(k, v);
    else if (k == "hidden") c.hidden = parse_size(k, v);
    else if (k == "embedding") c.embedding = parse_size(k, v);
    else if (k == "max_len") c.max_len = parse_size(k, v);
    else if (k == "seed") c.seed = parse_size(k, v);
    else if (k == "share_decoder") c.share_decoder = parse_bool(k, v);
    else if (k == "attention_order") {
      if (v == "channel_first") c.order = AttentionOrder::kChannelFirst;
      else if (v == "spatial_first") c.order = AttentionOrder::kSpatialFirst;
      else throw ConfigError("model.attention_order must be channel_first or spatial_first");
    } else if (k == "trunk_widths") {
      c.trunk_widths.clear();
      std::istringstream in(v);
      std::string part;
      while (std::getline(in, part, ',')) c.trunk_widths.push_back(parse_size(k, part));
    } else {
      throw ConfigError("unknown model key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace aman
