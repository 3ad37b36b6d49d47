#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "aman/tensor.hpp"

namespace aman {

struct ImageInput {
  std::string image_id;
  Tensor pixels;  // [3 x H x W], values in [0, 1]
};

// Binary (P6) or ASCII (P3) PPM -> [3 x h x w].
Tensor load_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& pixels);

Tensor resize_nearest(const Tensor& pixels, std::size_t height, std::size_t width);

// Deterministic stand-in for records without an image file: smooth per-channel
// gradients whose parameters are hashed from the image id.
Tensor placeholder_image(std::string_view image_id, std::size_t height, std::size_t width);

// Loads `path` (relative paths resolve against base_dir) or falls back to the placeholder.
Tensor resolve_image(const std::optional<std::string>& path, std::string_view image_id,
                     const std::filesystem::path& base_dir, std::size_t height, std::size_t width);

}  // namespace aman
