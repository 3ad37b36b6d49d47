#include "aman/image.hpp"

#include <cctype>
#include <cmath>

#include "aman/io.hpp"
#include "aman/rng.hpp"

namespace aman {

namespace {

class PpmReader {
 public:
  explicit PpmReader(std::string bytes) : b_(std::move(bytes)) {}

  std::size_t number() {
    skip_space();
    if (p_ >= b_.size() || !std::isdigit(static_cast<unsigned char>(b_[p_]))) {
      throw DataError("malformed PPM header");
    }
    std::size_t v = 0;
    while (p_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[p_]))) {
      v = v * 10 + static_cast<std::size_t>(b_[p_++] - '0');
    }
    return v;
  }
  std::string token() {
    skip_space();
    std::string t;
    while (p_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[p_]))) t += b_[p_++];
    return t;
  }
  unsigned char byte() {
    if (p_ >= b_.size()) throw DataError("PPM pixel data truncated");
    return static_cast<unsigned char>(b_[p_++]);
  }
  void single_space() { ++p_; }

 private:
  void skip_space() {
    while (p_ < b_.size()) {
      if (b_[p_] == '#') {
        while (p_ < b_.size() && b_[p_] != '\n') ++p_;
      } else if (std::isspace(static_cast<unsigned char>(b_[p_]))) {
        ++p_;
      } else {
        break;
      }
    }
  }
  std::string b_;
  std::size_t p_ = 0;
};

}  // namespace

Tensor load_ppm(const std::filesystem::path& path) {
  PpmReader r(read_file(path));
  const auto magic = r.token();
  if (magic != "P6" && magic != "P3") throw DataError("unsupported image format in " + path.string());
  const auto w = r.number();
  const auto h = r.number();
  const auto maxval = r.number();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw DataError("bad PPM header in " + path.string());
  if (magic == "P6") r.single_space();
  Tensor px({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = magic == "P6" ? r.byte() : static_cast<double>(r.number());
        px[(c * h + y) * w + x] = v / static_cast<double>(maxval);
      }
  return px;
}

void write_ppm(const std::filesystem::path& path, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) throw DimensionError("write_ppm expects [3 x H x W]");
  const auto h = pixels.dim(1), w = pixels.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(pixels[(c * h + y) * w + x], 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  write_file_atomic(path, out);
}

Tensor resize_nearest(const Tensor& pixels, std::size_t height, std::size_t width) {
  const auto c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  if (h == height && w == width) return pixels;
  Tensor out({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const auto sy = y * h / height, sx = x * w / width;
        out[(ch * height + y) * width + x] = pixels[(ch * h + sy) * w + sx];
      }
  return out;
}

Tensor placeholder_image(std::string_view image_id, std::size_t height, std::size_t width) {
  std::uint64_t hsh = 0xcbf29ce484222325ULL;
  for (unsigned char ch : image_id) hsh = (hsh ^ ch) * 0x100000001b3ULL;
  Rng rng(hsh);
  Tensor out({3, height, width});
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.1, 0.9);
    const double fy = rng.uniform(-0.4, 0.4), fx = rng.uniform(-0.4, 0.4);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double v = base + fy * (static_cast<double>(y) / height - 0.5) +
                         fx * (static_cast<double>(x) / width - 0.5);
        out[(c * height + y) * width + x] = std::clamp(v, 0.0, 1.0);
      }
  }
  return out;
}

Tensor resolve_image(const std::optional<std::string>& path, std::string_view image_id,
                     const std::filesystem::path& base_dir, std::size_t height, std::size_t width) {
  if (!path) return placeholder_image(image_id, height, width);
  std::filesystem::path p(*path);
  if (p.is_relative()) p = base_dir / p;
  if (!std::filesystem::exists(p)) throw DataError("image not found: " + p.string());
  return resize_nearest(load_ppm(p), height, width);
}

}  // namespace aman
