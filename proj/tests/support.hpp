#pragma once

#include <cmath>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "aman/dataset.hpp"
#include "aman/image.hpp"
#include "aman/model.hpp"
#include "aman/trainer.hpp"

namespace aman {

// Readable gtest failure output for tensors.
inline void PrintTo(const Tensor& t, std::ostream* os) {
  *os << shape_str(t.shape()) << " {";
  for (std::size_t i = 0; i < t.size(); ++i) *os << (i ? ", " : "") << t[i];
  *os << "}";
}

}  // namespace aman

namespace aman::testing {

namespace fs = std::filesystem;

// Fresh empty directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("aman_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline Tensor random_tensor(Shape shape, Rng& rng, Real lo = -1.0, Real hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Small widths so unit tests run in milliseconds.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_height = 16;
  c.image_width = 16;
  c.trunk_widths = {4, 6};
  c.attr_channels = 4;
  c.global_channels = 3;
  c.attention_dim = 5;
  c.hidden = 6;
  c.embedding = 5;
  c.max_len = 6;
  return c;
}

/// A striped image with a bright square, paired with one caption per
/// attribute describing what is visible: hue and brightness, stripe
/// direction, stripe frequency, square position.
struct SyntheticImage {
  Tensor pixels;
  PerAttribute<std::string> captions;
};

inline SyntheticImage synthetic_image(Rng& rng, std::size_t height = 64, std::size_t width = 64) {
  static const char* const kHues[] = {"red", "green", "blue", "yellow"};
  static const Real kBase[4][3] = {{1.0, 0.2, 0.1}, {0.2, 0.9, 0.2}, {0.1, 0.3, 1.0}, {1.0, 0.9, 0.1}};
  const auto hue = rng.below(4);
  const bool bright = rng.below(2), vertical = rng.below(2), fine = rng.below(2), right = rng.below(2);
  SyntheticImage img;
  img.pixels = Tensor({3, height, width});
  const std::size_t period = fine ? std::max<std::size_t>(2, width / 16) : std::max<std::size_t>(4, width / 4);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t coord = vertical ? x : y;
      const Real stripe = (coord / (period / 2)) % 2 ? 1.0 : 0.6;
      const bool square = y >= 3 * height / 8 && y < 5 * height / 8 &&
                          (right ? (x >= 5 * width / 8 && x < 7 * width / 8) : (x >= width / 8 && x < 3 * width / 8));
      const Real level = (bright ? 0.9 : 0.4) * stripe;
      for (std::size_t c = 0; c < 3; ++c) {
        img.pixels[(c * height + y) * width + x] = square ? 1.0 - 0.5 * kBase[hue][c] : level * kBase[hue][c];
      }
    }
  }
  img.captions = {std::string(bright ? "bright " : "dark ") + kHues[hue] + " light",
                  std::string("strong ") + (vertical ? "vertical" : "horizontal") + " lines",
                  std::string(fine ? "sharp" : "soft") + " focus on the subject",
                  std::string("subject on the ") + (right ? "right" : "left"),
                  std::string(bright ? "good" : "low") + " exposure"};
  return img;
}

/// n fully captioned and scored records; images are written as PPM files
/// into `image_dir` and referenced by relative path.
struct SyntheticCorpus {
  std::vector<AttributedRecord> records;
  std::vector<Tensor> pixels;
};

inline SyntheticCorpus synthetic_corpus(std::size_t n, std::uint64_t seed, const fs::path& image_dir = {},
                                        std::size_t height = 64, std::size_t width = 64) {
  SyntheticCorpus corpus;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticImage img = synthetic_image(rng, height, width);
    AttributedRecord r;
    r.image_id = "img" + std::to_string(i);
    for (auto a : kAllAttributes) {
      r.captions[index(a)] = {img.captions[index(a)]};
      r.scores[index(a)] = std::round(rng.uniform(2.0, 9.0) * 10.0) / 10.0;
    }
    r.global_score = std::round(rng.uniform(2.0, 9.0) * 10.0) / 10.0;
    if (!image_dir.empty()) {
      r.image_path = r.image_id + ".ppm";
      write_ppm(image_dir / *r.image_path, img.pixels);
      img.pixels = load_ppm(image_dir / *r.image_path);
    }
    corpus.records.push_back(std::move(r));
    corpus.pixels.push_back(std::move(img.pixels));
  }
  return corpus;
}

inline std::vector<TrainExample> examples_with_pixels(const SyntheticCorpus& corpus, const Vocab& vocab,
                                                      const ModelConfig& cfg) {
  std::vector<AttributedRecord> records = corpus.records;
  for (auto& r : records) r.image_path.reset();
  auto ex = prepare_examples(records, vocab, cfg);
  for (std::size_t i = 0; i < ex.size(); ++i) ex[i].image = corpus.pixels[i];
  return ex;
}

}  // namespace aman::testing
