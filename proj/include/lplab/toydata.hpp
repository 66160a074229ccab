#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lplab/tensor.hpp"

namespace lplab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataSpec {
  int count = 2048;
  int resolution = 64;
  int classes = 4;  // circle, square, triangle, stripes
  double texture_freq_min = 4.0;
  double texture_freq_max = 24.0;  // cycles per image, must stay below Nyquist
  double texture_amplitude = 0.4;
  uint64_t seed = 0;

  void validate() const;
};

struct ImageSet {
  Tensor<float> images;  // [N, 3, R, R] in [-1, 1]
  std::vector<int> labels;
  int resolution = 0;
  uint64_t seed = 0;

  int count() const { return images.empty() ? 0 : images.dim(0); }
};

// Deterministic synthetic corpus: a smooth background gradient plus one
// class-determined shape filled with an oriented sinusoidal texture. Shapes
// are rasterized at 4x and box-downsampled.
ImageSet generate_textured_dataset(const DataSpec& spec);

// Loads a directory of decodable images: center-crop to square, resize to
// `resolution`, rescale to [-1,1]. Labels are all zero.
ImageSet load_image_folder(const std::string& path, int resolution);

// PNG + manifest.json persistence.
void save_image_set(const ImageSet& set, const DataSpec& spec, const std::string& dir);
ImageSet load_image_set(const std::string& dir);

// Writes a single [3,H,W] (or the b-th image of a [B,3,H,W] tensor) as PNG.
void write_png(const std::string& path, const Tensor<float>& images, int index = 0);
Tensor<float> read_image(const std::string& path);  // [1,3,H,W] in [-1,1]

// Grid of samples in one PNG (for sample sheets).
void write_png_grid(const std::string& path, const Tensor<float>& images, int cols);

}  // namespace lplab
