#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlso/rng.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

/// Grayscale image with values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // row-major, height*width

  double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  Tensor to_tensor() const { return Tensor::from({1, height, width}, pixels); }
};

struct Dataset {
  int height = 0;
  int width = 0;
  std::vector<std::string> class_ids;          // deterministic order
  std::vector<std::vector<Image>> samples;     // per class

  int num_classes() const { return static_cast<int>(class_ids.size()); }
};

/// Disjoint class subset of a dataset (few-shot splits are class-level).
struct SplitView {
  const Dataset* dataset = nullptr;
  std::vector<int> class_indices;

  int num_classes() const { return static_cast<int>(class_indices.size()); }
  const std::vector<Image>& class_samples(int local_class) const {
    return dataset->samples[static_cast<std::size_t>(
        class_indices[static_cast<std::size_t>(local_class)])];
  }
};

/// Splits the first `train_classes` classes off as training, the rest as test.
std::pair<SplitView, SplitView> split_dataset(const Dataset& dataset, int train_classes);

/// Deterministic synthetic dataset: each class is a fixed layout of three
/// Gaussian blobs in a 32x32 frame; samples re-render the layout under a
/// random shift in [-3,3]^2, rotation in [-15,15] degrees, and pixel noise
/// N(0, 0.05), clamped to [0,1].
Dataset gen_synthetic(int num_classes, int samples_per_class, std::uint64_t seed);

/// Same generator with explicit nuisance magnitudes (zero noise, shift, and
/// rotation renders every sample of a class identically).
Dataset gen_synthetic(int num_classes, int samples_per_class, std::uint64_t seed,
                      double noise_sigma, double max_shift, double max_rotation_deg);

/// Loads a directory tree root/<class_id>/<sample>.png of grayscale images,
/// normalized to [0,1] and resized to 28x28 (integer-factor average pooling
/// when the source is an exact multiple, nearest-neighbor otherwise).
Dataset load_omniglot(const std::filesystem::path& root);

/// One L-way Z-shot task. Support and query items are indices into the
/// split's class sample lists, disjoint within each class.
struct Episode {
  int way = 0;
  int shot = 0;
  std::vector<int> classes;                       // local class ids in the split
  std::vector<std::vector<const Image*>> support; // [L][Z]
  std::vector<const Image*> queries;
  std::vector<int> query_class;                   // episode-local label in [0, L)
};

Episode sample_episode(const SplitView& split, int way, int shot, int queries_per_class,
                       Rng& rng);

struct AugmentationSpec {
  bool rotation = true;  // 90-degree step plus a continuous [-15,15] jitter
  bool flip = true;      // horizontal, p = 0.5
  bool crop = true;      // resized crop, side scale in [0.7, 1.0]
  bool jitter = true;    // intensity multiplier in [0.8, 1.2]
};

Image augment(const Image& image, const AugmentationSpec& spec, Rng& rng);

/// Lossless 90-degree rotations (counterclockwise), used for the optional
/// class-level rotation expansion.
Image rotate_image_quarters(const Image& image, int quarters);

}  // namespace mlso
