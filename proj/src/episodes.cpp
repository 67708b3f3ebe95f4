#include "mlso/episodes.hpp"

#include <algorithm>
#include <cmath>

#include "mlso/errors.hpp"

namespace mlso {

std::pair<SplitView, SplitView> split_dataset(const Dataset& dataset, int train_classes) {
  if (train_classes < 1 || train_classes >= dataset.num_classes()) {
    throw ConfigError("split_dataset: train class count must leave both splits non-empty");
  }
  SplitView train{&dataset, {}};
  SplitView test{&dataset, {}};
  for (int c = 0; c < dataset.num_classes(); ++c) {
    (c < train_classes ? train : test).class_indices.push_back(c);
  }
  return {train, test};
}

namespace {

struct Blob {
  double cy, cx, sigma, amplitude;
};

constexpr int kSyntheticSize = 32;
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

Image render_blobs(const std::vector<Blob>& blobs, double shift_y, double shift_x,
                   double angle_deg, Rng& noise_rng, double noise_sigma) {
  Image img;
  img.height = kSyntheticSize;
  img.width = kSyntheticSize;
  img.pixels.assign(static_cast<std::size_t>(kSyntheticSize) * kSyntheticSize, 0.0);
  const double ctr = (kSyntheticSize - 1) / 2.0;
  const double cs = std::cos(angle_deg * kDegToRad);
  const double sn = std::sin(angle_deg * kDegToRad);
  for (const Blob& blob : blobs) {
    // Rotate the blob center about the frame center, then shift.
    const double ry = ctr + cs * (blob.cy - ctr) - sn * (blob.cx - ctr) + shift_y;
    const double rx = ctr + sn * (blob.cy - ctr) + cs * (blob.cx - ctr) + shift_x;
    const double inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
    for (int y = 0; y < kSyntheticSize; ++y) {
      for (int x = 0; x < kSyntheticSize; ++x) {
        const double dy = y - ry, dx = x - rx;
        img.pixels[static_cast<std::size_t>(y) * kSyntheticSize + x] +=
            blob.amplitude * std::exp(-(dy * dy + dx * dx) * inv);
      }
    }
  }
  for (double& v : img.pixels) {
    v += noise_rng.normal(0.0, noise_sigma);
    v = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

}  // namespace

Dataset gen_synthetic(int num_classes, int samples_per_class, std::uint64_t seed) {
  return gen_synthetic(num_classes, samples_per_class, seed, 0.05, 3.0, 15.0);
}

Dataset gen_synthetic(int num_classes, int samples_per_class, std::uint64_t seed,
                      double noise_sigma, double max_shift, double max_rotation_deg) {
  if (num_classes < 2) throw ConfigError("gen_synthetic: at least two classes required");
  if (samples_per_class < 1) throw ConfigError("gen_synthetic: samples_per_class must be >= 1");
  Dataset ds;
  ds.height = kSyntheticSize;
  ds.width = kSyntheticSize;
  Rng root(seed);
  for (int c = 0; c < num_classes; ++c) {
    Rng class_rng = root.fork(0x100 + static_cast<std::uint64_t>(c));
    std::vector<Blob> blobs;
    for (int b = 0; b < 3; ++b) {
      Blob blob;
      blob.cy = class_rng.uniform(0.0, kSyntheticSize - 1);
      blob.cx = class_rng.uniform(0.0, kSyntheticSize - 1);
      blob.sigma = class_rng.uniform(2.0, 5.0);
      blob.amplitude = class_rng.uniform(0.5, 1.0);
      blobs.push_back(blob);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", c);
    ds.class_ids.emplace_back(name);
    std::vector<Image> samples;
    for (int i = 0; i < samples_per_class; ++i) {
      Rng sample_rng = class_rng.fork(0x8000 + static_cast<std::uint64_t>(i));
      const double shift_y = sample_rng.uniform(-max_shift, max_shift);
      const double shift_x = sample_rng.uniform(-max_shift, max_shift);
      const double angle = sample_rng.uniform(-max_rotation_deg, max_rotation_deg);
      samples.push_back(render_blobs(blobs, shift_y, shift_x, angle, sample_rng, noise_sigma));
    }
    ds.samples.push_back(std::move(samples));
  }
  return ds;
}

Episode sample_episode(const SplitView& split, int way, int shot, int queries_per_class,
                       Rng& rng) {
  if (way < 2) throw SamplingError("sample_episode: way must be >= 2");
  if (shot < 1 || queries_per_class < 1) {
    throw SamplingError("sample_episode: shot and query counts must be >= 1");
  }
  if (split.num_classes() < way) {
    throw SamplingError("sample_episode: split has fewer classes than the requested way");
  }
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.classes = rng.sample_without_replacement(split.num_classes(), way);
  for (int l = 0; l < way; ++l) {
    const auto& pool = split.class_samples(ep.classes[static_cast<std::size_t>(l)]);
    const int needed = shot + queries_per_class;
    if (static_cast<int>(pool.size()) < needed) {
      throw SamplingError("sample_episode: class has too few samples for shot+queries");
    }
    std::vector<int> picks = rng.sample_without_replacement(static_cast<int>(pool.size()), needed);
    std::vector<const Image*> support;
    for (int z = 0; z < shot; ++z) {
      support.push_back(&pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(z)])]);
    }
    ep.support.push_back(std::move(support));
    for (int qi = 0; qi < queries_per_class; ++qi) {
      ep.queries.push_back(
          &pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(shot + qi)])]);
      ep.query_class.push_back(l);
    }
  }
  return ep;
}

namespace {

double bilinear_sample(const Image& img, double y, double x) {
  if (y < 0.0 || x < 0.0 || y > img.height - 1 || x > img.width - 1) return 0.0;
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0, fx = x - x0;
  return img.at(y0, x0) * (1 - fy) * (1 - fx) + img.at(y0, x1) * (1 - fy) * fx +
         img.at(y1, x0) * fy * (1 - fx) + img.at(y1, x1) * fy * fx;
}

}  // namespace

Image rotate_image_quarters(const Image& img, int quarters) {
  quarters = ((quarters % 4) + 4) % 4;
  if (quarters == 0) return img;
  Image out = img;
  for (int q = 0; q < quarters; ++q) {
    Image next;
    next.height = out.width;
    next.width = out.height;
    next.pixels.assign(out.pixels.size(), 0.0);
    for (int y = 0; y < next.height; ++y) {
      for (int x = 0; x < next.width; ++x) {
        // 90-degree counterclockwise rotation
        next.pixels[static_cast<std::size_t>(y) * next.width + x] =
            out.at(x, out.width - 1 - y);
      }
    }
    out = std::move(next);
  }
  return out;
}

Image augment(const Image& image, const AugmentationSpec& spec, Rng& rng) {
  Image out = image;
  if (spec.rotation) {
    out = rotate_image_quarters(out, rng.uniform_int(0, 3));
    const double angle = rng.uniform(-15.0, 15.0) * kDegToRad;
    Image rotated;
    rotated.height = out.height;
    rotated.width = out.width;
    rotated.pixels.assign(out.pixels.size(), 0.0);
    const double cy = (out.height - 1) / 2.0, cx = (out.width - 1) / 2.0;
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        // Inverse mapping: rotate output coordinates back into the source.
        const double sy = cy + cs * (y - cy) + sn * (x - cx);
        const double sx = cx - sn * (y - cy) + cs * (x - cx);
        rotated.pixels[static_cast<std::size_t>(y) * out.width + x] =
            bilinear_sample(out, sy, sx);
      }
    }
    out = std::move(rotated);
  }
  if (spec.flip && rng.uniform01() < 0.5) {
    Image flipped = out;
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        flipped.pixels[static_cast<std::size_t>(y) * out.width + x] =
            out.at(y, out.width - 1 - x);
      }
    }
    out = std::move(flipped);
  }
  if (spec.crop) {
    const double scale = rng.uniform(0.7, 1.0);
    const int ch = std::max(1, static_cast<int>(std::lround(out.height * scale)));
    const int cw = std::max(1, static_cast<int>(std::lround(out.width * scale)));
    const int oy = rng.uniform_int(0, out.height - ch);
    const int ox = rng.uniform_int(0, out.width - cw);
    Image resized;
    resized.height = out.height;
    resized.width = out.width;
    resized.pixels.assign(out.pixels.size(), 0.0);
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        const double sy = oy + (ch - 1) * (out.height > 1 ? y / double(out.height - 1) : 0.0);
        const double sx = ox + (cw - 1) * (out.width > 1 ? x / double(out.width - 1) : 0.0);
        resized.pixels[static_cast<std::size_t>(y) * out.width + x] =
            bilinear_sample(out, sy, sx);
      }
    }
    out = std::move(resized);
  }
  if (spec.jitter) {
    const double factor = rng.uniform(0.8, 1.2);
    for (double& v : out.pixels) v *= factor;
  }
  for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace mlso
