#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>

#include "mlso/episodes.hpp"
#include "mlso/errors.hpp"

namespace mlso {

namespace {

constexpr int kTargetSize = 28;

Image read_png_gray(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                                     &std::fclose);
  if (!fp) throw IngestionError("cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IngestionError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IngestionError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("invalid PNG file " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);                // palette / low-bit-depth to 8-bit
  png_set_strip_16(png);              // 16-bit to 8-bit
  png_set_strip_alpha(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  std::vector<png_byte> row(png_get_rowbytes(png, info));

  Image img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      img.pixels[static_cast<std::size_t>(y) * w + x] = row[static_cast<std::size_t>(x)] / 255.0;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image resize_to_target(const Image& src) {
  if (src.height == kTargetSize && src.width == kTargetSize) return src;
  Image out;
  out.height = kTargetSize;
  out.width = kTargetSize;
  out.pixels.assign(static_cast<std::size_t>(kTargetSize) * kTargetSize, 0.0);
  if (src.height % kTargetSize == 0 && src.width % kTargetSize == 0) {
    // Integer-factor average pooling.
    const int fy = src.height / kTargetSize, fx = src.width / kTargetSize;
    for (int y = 0; y < kTargetSize; ++y) {
      for (int x = 0; x < kTargetSize; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < fy; ++dy) {
          for (int dx = 0; dx < fx; ++dx) acc += src.at(y * fy + dy, x * fx + dx);
        }
        out.pixels[static_cast<std::size_t>(y) * kTargetSize + x] =
            acc / (static_cast<double>(fy) * fx);
      }
    }
  } else {
    for (int y = 0; y < kTargetSize; ++y) {
      for (int x = 0; x < kTargetSize; ++x) {
        const int sy = std::min(src.height - 1, y * src.height / kTargetSize);
        const int sx = std::min(src.width - 1, x * src.width / kTargetSize);
        out.pixels[static_cast<std::size_t>(y) * kTargetSize + x] = src.at(sy, sx);
      }
    }
  }
  return out;
}

}  // namespace

Dataset load_omniglot(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw IngestionError("dataset root does not exist: " + root.string());
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) throw IngestionError("no class directories under " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end());

  Dataset ds;
  ds.height = kTargetSize;
  ds.width = kTargetSize;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") {
        files.push_back(entry.path());
      }
    }
    if (files.empty()) {
      throw IngestionError("class directory has no PNG samples: " + dir.filename().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<Image> samples;
    samples.reserve(files.size());
    for (const auto& file : files) samples.push_back(resize_to_target(read_png_gray(file)));
    ds.class_ids.push_back(dir.filename().string());
    ds.samples.push_back(std::move(samples));
  }
  return ds;
}

}  // namespace mlso
