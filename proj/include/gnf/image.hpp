#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <vector>

#include "gnf/field_model.hpp"

namespace gnf {

/// Row-major RGB image with channels in [0, 1].
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const { return width == 0 || height == 0; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float* pixel(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* pixel(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// PNG (8-bit RGB/RGBA/gray, alpha dropped) or binary PPM (P6), chosen by
/// file signature.
ImageBuffer load_image(const std::filesystem::path& path);
/// PNG when the extension is .png, PPM otherwise. Values are clamped and
/// rounded to 8 bits.
void save_image(const std::filesystem::path& path, const ImageBuffer& image);

/// Rounds every channel to the nearest 8-bit level.
ImageBuffer quantize_8bit(const ImageBuffer& image);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// -10 log10(MSE) over all channels; +inf when the images are identical.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Pixel center (x + 0.5) / w, (y + 0.5) / h.
inline std::array<float, 2> pixel_center(int x, int y, int width, int height) {
  return {(static_cast<float>(x) + 0.5f) / static_cast<float>(width),
          (static_cast<float>(y) + 0.5f) / static_cast<float>(height)};
}

struct RenderStats {
  double seconds = 0.0;
  double pixels_per_second = 0.0;
};

/// Evaluates the field at every pixel center, clamped to [0, 1]. Output does
/// not depend on the worker count.
ImageBuffer render_image(const FieldModel<float>& model, int width, int height, int levels = -1,
                         unsigned workers = 1, RenderStats* stats = nullptr);

/// 256-entry ramp: black -> red -> yellow -> white, piecewise linear with
/// breakpoints at 1/3 and 2/3.
const std::array<std::array<float, 3>, 256>& error_ramp();

/// Per-pixel Euclidean RGB residual divided by `cap`, clamped to [0, 1],
/// mapped through error_ramp().
ImageBuffer error_map(const ImageBuffer& a, const ImageBuffer& b, double cap = 0.1);

/// Index into error_ramp() for a residual magnitude.
int error_ramp_index(double residual, double cap);

}  // namespace gnf
