#include "gnf/image.hpp"

#include <png.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "gnf/parallel.hpp"

namespace gnf {

namespace {

using FilePtr = std::unique_ptr<std::FILE, decltype(&std::fclose)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode), &std::fclose);
  if (!f) throw ContractError("cannot open image " + path.string());
  return f;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

ImageBuffer load_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ContractError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ContractError("corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  std::vector<png_byte> raw(stride * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  ImageBuffer img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w * 3; ++x) img.data[static_cast<std::size_t>(y) * w * 3 + x] = rows[y][x] / 255.0f;
  }
  return img;
}

void save_png(const std::filesystem::path& path, const ImageBuffer& image) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ContractError("libpng initialisation failed");
  }
  std::vector<png_byte> raw(image.data.size());
  std::transform(image.data.begin(), image.data.end(), raw.begin(), to_byte);
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * image.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ContractError("failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageBuffer load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ContractError("unsupported image format: " + path.string());
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    int v = 0;
    if (!(in >> v)) throw ContractError("malformed PPM header: " + path.string());
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw ContractError("unsupported PPM: " + path.string());
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw ContractError("truncated PPM: " + path.string());
  }
  ImageBuffer img(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

}  // namespace

ImageBuffer load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  in.close();
  if (png_sig_cmp(sig, 0, 8) == 0) return load_png(path);
  if (sig[0] == 'P' && sig[1] == '6') return load_ppm(path);
  throw ContractError("unsupported image format: " + path.string());
}

void save_image(const std::filesystem::path& path, const ImageBuffer& image) {
  if (image.empty()) throw ContractError("save_image: empty image");
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") {
    save_png(path, image);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.data.size());
  std::transform(image.data.begin(), image.data.end(), raw.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

ImageBuffer quantize_8bit(const ImageBuffer& image) {
  ImageBuffer q = image;
  for (auto& v : q.data) v = to_byte(v) / 255.0f;
  return q;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width != b.width || a.height != b.height) throw ContractError("psnr: image shapes differ");
  if (a.empty()) throw ContractError("psnr: empty image");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrIdentical;
  return -10.0 * std::log10(sse / static_cast<double>(a.data.size()));
}

ImageBuffer render_image(const FieldModel<float>& model, int width, int height, int levels, unsigned workers,
                         RenderStats* stats) {
  if (width <= 0 || height <= 0) throw ContractError("render_image: size must be positive");
  if (model.dim() != 2 || model.out_dim() != 3) throw ContractError("render_image: model is not an image field");
  const auto start = std::chrono::steady_clock::now();
  ImageBuffer img(width, height);
  parallel_chunks(static_cast<std::size_t>(height), workers, [&](unsigned, std::size_t y0, std::size_t y1) {
    std::vector<float> pts(static_cast<std::size_t>(width) * 2);
    for (std::size_t y = y0; y < y1; ++y) {
      for (int x = 0; x < width; ++x) {
        const auto c = pixel_center(x, static_cast<int>(y), width, height);
        pts[2 * x] = c[0];
        pts[2 * x + 1] = c[1];
      }
      std::span<float> row(img.pixel(0, static_cast<int>(y)), static_cast<std::size_t>(width) * 3);
      model.forward(pts, row, levels);
      for (auto& v : row) v = std::clamp(v, 0.0f, 1.0f);
    }
  });
  if (stats) {
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stats->pixels_per_second = stats->seconds > 0 ? img.pixel_count() / stats->seconds : 0.0;
  }
  return img;
}

const std::array<std::array<float, 3>, 256>& error_ramp() {
  static const auto ramp = [] {
    std::array<std::array<float, 3>, 256> r{};
    for (int i = 0; i < 256; ++i) {
      const float t = i / 255.0f;
      r[i] = {std::clamp(3.0f * t, 0.0f, 1.0f), std::clamp(3.0f * t - 1.0f, 0.0f, 1.0f),
              std::clamp(3.0f * t - 2.0f, 0.0f, 1.0f)};
    }
    return r;
  }();
  return ramp;
}

int error_ramp_index(double residual, double cap) {
  if (!(cap > 0)) throw ContractError("error_map: cap must be positive");
  const double t = std::clamp(residual / cap, 0.0, 1.0);
  return static_cast<int>(std::lround(t * 255.0));
}

ImageBuffer error_map(const ImageBuffer& a, const ImageBuffer& b, double cap) {
  if (a.width != b.width || a.height != b.height) throw ContractError("error_map: image shapes differ");
  ImageBuffer out(a.width, a.height);
  const auto& ramp = error_ramp();
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    double sq = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = static_cast<double>(a.data[3 * i + c]) - b.data[3 * i + c];
      sq += d * d;
    }
    const auto& color = ramp[error_ramp_index(std::sqrt(sq), cap)];
    std::copy(color.begin(), color.end(), out.data.begin() + 3 * i);
  }
  return out;
}

}  // namespace gnf
