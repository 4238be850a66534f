#pragma once

// Image containers, the sRGB transfer pair, bilinear resampling and the two
// on-disk formats (8-bit RGB PNG, little-endian PFM).

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pixl/error.hpp"

namespace pixl {

/// Dense C×H×W float buffer, channel-major. Used for render passes,
/// intrinsic maps and conditioning stacks.
class FloatBuffer {
 public:
  FloatBuffer() = default;
  FloatBuffer(int channels, int height, int width, float fill = 0.f)
      : channels_(channels), height_(height), width_(width) {
    require(channels > 0 && height > 0 && width > 0,
            "FloatBuffer dimensions must be positive, got " + dims_string(channels, height, width));
    data_.assign(size_t(channels) * height * width, fill);
  }
  FloatBuffer(int channels, int height, int width, std::vector<float> data)
      : FloatBuffer(channels, height, width) {
    require(data.size() == data_.size(), "FloatBuffer payload size does not match " +
                                             dims_string(channels, height, width));
    data_ = std::move(data);
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  size_t plane_size() const { return size_t(height_) * width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int c, int y, int x) { return data_[(size_t(c) * height_ + y) * width_ + x]; }
  float at(int c, int y, int x) const { return data_[(size_t(c) * height_ + y) * width_ + x]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const float> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }
  const std::vector<float>& vec() const { return data_; }

  bool same_dims(const FloatBuffer& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  bool same_spatial(const FloatBuffer& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }
  std::string dims() const { return dims_string(channels_, height_, width_); }

  // Channels [begin, end) as a new buffer.
  FloatBuffer channel_slice(int begin, int end) const {
    require(begin >= 0 && end <= channels_ && begin < end, "channel_slice out of range");
    FloatBuffer out(end - begin, height_, width_);
    std::copy(data_.begin() + begin * plane_size(), data_.begin() + end * plane_size(),
              out.data_.begin());
    return out;
  }

  static FloatBuffer concat_channels(std::span<const FloatBuffer> parts) {
    require(!parts.empty(), "concat_channels of nothing");
    int c = 0;
    for (const auto& p : parts) {
      require(p.same_spatial(parts[0]), "concat_channels: spatial mismatch " + p.dims() +
                                            " vs " + parts[0].dims());
      c += p.channels();
    }
    FloatBuffer out(c, parts[0].height(), parts[0].width());
    auto it = out.data_.begin();
    for (const auto& p : parts) it = std::copy(p.data_.begin(), p.data_.end(), it);
    return out;
  }

  friend bool operator==(const FloatBuffer&, const FloatBuffer&) = default;

 private:
  static std::string dims_string(int c, int h, int w) {
    return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }

  int channels_ = 0, height_ = 0, width_ = 0;
  std::vector<float> data_;
};

enum class ColorSpace { srgb, linear };

/// 3×H×W RGB image tagged with its encoding.
class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(FloatBuffer pixels, ColorSpace space) : pixels_(std::move(pixels)), space_(space) {
    require(pixels_.channels() == 3, "ImageRGB needs 3 channels, got " + pixels_.dims());
  }
  ImageRGB(int height, int width, ColorSpace space, float fill = 0.f)
      : ImageRGB(FloatBuffer(3, height, width, fill), space) {}

  int height() const { return pixels_.height(); }
  int width() const { return pixels_.width(); }
  ColorSpace space() const { return space_; }
  const FloatBuffer& pixels() const { return pixels_; }
  FloatBuffer& pixels() { return pixels_; }
  std::span<const float> data() const { return pixels_.data(); }
  std::span<float> data() { return pixels_.data(); }
  float at(int c, int y, int x) const { return pixels_.at(c, y, x); }
  float& at(int c, int y, int x) { return pixels_.at(c, y, x); }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

 private:
  FloatBuffer pixels_;
  ColorSpace space_ = ColorSpace::srgb;
};

// IEC 61966-2-1 transfer curves on a single value.
inline float srgb_decode(float v) {
  return v <= 0.04045f ? v / 12.92f : float(std::pow((double(v) + 0.055) / 1.055, 2.4));
}
inline float srgb_encode(float v) {
  return v <= 0.0031308f ? v * 12.92f : float(1.055 * std::pow(double(v), 1.0 / 2.4) - 0.055);
}

inline ImageRGB srgb_to_linear(const ImageRGB& img) {
  require(img.space() == ColorSpace::srgb, "srgb_to_linear: image is already linear");
  ImageRGB out = img;
  for (float& v : out.data()) v = srgb_decode(v);
  return ImageRGB(std::move(out.pixels()), ColorSpace::linear);
}

inline ImageRGB linear_to_srgb(const ImageRGB& img) {
  require(img.space() == ColorSpace::linear, "linear_to_srgb: image is already sRGB-encoded");
  ImageRGB out = img;
  for (float& v : out.data()) v = srgb_encode(v);
  return ImageRGB(std::move(out.pixels()), ColorSpace::srgb);
}

inline ImageRGB clip01(const ImageRGB& img) {
  ImageRGB out = img;
  for (float& v : out.data()) v = std::clamp(v, 0.f, 1.f);
  return out;
}

// Source coordinate and blend weight along one axis for half-pixel-center
// bilinear resampling. Shared with the differentiable upsampling op.
struct LerpTap {
  int i0, i1;
  float w;
};
inline std::vector<LerpTap> bilinear_taps(int in, int out) {
  std::vector<LerpTap> taps(out);
  const double scale = double(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    int i0 = int(std::floor(src));
    int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, float(src - i0)};
  }
  return taps;
}

inline FloatBuffer resize_bilinear(const FloatBuffer& src, int new_h, int new_w) {
  require(new_h > 0 && new_w > 0, "resize_bilinear: target dimensions must be positive");
  if (new_h == src.height() && new_w == src.width()) return src;
  FloatBuffer out(src.channels(), new_h, new_w);
  const auto ty = bilinear_taps(src.height(), new_h);
  const auto tx = bilinear_taps(src.width(), new_w);
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < new_h; ++y)
      for (int x = 0; x < new_w; ++x) {
        const auto& [y0, y1, wy] = ty[y];
        const auto& [x0, x1, wx] = tx[x];
        float top = std::lerp(src.at(c, y0, x0), src.at(c, y0, x1), wx);
        float bot = std::lerp(src.at(c, y1, x0), src.at(c, y1, x1), wx);
        out.at(c, y, x) = std::lerp(top, bot, wy);
      }
  return out;
}

inline ImageRGB resize_bilinear(const ImageRGB& img, int new_h, int new_w) {
  return ImageRGB(resize_bilinear(img.pixels(), new_h, new_w), img.space());
}

// ---------------------------------------------------------------------------
// PNG

inline ImageRGB load_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw Error("load_png " + path + ": " + image.message);
  auto fail = [&](const std::string& msg) {
    png_image_free(&image);
    throw Error("load_png " + path + ": " + msg);
  };
  if (image.format & PNG_FORMAT_FLAG_LINEAR) fail("unsupported bit depth (need 8-bit)");
  if (!(image.format & PNG_FORMAT_FLAG_COLOR) || (image.format & PNG_FORMAT_FLAG_ALPHA))
    fail("unsupported channel layout (need RGB)");
  image.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr))
    throw Error("load_png " + path + ": " + image.message);
  const int h = int(image.height), w = int(image.width);
  ImageRGB out(h, w, ColorSpace::srgb);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = raw[(size_t(y) * w + x) * 3 + c] / 255.f;
  return out;
}

inline uint8_t quantize8(float v) { return uint8_t(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)); }

inline void save_png(const ImageRGB& img, const std::string& path) {
  require(img.space() == ColorSpace::srgb, "save_png: image must be sRGB-encoded");
  const int h = img.height(), w = img.width();
  std::vector<uint8_t> raw(size_t(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.at(c, y, x);
        if (!std::isfinite(v)) throw Error("save_png " + path + ": non-finite pixel value");
        raw[(size_t(y) * w + x) * 3 + c] = quantize8(v);
      }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(w);
  image.height = png_uint_32(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, raw.data(), 0, nullptr))
    throw Error("save_png " + path + ": " + image.message);
}

// ---------------------------------------------------------------------------
// PFM. "PF" holds 3 channels, "Pf" one; rows are stored bottom-to-top.

inline void save_pfm(const FloatBuffer& buf, const std::string& path) {
  require(buf.channels() == 3 || buf.channels() == 1,
          "save_pfm: need 1 or 3 channels, got " + buf.dims());
  if (!buf.all_finite()) throw Error("save_pfm " + path + ": non-finite value");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("save_pfm: cannot open " + path);
  f << (buf.channels() == 3 ? "PF" : "Pf") << "\n" << buf.width() << " " << buf.height()
    << "\n-1.0\n";
  const int c = buf.channels();
  std::vector<float> row(size_t(buf.width()) * c);
  for (int y = buf.height() - 1; y >= 0; --y) {
    for (int x = 0; x < buf.width(); ++x)
      for (int k = 0; k < c; ++k) row[size_t(x) * c + k] = buf.at(k, y, x);
    static_assert(std::endian::native == std::endian::little);
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * 4));
  }
  if (!f) throw Error("save_pfm: write failed " + path);
}

inline FloatBuffer load_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("load_pfm: cannot open " + path);
  std::string magic;
  long long w = 0, h = 0;
  double scale = 0;
  f >> magic;
  if (magic != "PF" && magic != "Pf") throw Error("load_pfm " + path + ": bad magic '" + magic + "'");
  f >> w >> h >> scale;
  if (!f) throw Error("load_pfm " + path + ": malformed header");
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16))
    throw Error("load_pfm " + path + ": invalid dimensions " + std::to_string(w) + "x" +
                std::to_string(h));
  if (scale == 0) throw Error("load_pfm " + path + ": zero scale field");
  f.get();  // single whitespace byte after the scale
  const int c = magic == "PF" ? 3 : 1;
  std::vector<float> row(size_t(w) * c);
  FloatBuffer out(c, int(h), int(w));
  const bool swap = scale > 0;  // positive scale means big-endian payload
  for (long long y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * 4));
    if (f.gcount() != std::streamsize(row.size() * 4))
      throw Error("load_pfm " + path + ": payload shorter than header dimensions");
    for (long long x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        float v = row[size_t(x) * c + k];
        if (swap) {
          uint32_t u;
          std::memcpy(&u, &v, 4);
          u = __builtin_bswap32(u);
          std::memcpy(&v, &u, 4);
        }
        out.at(k, int(y), int(x)) = v;
      }
  }
  if (f.peek() != std::char_traits<char>::eof())
    throw Error("load_pfm " + path + ": trailing bytes after payload");
  return out;
}

// Multi-channel stacks go to disk as consecutive 3-channel PFMs.
inline void save_pfm_stack(const FloatBuffer& stack, std::span<const std::string> paths) {
  require(stack.channels() == int(paths.size()) * 3,
          "save_pfm_stack: " + stack.dims() + " does not split into " +
              std::to_string(paths.size()) + " RGB files");
  for (size_t i = 0; i < paths.size(); ++i)
    save_pfm(stack.channel_slice(int(i) * 3, int(i) * 3 + 3), paths[i]);
}

inline FloatBuffer load_pfm_stack(std::span<const std::string> paths) {
  std::vector<FloatBuffer> parts;
  for (const auto& p : paths) {
    parts.push_back(load_pfm(p));
    require(parts.back().channels() == 3, "load_pfm_stack: " + p + " is not 3-channel");
  }
  return FloatBuffer::concat_channels(parts);
}

}  // namespace pixl
