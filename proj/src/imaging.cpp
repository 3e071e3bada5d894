#include "dlsn/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "dlsn/random.hpp"

namespace dlsn {

ImageBuffer::ImageBuffer(int w, int h) : width(w), height(h) {
  require(w > 0 && h > 0, "ImageBuffer dimensions must be positive");
  pixels.assign(3 * std::size_t(w) * h, 0);
}

std::vector<std::uint8_t> encode_ppm(const ImageBuffer& image) {
  require(image.pixels.size() == 3 * std::size_t(image.width) * image.height,
          "encode_ppm: pixel buffer length does not match dimensions");
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  return bytes;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  long read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1L << 24) throw ParseError(std::string("PPM ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("PPM header: expected ") + what, start);
    return value;
  }

  std::size_t pos_ = 0;

 private:
  const std::vector<std::uint8_t>& bytes_;
};

}  // namespace

ImageBuffer decode_ppm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ParseError("PPM: missing P6 magic", 0);
  HeaderReader reader(bytes);
  reader.pos_ = 2;
  const long width = reader.read_uint("width");
  const long height = reader.read_uint("height");
  const std::size_t maxval_offset = reader.pos_;
  const long maxval = reader.read_uint("maxval");
  if (width <= 0 || height <= 0) throw ParseError("PPM: zero dimension", maxval_offset);
  if (maxval != 255) throw ParseError("PPM: maxval must be 255, got " + std::to_string(maxval), maxval_offset);
  if (reader.pos_ >= bytes.size() || !std::isspace(bytes[reader.pos_]))
    throw ParseError("PPM: expected single whitespace after maxval", reader.pos_);
  const std::size_t data_start = reader.pos_ + 1;
  const std::size_t need = 3 * std::size_t(width) * std::size_t(height);
  if (bytes.size() - data_start < need)
    throw ParseError("PPM: truncated pixel data, expected " + std::to_string(need) + " bytes", bytes.size());
  ImageBuffer image{int(width), int(height)};
  std::copy_n(bytes.begin() + std::ptrdiff_t(data_start), need, image.pixels.begin());
  return image;
}

void write_ppm(std::ostream& out, const ImageBuffer& image) {
  const auto bytes = encode_ppm(image);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

ImageBuffer read_ppm(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

void save_ppm(const std::filesystem::path& path, const ImageBuffer& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_ppm(out, image);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ImageBuffer load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_ppm(in);
}

FeatureMap to_planes(const ImageBuffer& image) {
  FeatureMap planes(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) planes(c, y, x) = image.at(x, y, c);
  return planes;
}

ImageBuffer from_planes(const FeatureMap& planes) {
  require(planes.channels() == 3, "from_planes: expected 3 channels");
  ImageBuffer image(int(planes.width()), int(planes.height()));
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(planes(c, y, x), 0.0, 255.0);
        image.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v));
      }
  return image;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<double> gaussian_taps(double sigma) {
  require(sigma > 0.0, "gaussian_taps: sigma must be positive");
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * double(k) * k / (sigma * sigma));
    total += taps[k + radius];
  }
  for (double& t : taps) t /= total;
  return taps;
}

FeatureMap gaussian_blur(const FeatureMap& planes, double sigma) {
  if (sigma <= 0.0) return planes;
  const auto taps = gaussian_taps(sigma);
  const int radius = int(taps.size() / 2);
  const int h = int(planes.height()), w = int(planes.width());
  FeatureMap horizontal(planes.channels(), h, w);
  for (Eigen::Index c = 0; c < planes.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * planes(c, y, reflect_index(x + k, w));
        horizontal(c, y, x) = acc;
      }
  FeatureMap out(planes.channels(), h, w);
  for (Eigen::Index c = 0; c < planes.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * horizontal(c, reflect_index(y + k, h), x);
        out(c, y, x) = acc;
      }
  return out;
}

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  int index[4];
  double weight[4];
};

std::vector<Taps> resample_taps(int in_size, int out_size) {
  std::vector<Taps> taps(out_size);
  const double ratio = double(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const double src = (i + 0.5) * ratio - 0.5;
    const int base = int(std::floor(src));
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      taps[i].index[k] = reflect_index(base - 1 + k, in_size);
      taps[i].weight[k] = cubic_weight(frac - (k - 1));
    }
  }
  return taps;
}

}  // namespace

FeatureMap resize_bicubic(const FeatureMap& planes, int out_width, int out_height) {
  require(out_width > 0 && out_height > 0, "resize_bicubic: output dims must be positive");
  const auto tx = resample_taps(int(planes.width()), out_width);
  const auto ty = resample_taps(int(planes.height()), out_height);
  FeatureMap horizontal(planes.channels(), planes.height(), out_width);
  for (Eigen::Index c = 0; c < planes.channels(); ++c)
    for (Eigen::Index y = 0; y < planes.height(); ++y)
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tx[x].weight[k] * planes(c, y, tx[x].index[k]);
        horizontal(c, y, x) = acc;
      }
  FeatureMap out(planes.channels(), out_height, out_width);
  for (Eigen::Index c = 0; c < planes.channels(); ++c)
    for (int y = 0; y < out_height; ++y)
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += ty[y].weight[k] * horizontal(c, ty[y].index[k], x);
        out(c, y, x) = acc;
      }
  return out;
}

ImageBuffer resize_bicubic(const ImageBuffer& image, int out_width, int out_height) {
  return from_planes(resize_bicubic(to_planes(image), out_width, out_height));
}

ImageBuffer degrade(const ImageBuffer& hr, const DegradationSpec& spec) {
  require(spec.scale >= 1, "degrade: scale must be >= 1");
  require(spec.blur_sigma >= 0.0 && spec.noise_level >= 0.0, "degrade: sigma and noise must be non-negative");
  require(hr.width % spec.scale == 0 && hr.height % spec.scale == 0,
          "degrade: scale " + std::to_string(spec.scale) + " does not divide " + std::to_string(hr.width) + "x" +
              std::to_string(hr.height));
  FeatureMap planes = gaussian_blur(to_planes(hr), spec.blur_sigma);
  if (spec.scale > 1) planes = resize_bicubic(planes, hr.width / spec.scale, hr.height / spec.scale);
  if (spec.noise_level > 0.0) {
    Xoshiro256 rng(spec.rng_seed);
    for (Eigen::Index y = 0; y < planes.height(); ++y)
      for (Eigen::Index x = 0; x < planes.width(); ++x)
        for (int c = 0; c < 3; ++c) planes(c, y, x) += spec.noise_level * rng.normal();
  }
  return from_planes(planes);
}

Matrix luma(const ImageBuffer& image) {
  Matrix y(image.height, image.width);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      y(r, c) = 0.299 * image.at(c, r, 0) + 0.587 * image.at(c, r, 1) + 0.114 * image.at(c, r, 2);
  return y;
}

double psnr_y(const ImageBuffer& a, const ImageBuffer& b) {
  require(a.width == b.width && a.height == b.height, "psnr_y: image dimensions differ");
  const double mse = (luma(a) - luma(b)).array().square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_y(const ImageBuffer& a, const ImageBuffer& b) {
  require(a.width == b.width && a.height == b.height, "ssim_y: image dimensions differ");
  constexpr int kWindow = 11;
  require(a.width >= kWindow && a.height >= kWindow, "ssim_y: images must be at least 11x11");
  constexpr double c1 = (0.01 * 255) * (0.01 * 255);
  constexpr double c2 = (0.03 * 255) * (0.03 * 255);

  double window[kWindow][kWindow];
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i)
    for (int j = 0; j < kWindow; ++j) {
      const double di = i - 5, dj = j - 5;
      window[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      total += window[i][j];
    }
  for (auto& row : window)
    for (double& v : row) v /= total;

  const Matrix x = luma(a), y = luma(b);
  double sum = 0.0;
  long count = 0;
  for (int r = 0; r + kWindow <= a.height; ++r)
    for (int c = 0; c + kWindow <= a.width; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < kWindow; ++i)
        for (int j = 0; j < kWindow; ++j) {
          mx += window[i][j] * x(r + i, c + j);
          my += window[i][j] * y(r + i, c + j);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < kWindow; ++i)
        for (int j = 0; j < kWindow; ++j) {
          const double dx = x(r + i, c + j) - mx, dy = y(r + i, c + j) - my;
          vx += window[i][j] * dx * dx;
          vy += window[i][j] * dy * dy;
          cov += window[i][j] * dx * dy;
        }
      sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return sum / double(count);
}

}  // namespace dlsn
