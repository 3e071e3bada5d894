#ifndef DLSN_IMAGING_HPP
#define DLSN_IMAGING_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dlsn/tensor.hpp"

namespace dlsn {

/// Interleaved 8-bit RGB raster, row-major.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h);

  std::uint8_t& at(int x, int y, int channel) { return pixels[3 * (std::size_t(y) * width + x) + channel]; }
  std::uint8_t at(int x, int y, int channel) const { return pixels[3 * (std::size_t(y) * width + x) + channel]; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

// Binary PPM (P6, maxval 255). The writer emits exactly "P6\n<w> <h>\n255\n".
std::vector<std::uint8_t> encode_ppm(const ImageBuffer& image);
ImageBuffer decode_ppm(const std::vector<std::uint8_t>& bytes);
void write_ppm(std::ostream& out, const ImageBuffer& image);
ImageBuffer read_ppm(std::istream& in);
void save_ppm(const std::filesystem::path& path, const ImageBuffer& image);
ImageBuffer load_ppm(const std::filesystem::path& path);

struct DegradationSpec {
  int scale = 1;
  double blur_sigma = 0.0;   // 0 disables blur
  double noise_level = 0.0;  // std-dev in 0..255 units, 0 disables noise
  std::uint64_t rng_seed = 0;
};

/// Float planes (3, h, w) in 0..255 units and back (clamped and rounded).
FeatureMap to_planes(const ImageBuffer& image);
ImageBuffer from_planes(const FeatureMap& planes);

/// Normalized truncated Gaussian taps of radius ceil(3*sigma).
std::vector<double> gaussian_taps(double sigma);

/// Separable Gaussian blur with reflect-101 boundary.
FeatureMap gaussian_blur(const FeatureMap& planes, double sigma);

/// Keys cubic kernel with a = -0.5.
double cubic_weight(double t);

/// Separable bicubic resampling to (out_w, out_h). Source coordinate of
/// output pixel i is (i + 0.5) * in/out - 0.5; reflect-101 boundary; no
/// antialiasing (blur is applied separately in the degradation model).
FeatureMap resize_bicubic(const FeatureMap& planes, int out_width, int out_height);
ImageBuffer resize_bicubic(const ImageBuffer& image, int out_width, int out_height);

/// LR = round(clamp(bicubic_down(blur(HR)) + noise)).
ImageBuffer degrade(const ImageBuffer& hr, const DegradationSpec& spec);

/// BT.601 luma, unrounded, as an (h, w) matrix.
Matrix luma(const ImageBuffer& image);

/// PSNR over Y in dB; identical images return +infinity.
double psnr_y(const ImageBuffer& a, const ImageBuffer& b);

/// Single-scale SSIM over Y: 11x11 Gaussian window (sigma 1.5), C1=(0.01*255)^2,
/// C2=(0.03*255)^2, averaged over valid window positions.
double ssim_y(const ImageBuffer& a, const ImageBuffer& b);

/// Index into [0, n) under reflect-101 (d c b | a b c d | c b a).
int reflect_index(int i, int n);

}  // namespace dlsn

#endif  // DLSN_IMAGING_HPP
