#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "dlsn/imaging.hpp"
#include "test_util.hpp"

using namespace dlsn;
using dlsn::testing::random_image;

namespace {

ImageBuffer constant_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ImageBuffer img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  return img;
}

ImageBuffer ramp_image(int w, int h) {
  ImageBuffer img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = std::uint8_t(4 * x + y);
      img.at(x, y, 1) = std::uint8_t(3 * y + 10);
      img.at(x, y, 2) = std::uint8_t((x * y) % 256);
    }
  return img;
}

}  // namespace

TEST_CASE("ppm header bytes for a single white pixel") {
  const ImageBuffer img = constant_image(1, 1, 255, 255, 255);
  const std::vector<std::uint8_t> expected = {0x50, 0x36, 0x0A, 0x31, 0x20, 0x31, 0x0A,
                                              0x32, 0x35, 0x35, 0x0A, 0xFF, 0xFF, 0xFF};
  CHECK(encode_ppm(img) == expected);
}

TEST_CASE("ppm hand-built 2x2 file parses row-major") {
  const std::string header = "P6\n2 2\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (std::uint8_t v : {255, 0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0}) bytes.push_back(v);
  const ImageBuffer img = decode_ppm(bytes);
  REQUIRE(img.width == 2);
  REQUIRE(img.height == 2);
  CHECK(img.at(0, 0, 0) == 255);
  CHECK(img.at(1, 0, 1) == 255);
  CHECK(img.at(0, 1, 2) == 255);
  CHECK(img.at(1, 1, 0) == 0);
  CHECK(img.at(1, 1, 1) == 0);
  CHECK(img.at(1, 1, 2) == 0);
}

TEST_CASE("ppm round trip through a stream") {
  Xoshiro256 rng(1);
  for (int t = 0; t < 5; ++t) {
    const ImageBuffer img = random_image(1 + int(rng.below(20)), 1 + int(rng.below(20)), rng);
    std::stringstream ss;
    write_ppm(ss, img);
    CHECK(read_ppm(ss) == img);
  }
}

TEST_CASE("ppm errors carry offsets") {
  const std::string good = "P6\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(good.begin(), good.end());
  bytes.insert(bytes.end(), 6, 7);

  auto bad_magic = bytes;
  bad_magic[1] = '3';
  CHECK_THROWS_AS(decode_ppm(bad_magic), ParseError);

  auto truncated = bytes;
  truncated.pop_back();
  try {
    decode_ppm(truncated);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == truncated.size());
  }

  const std::string wide = "P6\n2 1\n65535\n";
  std::vector<std::uint8_t> wide_bytes(wide.begin(), wide.end());
  wide_bytes.insert(wide_bytes.end(), 12, 0);
  try {
    decode_ppm(wide_bytes);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 6);
  }

  const std::string garbage = "P6\nx 1\n255\n";
  CHECK_THROWS_AS(decode_ppm(std::vector<std::uint8_t>(garbage.begin(), garbage.end())), ParseError);
}

TEST_CASE("reflect index") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(-7, 3) == 1);
  CHECK(reflect_index(4, 1) == 0);
}

TEST_CASE("cubic kernel is a partition of unity") {
  for (double f = 0.0; f < 1.0; f += 0.0625) {
    const double sum = cubic_weight(f + 1) + cubic_weight(f) + cubic_weight(f - 1) + cubic_weight(f - 2);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(cubic_weight(0.0) == 1.0);
  CHECK(cubic_weight(1.0) == 0.0);
  CHECK(cubic_weight(2.5) == 0.0);
}

TEST_CASE("degrade identity settings") {
  Xoshiro256 rng(2);
  const ImageBuffer img = random_image(9, 7, rng);
  CHECK(degrade(img, {1, 0.0, 0.0, 5}) == img);
}

TEST_CASE("degrade keeps constant colour") {
  const ImageBuffer img = constant_image(24, 12, 200, 17, 90);
  for (int s : {1, 2, 3, 4}) {
    const ImageBuffer out = degrade(img, {s, 1.3, 0.0, 0});
    CHECK(out == constant_image(24 / s, 12 / s, 200, 17, 90));
  }
}

TEST_CASE("degrade rejects non-dividing scale") {
  CHECK_THROWS_AS(degrade(ImageBuffer(10, 9), {2, 0.0, 0.0, 0}), InvalidArgument);
}

TEST_CASE("degrade sigma 1.6 scale 3 matches direct 2-D oracle") {
  const int n = 48, s = 3, m = n / s;
  const double sigma = 1.6;
  const ImageBuffer hr = ramp_image(n, n);
  const ImageBuffer lr = degrade(hr, {s, sigma, 0.0, 0});
  REQUIRE(lr.width == m);

  // direct 2-D Gaussian convolution with reflect-101 borders
  const int radius = int(std::ceil(3 * sigma));
  double norm = 0.0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  auto refl = [](int i, int len) {
    while (i < 0 || i >= len) i = i < 0 ? -i : 2 * (len - 1) - i;
    return i;
  };
  std::vector<double> blurred(std::size_t(3 * n * n));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double acc = 0.0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx)
            acc += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / norm *
                   hr.at(refl(x + dx, n), refl(y + dy, n), c);
        blurred[std::size_t((c * n + y) * n + x)] = acc;
      }
  // direct 16-tap bicubic at source centre (i + 0.5) * s - 0.5
  auto keys = [](double t) {
    t = std::abs(t);
    if (t <= 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
    if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
    return 0.0;
  };
  int worst = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const double sy = (i + 0.5) * s - 0.5, sx = (j + 0.5) * s - 0.5;
        double acc = 0.0;
        for (int ty = int(std::floor(sy)) - 1; ty <= int(std::floor(sy)) + 2; ++ty)
          for (int tx = int(std::floor(sx)) - 1; tx <= int(std::floor(sx)) + 2; ++tx)
            acc += keys(sy - ty) * keys(sx - tx) * blurred[std::size_t((c * n + refl(ty, n)) * n + refl(tx, n))];
        const int expected = int(std::lround(std::clamp(acc, 0.0, 255.0)));
        worst = std::max(worst, std::abs(expected - int(lr.at(j, i, c))));
      }
  CHECK(worst <= 1);
}

TEST_CASE("degrade noise statistics and seed behaviour") {
  const ImageBuffer gray = constant_image(256, 256, 128, 128, 128);
  const ImageBuffer noisy = degrade(gray, {1, 0.0, 25.0, 42});
  double sum = 0.0, sq = 0.0;
  for (auto p : noisy.pixels) {
    const double d = double(p) - 128.0;
    sum += d;
    sq += d * d;
  }
  const double count = double(noisy.pixels.size());
  const double sd = std::sqrt(sq / count - (sum / count) * (sum / count));
  CHECK(sd > 24.0);
  CHECK(sd < 26.0);

  CHECK(degrade(gray, {1, 0.0, 25.0, 42}) == noisy);
  CHECK(!(degrade(gray, {1, 0.0, 25.0, 43}) == noisy));

  // without noise the seed is irrelevant
  const ImageBuffer ramp = ramp_image(24, 24);
  CHECK(degrade(ramp, {2, 1.0, 0.0, 1}) == degrade(ramp, {2, 1.0, 0.0, 2}));
}

TEST_CASE("psnr") {
  Xoshiro256 rng(3);
  const ImageBuffer a = random_image(16, 16, rng);
  CHECK(std::isinf(psnr_y(a, a)));

  const ImageBuffer base = constant_image(16, 16, 100, 50, 20);
  const ImageBuffer plus = constant_image(16, 16, 101, 51, 21);
  CHECK(psnr_y(base, plus) == doctest::Approx(48.1308).epsilon(1e-3 / 48.1308));
  CHECK(std::abs(psnr_y(base, plus) - 10.0 * std::log10(255.0 * 255.0)) < 1e-9);

  for (int t = 0; t < 10; ++t) {
    const ImageBuffer x = random_image(8, 8, rng), y = random_image(8, 8, rng);
    CHECK(psnr_y(x, y) == psnr_y(y, x));
  }
  CHECK_THROWS_AS(psnr_y(ImageBuffer(4, 4), ImageBuffer(4, 5)), InvalidArgument);
}

TEST_CASE("psnr decreases with noise level") {
  const ImageBuffer img = ramp_image(64, 64);
  double previous = std::numeric_limits<double>::infinity();
  for (double level : {5.0, 10.0, 20.0}) {
    const double p = psnr_y(img, degrade(img, {1, 0.0, level, 9}));
    CHECK(p < previous);
    previous = p;
  }
}

TEST_CASE("ssim") {
  Xoshiro256 rng(4);
  const ImageBuffer a = random_image(20, 17, rng);
  CHECK(ssim_y(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  const ImageBuffer b = random_image(20, 17, rng);
  const double s = ssim_y(a, b);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);

  // constant vs constant + 10: only the luminance term differs from one
  const double lo = 90.0, hi = 100.0, c1 = (0.01 * 255) * (0.01 * 255);
  const double expected = (2 * lo * hi + c1) / (lo * lo + hi * hi + c1);
  CHECK(ssim_y(constant_image(12, 12, 90, 90, 90), constant_image(12, 12, 100, 100, 100)) ==
        doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(ssim_y(ImageBuffer(10, 10), ImageBuffer(10, 10)), InvalidArgument);
  CHECK_THROWS_AS(ssim_y(ImageBuffer(12, 12), ImageBuffer(12, 13)), InvalidArgument);
}

TEST_CASE("bicubic upscale of constant image is constant") {
  const ImageBuffer img = constant_image(5, 4, 10, 20, 30);
  CHECK(resize_bicubic(img, 10, 8) == constant_image(10, 8, 10, 20, 30));
}
