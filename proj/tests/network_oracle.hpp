#ifndef DLSN_TESTS_NETWORK_ORACLE_HPP
#define DLSN_TESTS_NETWORK_ORACLE_HPP

// Straight-line forward pass of the whole network built from the naive
// convolution and the loop-based hashed attention reference.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dlsn/network.hpp"
#include "gla_oracle.hpp"

namespace dlsn::testing {

inline FeatureMap add_maps(const FeatureMap& a, const FeatureMap& b) {
  FeatureMap out(a.channels(), a.height(), a.width());
  for (Eigen::Index c = 0; c < a.channels(); ++c)
    for (Eigen::Index y = 0; y < a.height(); ++y)
      for (Eigen::Index x = 0; x < a.width(); ++x) out(c, y, x) = a(c, y, x) + b(c, y, x);
  return out;
}

inline FeatureMap relu_map(const FeatureMap& a) {
  FeatureMap out = a;
  for (Eigen::Index i = 0; i < out.values().size(); ++i) out.values().data()[i] = std::max(0.0, a.values().data()[i]);
  return out;
}

inline FeatureMap shuffle_oracle(const FeatureMap& x, int s) {
  FeatureMap out(x.channels() / (s * s), x.height() * s, x.width() * s);
  for (Eigen::Index c = 0; c < out.channels(); ++c)
    for (Eigen::Index y = 0; y < out.height(); ++y)
      for (Eigen::Index xx = 0; xx < out.width(); ++xx)
        out(c, y, xx) = x(c * s * s + (y % s) * s + (xx % s), y / s, xx / s);
  return out;
}

inline FeatureMap network_oracle_features(const FeatureMap& input, const DlsnParams& p) {
  const FeatureMap f0 = naive_conv(input, p.shallow);
  FeatureMap x = f0;
  for (const auto& mod : p.modules) {
    FeatureMap a = x;
    for (const auto& block : mod.lffb) a = add_maps(a, naive_conv(relu_map(naive_conv(a, block.conv1)), block.conv2));
    const FeatureMap reduced = naive_conv(a, mod.reduce);
    const FeatureMap attended = hashed_attention_oracle(reduced, mod.gla, mod.bases);
    const FeatureMap fused = add_maps(a, naive_conv(attended, mod.expand));
    x = add_maps(naive_conv(fused, mod.refine), x);
  }
  FeatureMap u = add_maps(x, f0);
  const int scale = p.config.scale;
  const std::vector<int> stages = scale == 4 ? std::vector<int>{2, 2} : std::vector<int>{scale};
  for (std::size_t s = 0; s < stages.size(); ++s) u = shuffle_oracle(naive_conv(u, p.upscale[s]), stages[s]);
  return naive_conv(u, p.reconstruct);
}

inline ImageBuffer network_oracle(const ImageBuffer& lr, const DlsnParams& p) {
  FeatureMap in(3, lr.height, lr.width);
  for (int y = 0; y < lr.height; ++y)
    for (int x = 0; x < lr.width; ++x)
      for (int c = 0; c < 3; ++c) in(c, y, x) = lr.at(x, y, c) / 255.0;
  const FeatureMap out = network_oracle_features(in, p);
  ImageBuffer img{int(out.width()), int(out.height())};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(255.0, std::max(0.0, out(c, y, x) * 255.0));
        img.pixels[std::size_t((y * img.width + x) * 3 + c)] = std::uint8_t(std::lround(v));
      }
  return img;
}

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dlsn::testing

#endif  // DLSN_TESTS_NETWORK_ORACLE_HPP
