#ifndef DLSN_NETWORK_HPP
#define DLSN_NETWORK_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dlsn/gla.hpp"
#include "dlsn/gradcheck.hpp"
#include "dlsn/imaging.hpp"
#include "dlsn/sblsh.hpp"
#include "dlsn/tensor.hpp"

namespace dlsn {

struct NetworkConfig {
  int glaffm_count = 10;
  int lffb_blocks = 4;
  int trunk_channels = 256;
  int gla_channels = 64;
  int bucket_size = 128;
  int rounds = 3;
  int hash_buckets = 8;
  int scale = 2;
  std::uint64_t master_seed = 0;

  /// m=1, n=1, trunk 16, GLA 8 channels, l=16, h=1, b=4, x2.
  static NetworkConfig micro(std::uint64_t seed = 0);

  void validate() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct ResidualBlock {
  Conv3x3 conv1;
  Conv3x3 conv2;
};

/// One fusion module: LFFB residual stack, then a GLA block wrapped in
/// reduce/expand convs with its own residual, then a refinement conv; the
/// module adds its input back.
struct GlaffmParams {
  std::vector<ResidualBlock> lffb;
  Conv3x3 reduce;
  GlaParams gla;
  Conv3x3 expand;
  Conv3x3 refine;
  std::vector<OrthoBasis> bases;  // one per hashing round; derived from the seed, not trained
};

struct DlsnParams {
  NetworkConfig config;
  Conv3x3 shallow;
  std::vector<GlaffmParams> modules;
  std::vector<Conv3x3> upscale;  // one conv per x2/x3 pixel-shuffle stage
  Conv3x3 reconstruct;

  /// Zero tensors shaped for `config`, with hashing bases generated.
  explicit DlsnParams(const NetworkConfig& config);
  DlsnParams() = default;

  /// Trainable tensors in declaration order (serialization order).
  std::vector<NamedTensor> tensors();
  std::vector<const Matrix*> tensors() const;
};

/// Upscale stage factors for a scale: {2}, {3} or {2, 2}.
std::vector<int> upscale_stages(int scale);

/// He-normal weights (std sqrt(2 / fan_in)) drawn in declaration order from
/// Xoshiro256(master_seed); biases start at zero. The last conv of each
/// residual branch (LFFB conv2, expand, refine) and the reconstruction conv
/// are scaled by kResidualInitScale so the untrained network starts close to
/// its skip paths.
inline constexpr double kResidualInitScale = 0.1;
DlsnParams init_params(const NetworkConfig& config);

template <typename Scalar>
struct ModuleTraceT {
  FeatureMapT<Scalar> input;
  std::vector<FeatureMapT<Scalar>> block_inputs;
  std::vector<FeatureMapT<Scalar>> block_hidden;  // conv1 output before ReLU
  FeatureMapT<Scalar> lffb_out;
  FeatureMapT<Scalar> reduced;
  HashPlan plan;
  RoundWeights weights;
  FeatureMapT<Scalar> attended;
  FeatureMapT<Scalar> fused;  // lffb_out + expand(attended)
};

template <typename Scalar>
struct NetworkTraceT {
  FeatureMapT<Scalar> input;
  FeatureMapT<Scalar> shallow;
  std::vector<ModuleTraceT<Scalar>> modules;
  FeatureMapT<Scalar> trunk;  // last module output + shallow features
  std::vector<FeatureMapT<Scalar>> stage_inputs;
  FeatureMapT<Scalar> upscaled;
  FeatureMapT<Scalar> output;
};

using ModuleTrace = ModuleTraceT<double>;
using NetworkTrace = NetworkTraceT<double>;

/// Hashing plans and merge weights to hold fixed across forward passes.
struct FrozenHashing {
  std::vector<HashPlan> plans;
  std::vector<RoundWeights> weights;
};

FrozenHashing freeze_hashing(const NetworkTrace& trace);

/// Forward pass on an input in [0, 1] (3 x h x w). Output is unclamped,
/// in the same units, size (3, s*h, s*w). Instantiated for double and
/// Extended; parameters are converted to Scalar on entry.
template <typename Scalar>
NetworkTraceT<Scalar> forward_features(const FeatureMapT<Scalar>& input, const DlsnParams& params,
                                       const FrozenHashing* frozen = nullptr);

/// 8-bit image in, 8-bit image (scale x larger) out.
ImageBuffer dlsn_forward(const ImageBuffer& lr, const DlsnParams& params);

struct NetworkGrad {
  DlsnParams params;
  FeatureMap input;
};

/// Gradients of <doutput, output> holding hashing plans and merge weights
/// at the values recorded in the trace.
NetworkGrad backward(const NetworkTrace& trace, const DlsnParams& params, const FeatureMap& doutput);

/// Central differences of sum(mask .* output) against backward(); at most
/// `max_entries` entries are probed per tensor (0 = all).
GradCheckReport network_grad_check(const FeatureMap& input, const DlsnParams& params, double step, double tolerance,
                                   std::uint64_t seed = 0, std::size_t max_entries = 0);

// Parameter file: "DLSN", u32 version, config (8 x u32 then u64 seed), then
// every tensor as little-endian float32 in declaration order.
inline constexpr std::uint32_t kParamsFormatVersion = 1;

std::vector<std::uint8_t> encode_params(const DlsnParams& params);
DlsnParams decode_params(const std::vector<std::uint8_t>& bytes);
void save_params(const std::filesystem::path& path, const DlsnParams& params);
DlsnParams load_params(const std::filesystem::path& path);

}  // namespace dlsn

#endif  // DLSN_NETWORK_HPP
