#ifndef DLSN_TRAINING_HPP
#define DLSN_TRAINING_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlsn/imaging.hpp"
#include "dlsn/network.hpp"
#include "dlsn/tensor.hpp"

namespace dlsn {

enum class Texture { checker, stripe, blob, mixed };

Texture parse_texture(const std::string& name);

struct SynthSpec {
  int hr_size = 32;
  int period = 8;
  Texture texture = Texture::mixed;  // mixed cycles checker, stripe, blob
  double corruption = 0.0;           // fraction of the LR area replaced by its mean colour
  DegradationSpec degradation{2, 0.0, 0.0, 0};
  int count = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SrPair {
  ImageBuffer lr;
  ImageBuffer hr;
};

/// Exactly periodic HR textures and their degraded (optionally corrupted) LR.
std::vector<SrPair> synth_dataset(const SynthSpec& spec);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place. Moments are created on the
/// first call.
void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, AdamState& state);

struct LossAndGrad {
  double loss = 0.0;
  NetworkGrad grad;
};

/// Mean absolute error in [0, 1] units over a batch, with its gradient.
LossAndGrad mae_loss_and_grad(const DlsnParams& params, const std::vector<SrPair>& batch);

/// Mean psnr_y of dlsn_forward against HR, and of plain bicubic upscaling.
double eval_psnr(const DlsnParams& params, const std::vector<SrPair>& pairs);
double bicubic_psnr(const std::vector<SrPair>& pairs, int scale);

struct TrainOptions {
  NetworkConfig network = NetworkConfig::micro();
  SynthSpec train;
  SynthSpec eval;
  int steps = 500;
  int eval_every = 50;
  double lr = 2e-3;
  bool freeze_lss = false;  // LSS tensors held at zero
  std::optional<DlsnParams> initial;  // defaults to init_params(network)
};

/// Reference options for the x2 periodic-texture toy task: checker tiles,
/// 16 training images, 4 held-out images, seeds derived from `seed`.
TrainOptions reference_train_options(std::uint64_t seed = 0);

struct LogRow {
  int step = 0;
  double loss = 0.0;
  double psnr = 0.0;
};

struct TrainResult {
  std::vector<LogRow> log;
  DlsnParams params;
  double baseline_psnr = 0.0;
  double lss_grad_norm = 0.0;  // after the first step
  bool diverged = false;
  int last_good_step = -1;
};

/// Full-batch Adam on the MAE loss. Logs step 0, every eval_every steps and
/// the final step; stops early if the loss stops being finite.
TrainResult train_toy(const TrainOptions& options);

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log);

}  // namespace dlsn

#endif  // DLSN_TRAINING_HPP
