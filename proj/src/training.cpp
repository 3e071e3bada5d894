#include "dlsn/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "dlsn/random.hpp"

namespace dlsn {

Texture parse_texture(const std::string& name) {
  if (name == "checker") return Texture::checker;
  if (name == "stripe") return Texture::stripe;
  if (name == "blob") return Texture::blob;
  if (name == "mixed") return Texture::mixed;
  throw InvalidArgument("unknown texture family '" + name + "'");
}

void SynthSpec::validate() const {
  require(hr_size >= 1 && period >= 1 && count >= 1, "SynthSpec: sizes must be positive");
  require(hr_size % period == 0, "SynthSpec: period must divide hr_size");
  require(corruption >= 0.0 && corruption <= 0.5, "SynthSpec: corruption must be in [0, 0.5]");
  require(degradation.scale >= 1 && hr_size % degradation.scale == 0, "SynthSpec: scale must divide hr_size");
}

namespace {

using Rgb = std::array<double, 3>;

Rgb random_colour(Xoshiro256& rng) { return {rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)}; }

// One period x period tile, row-major.
std::vector<Rgb> make_tile(Texture family, int p, Xoshiro256& rng) {
  std::vector<Rgb> tile(std::size_t(p) * p);
  auto at = [&](int x, int y) -> Rgb& { return tile[std::size_t(y) * p + x]; };
  switch (family) {
    case Texture::checker: {
      const Rgb a = random_colour(rng), b = random_colour(rng);
      const int cell = std::max(1, p / 2);
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) at(x, y) = ((x / cell + y / cell) % 2 == 0) ? a : b;
      break;
    }
    case Texture::stripe: {
      const int bands = 2 + int(rng.below(2));
      std::vector<Rgb> colours;
      for (int i = 0; i < bands; ++i) colours.push_back(random_colour(rng));
      const int orientation = int(rng.below(3));
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
          const int u = orientation == 0 ? x : orientation == 1 ? y : (x + y) % p;
          at(x, y) = colours[std::size_t(u * bands / p)];
        }
      break;
    }
    case Texture::blob: {
      const Rgb background = random_colour(rng);
      for (auto& px : tile) px = background;
      const int blobs = 1 + int(rng.below(3));
      for (int i = 0; i < blobs; ++i) {
        const double cx = rng.uniform(0, p), cy = rng.uniform(0, p);
        const double r = rng.uniform(p / 6.0, p / 3.0) + 0.5;
        const Rgb colour = random_colour(rng);
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) {
            double dx = std::abs(x - cx), dy = std::abs(y - cy);
            dx = std::min(dx, p - dx);
            dy = std::min(dy, p - dy);
            const double a = std::exp(-(dx * dx + dy * dy) / (2 * r * r));
            for (int c = 0; c < 3; ++c) at(x, y)[std::size_t(c)] = (1 - a) * at(x, y)[std::size_t(c)] + a * colour[std::size_t(c)];
          }
      }
      break;
    }
    case Texture::mixed: throw InvalidArgument("make_tile: mixed is not a concrete texture");
  }
  return tile;
}

void corrupt(ImageBuffer& lr, double fraction, Xoshiro256& rng) {
  if (fraction <= 0.0) return;
  const double side = std::sqrt(fraction);
  const int rw = std::max(1, int(std::lround(side * lr.width))), rh = std::max(1, int(std::lround(side * lr.height)));
  const int x0 = int(rng.below(std::uint64_t(lr.width - rw + 1))), y0 = int(rng.below(std::uint64_t(lr.height - rh + 1)));
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) sum += lr.at(x, y, c);
    const auto mean = std::uint8_t(std::lround(sum / (rw * rh)));
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) lr.at(x, y, c) = mean;
  }
}

}  // namespace

std::vector<SrPair> synth_dataset(const SynthSpec& spec) {
  spec.validate();
  std::vector<SrPair> out;
  for (int i = 0; i < spec.count; ++i) {
    Xoshiro256 rng(derive_seed(spec.seed, std::uint64_t(i)));
    const Texture family = spec.texture == Texture::mixed ? static_cast<Texture>(i % 3) : spec.texture;
    const auto tile = make_tile(family, spec.period, rng);
    ImageBuffer hr(spec.hr_size, spec.hr_size);
    for (int y = 0; y < spec.hr_size; ++y)
      for (int x = 0; x < spec.hr_size; ++x)
        for (int c = 0; c < 3; ++c)
          hr.at(x, y, c) = std::uint8_t(std::lround(tile[std::size_t(y % spec.period) * spec.period + x % spec.period][std::size_t(c)]));
    DegradationSpec deg = spec.degradation;
    deg.rng_seed = derive_seed(spec.degradation.rng_seed, std::uint64_t(i), 1);
    ImageBuffer lr = degrade(hr, deg);
    corrupt(lr, spec.corruption, rng);
    out.push_back({std::move(lr), std::move(hr)});
  }
  return out;
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, AdamState& state) {
  require(params.size() == grads.size(), "adam_step: parameter and gradient counts differ");
  if (state.first.empty()) {
    for (const Matrix* p : params) {
      state.first.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  require(state.first.size() == params.size(), "adam_step: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k]->rows() == grads[k]->rows() && params[k]->cols() == grads[k]->cols() &&
                state.first[k].rows() == params[k]->rows() && state.first[k].cols() == params[k]->cols(),
            "adam_step: shape mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& m = state.first[k];
    Matrix& v = state.second[k];
    const Matrix& g = *grads[k];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    params[k]->array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

namespace {

FeatureMap normalized(const ImageBuffer& img) {
  FeatureMap x = to_planes(img);
  x.values() /= 255.0;
  return x;
}

void accumulate(DlsnParams& into, const DlsnParams& add) {
  auto a = into.tensors();
  const auto b = add.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i].value += *b[i];
}

bool is_lss(const std::string& name) {
  return name.ends_with("gla.w1") || name.ends_with("gla.b1") || name.ends_with("gla.w2") || name.ends_with("gla.b2");
}

}  // namespace

LossAndGrad mae_loss_and_grad(const DlsnParams& params, const std::vector<SrPair>& batch) {
  require(!batch.empty(), "mae_loss_and_grad: empty batch");
  LossAndGrad out{0.0, NetworkGrad{DlsnParams(params.config), FeatureMap()}};
  double count = 0.0;
  for (const auto& pair : batch) count += double(pair.hr.pixels.size());
  for (const auto& pair : batch) {
    const NetworkTrace trace = forward_features(normalized(pair.lr), params);
    const FeatureMap target = normalized(pair.hr);
    require(target.same_shape(trace.output), "mae_loss_and_grad: HR size does not match network output");
    const Matrix diff = trace.output.values() - target.values();
    out.loss += diff.cwiseAbs().sum() / count;
    FeatureMap dout(trace.output.channels(), trace.output.height(), trace.output.width());
    dout.values() = diff.unaryExpr([](double d) { return d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0; }) / count;
    accumulate(out.grad.params, backward(trace, params, dout).params);
  }
  return out;
}

double eval_psnr(const DlsnParams& params, const std::vector<SrPair>& pairs) {
  require(!pairs.empty(), "eval_psnr: no pairs");
  double total = 0.0;
  for (const auto& pair : pairs) total += psnr_y(dlsn_forward(pair.lr, params), pair.hr);
  return total / double(pairs.size());
}

double bicubic_psnr(const std::vector<SrPair>& pairs, int scale) {
  require(!pairs.empty(), "bicubic_psnr: no pairs");
  double total = 0.0;
  for (const auto& pair : pairs)
    total += psnr_y(resize_bicubic(pair.lr, pair.lr.width * scale, pair.lr.height * scale), pair.hr);
  return total / double(pairs.size());
}

TrainOptions reference_train_options(std::uint64_t seed) {
  TrainOptions o;
  o.network = NetworkConfig::micro(seed);
  o.train.texture = Texture::checker;
  o.train.seed = derive_seed(seed, 100);
  o.train.degradation.rng_seed = derive_seed(seed, 101);
  o.eval = o.train;
  o.eval.seed = derive_seed(seed, 200);
  o.eval.degradation.rng_seed = derive_seed(seed, 201);
  o.train.count = 16;
  return o;
}

TrainResult train_toy(const TrainOptions& o) {
  require(o.steps >= 1, "train_toy: steps must be >= 1");
  require(o.eval_every >= 1, "train_toy: eval_every must be >= 1");
  require(o.train.degradation.scale == o.network.scale && o.eval.degradation.scale == o.network.scale,
          "train_toy: dataset scale must match the network scale");
  const auto train = synth_dataset(o.train);
  const auto held_out = synth_dataset(o.eval);

  TrainResult result;
  result.params = o.initial ? *o.initial : init_params(o.network);
  require(result.params.config == o.network, "train_toy: initial parameters do not match the network config");
  result.baseline_psnr = bicubic_psnr(held_out, o.network.scale);

  std::vector<Matrix*> trainable;
  for (NamedTensor& t : result.params.tensors()) {
    if (o.freeze_lss && is_lss(t.name)) {
      t.value->setZero();
      continue;
    }
    trainable.push_back(t.value);
  }
  AdamState adam;
  adam.lr = o.lr;

  for (int step = 0; step <= o.steps; ++step) {
    LossAndGrad lg = mae_loss_and_grad(result.params, train);
    if (!std::isfinite(lg.loss)) {
      result.diverged = true;
      break;
    }
    result.last_good_step = step;
    if (step == 0) {
      for (const NamedTensor& t : lg.grad.params.tensors())
        if (is_lss(t.name)) result.lss_grad_norm += t.value->squaredNorm();
      result.lss_grad_norm = std::sqrt(result.lss_grad_norm);
    }
    if (step % o.eval_every == 0 || step == o.steps)
      result.log.push_back({step, lg.loss, eval_psnr(result.params, held_out)});
    if (step == o.steps) break;

    std::vector<const Matrix*> grads;
    for (const NamedTensor& t : lg.grad.params.tensors())
      if (!(o.freeze_lss && is_lss(t.name))) grads.push_back(t.value);
    adam_step(trainable, grads, adam);
  }
  return result;
}

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log) {
  out << "step,loss,psnr\n";
  out << std::setprecision(10);
  for (const auto& row : log) out << row.step << ',' << row.loss << ',' << row.psnr << '\n';
}

}  // namespace dlsn
