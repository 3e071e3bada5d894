#include "dlsn/cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "dlsn/bench.hpp"
#include "dlsn/binary_io.hpp"
#include "dlsn/gla.hpp"
#include "dlsn/imaging.hpp"
#include "dlsn/network.hpp"
#include "dlsn/random.hpp"
#include "dlsn/sblsh.hpp"
#include "dlsn/training.hpp"

namespace dlsn {

std::vector<std::uint8_t> encode_fmap(const FeatureMap& map) {
  ByteWriter w;
  w.bytes("FMAP", 4);
  w.u32(std::uint32_t(map.channels()));
  w.u32(std::uint32_t(map.height()));
  w.u32(std::uint32_t(map.width()));
  for (Eigen::Index i = 0; i < map.values().size(); ++i) w.f32(map.values().data()[i]);
  return w.take();
}

FeatureMap decode_fmap(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != "FMAP") throw ParseError("not a feature file (bad magic)", 0);
  const std::uint32_t c = r.u32("channels"), h = r.u32("height"), w = r.u32("width");
  if (c == 0 || h == 0 || w == 0) throw ParseError("feature dimensions must be positive", 4);
  const std::uint64_t count = std::uint64_t(c) * h * w;
  if (r.remaining() / 4 < count) throw ParseError("truncated feature payload", bytes.size());
  FeatureMap map(c, h, w);
  for (Eigen::Index i = 0; i < map.values().size(); ++i) map.values().data()[i] = r.f32("feature");
  if (r.remaining() != 0) throw ParseError("trailing bytes after feature payload", r.offset());
  return map;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void save_fmap(const std::filesystem::path& path, const FeatureMap& map) { write_file(path, encode_fmap(map)); }

FeatureMap load_fmap(const std::filesystem::path& path) { return decode_fmap(read_file(path)); }

namespace {

struct SrArgs {
  std::string input, output, params;
  int scale = 0;
};

struct DegradeArgs {
  std::string input, output;
  int scale = 2;
  double blur_sigma = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct MetricsArgs {
  std::string a, b;
};

struct HashStatsArgs {
  std::string input;
  int buckets = 8;
  int rounds = 1;
  std::uint64_t seed = 0;
};

struct GradcheckArgs {
  std::uint64_t seed = 7;
  double tol = 1e-4;
  double step = 1e-5;
  std::size_t max_entries = 0;
};

struct TrainArgs {
  int steps = 500;
  std::uint64_t seed = 0;
  std::string out_log, out_params;
  bool freeze_lss = false;
  int eval_every = 50;
  double lr = 0.0;
};

struct BenchArgs {
  std::vector<std::int64_t> sizes{1024, 2048, 4096, 8192, 16384};
  int l = 128;
  int reps = 3;
  int channels = 16;
  std::uint64_t seed = 0;
};

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

int run_sr(const SrArgs& a, std::ostream&, std::ostream& err) {
  const DlsnParams params = load_params(a.params);
  if (a.scale != 0 && a.scale != params.config.scale) {
    err << "sr: --scale " << a.scale << " does not match the parameter file (scale " << params.config.scale << ")\n";
    return kExitRuntime;
  }
  save_ppm(a.output, dlsn_forward(load_ppm(a.input), params));
  return kExitOk;
}

int run_degrade(const DegradeArgs& a, std::ostream&, std::ostream&) {
  save_ppm(a.output, degrade(load_ppm(a.input), DegradationSpec{a.scale, a.blur_sigma, a.noise, a.seed}));
  return kExitOk;
}

int run_metrics(const MetricsArgs& a, std::ostream& out, std::ostream&) {
  const ImageBuffer x = load_ppm(a.a), y = load_ppm(a.b);
  out << "psnr=" << format_number(psnr_y(x, y)) << " ssim=" << format_number(ssim_y(x, y)) << '\n';
  return kExitOk;
}

int run_hash_stats(const HashStatsArgs& a, std::ostream& out, std::ostream&) {
  const FeatureMap f = load_fmap(a.input);
  const auto bases = make_bases(a.buckets, int(f.channels()), a.rounds, a.seed, 0);
  out << "round,bucket,count\n";
  for (std::size_t r = 0; r < bases.size(); ++r) {
    std::vector<std::size_t> hist(std::size_t(a.buckets), 0);
    for (int id : assign_buckets(f.values(), bases[r])) ++hist[std::size_t(id)];
    for (std::size_t b = 0; b < hist.size(); ++b) out << r << ',' << b << ',' << hist[b] << '\n';
  }
  return kExitOk;
}

void print_report(const std::string& prefix, const GradCheckReport& report, std::ostream& out) {
  for (const auto& t : report.tensors)
    out << prefix << t.name << ',' << std::scientific << std::setprecision(3) << t.max_relative_error << ','
        << t.checked << '\n';
}

int run_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  Xoshiro256 rng(a.seed);
  const GlaParams gla = init_gla_params(4, 4, 2, derive_seed(a.seed, 1));
  FeatureMap x(4, 4, 4);
  for (Eigen::Index i = 0; i < x.values().size(); ++i) x.values().data()[i] = rng.normal();
  const HashPlan plan = gla_plan(x, gla, make_bases(4, 4, 2, a.seed, 0));
  const GradCheckReport gla_report = gla_grad_check(x, gla, plan, a.step, a.tol, derive_seed(a.seed, 2));

  const DlsnParams net = init_params(NetworkConfig::micro(a.seed));
  FeatureMap img(3, 6, 6);
  for (Eigen::Index i = 0; i < img.values().size(); ++i) img.values().data()[i] = rng.uniform();
  const GradCheckReport net_report = network_grad_check(img, net, a.step, a.tol, derive_seed(a.seed, 3), a.max_entries);

  out << "tensor,max_rel_error,checked\n";
  print_report("gla.", gla_report, out);
  print_report("net.", net_report, out);
  const bool ok = gla_report.passed() && net_report.passed();
  err << (ok ? "gradcheck passed" : "gradcheck FAILED") << " at tol " << a.tol << " (worst "
      << std::max(gla_report.worst(), net_report.worst()) << ")\n";
  return ok ? kExitOk : kExitRuntime;
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainOptions o = reference_train_options(a.seed);
  o.steps = a.steps;
  o.eval_every = a.eval_every;
  o.freeze_lss = a.freeze_lss;
  if (a.lr > 0.0) o.lr = a.lr;
  const TrainResult r = train_toy(o);
  if (a.out_log.empty()) {
    write_log_csv(out, r.log);
  } else {
    std::ofstream log(a.out_log);
    if (!log) throw std::runtime_error("cannot open " + a.out_log + " for writing");
    write_log_csv(log, r.log);
  }
  if (!a.out_params.empty()) save_params(a.out_params, r.params);
  if (r.diverged) {
    err << "train-toy: loss became non-finite; last good step " << r.last_good_step << '\n';
    return kExitRuntime;
  }
  err << "train-toy: final psnr " << r.log.back().psnr << " dB, bicubic baseline " << r.baseline_psnr << " dB\n";
  return kExitOk;
}

int run_bench(const BenchArgs& a, std::ostream& out, std::ostream&) {
  ScalingOptions o;
  o.sizes = a.sizes;
  o.bucket_size = a.l;
  o.repetitions = a.reps;
  o.channels = a.channels;
  o.hash_buckets = std::min(8, a.channels);
  o.seed = a.seed;
  write_scaling_report(out, measure_scaling(o));
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Global learnable attention super-resolution toolkit", "dlsn"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  SrArgs sr;
  auto* sr_cmd = app.add_subcommand("sr", "Super-resolve a PPM image with a trained parameter file");
  sr_cmd->add_option("input", sr.input, "Input PPM")->required()->check(CLI::ExistingFile);
  sr_cmd->add_option("output", sr.output, "Output PPM")->required();
  sr_cmd->add_option("--params", sr.params, "DLSN parameter file")->required()->check(CLI::ExistingFile);
  sr_cmd->add_option("--scale", sr.scale, "Expected upscale factor")->check(CLI::IsMember({2, 3, 4}));

  DegradeArgs dg;
  auto* dg_cmd = app.add_subcommand("degrade", "Blur, downscale and add noise to a PPM image");
  dg_cmd->add_option("input", dg.input, "Input PPM")->required()->check(CLI::ExistingFile);
  dg_cmd->add_option("output", dg.output, "Output PPM")->required();
  dg_cmd->add_option("--scale", dg.scale, "Downscale factor")->check(CLI::Range(1, 16));
  dg_cmd->add_option("--blur-sigma", dg.blur_sigma, "Gaussian blur sigma (0 disables)")->check(CLI::NonNegativeNumber);
  dg_cmd->add_option("--noise", dg.noise, "Noise std-dev in 0..255 units")->check(CLI::NonNegativeNumber);
  dg_cmd->add_option("--seed", dg.seed, "Noise seed");

  MetricsArgs mt;
  auto* mt_cmd = app.add_subcommand("metrics", "Y-channel PSNR and SSIM between two PPM images");
  mt_cmd->add_option("a", mt.a, "First PPM")->required()->check(CLI::ExistingFile);
  mt_cmd->add_option("b", mt.b, "Second PPM")->required()->check(CLI::ExistingFile);

  HashStatsArgs hs;
  auto* hs_cmd = app.add_subcommand("hash-stats", "Bucket occupancy of a feature file");
  hs_cmd->add_option("input", hs.input, "FMAP feature file")->required()->check(CLI::ExistingFile);
  hs_cmd->add_option("--buckets", hs.buckets, "Hash buckets per round")->check(CLI::PositiveNumber);
  hs_cmd->add_option("--rounds", hs.rounds, "Hashing rounds")->check(CLI::PositiveNumber);
  hs_cmd->add_option("--seed", hs.seed, "Basis seed");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Central-difference check of the GLA block and micro network");
  gc_cmd->add_option("--seed", gc.seed, "Seed for parameters and inputs");
  gc_cmd->add_option("--tol", gc.tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--step", gc.step, "Finite-difference step")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--max-entries", gc.max_entries, "Entries probed per network tensor (0 = all)");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train-toy", "Train the micro network on synthetic periodic textures");
  tr_cmd->add_option("--steps", tr.steps, "Optimizer steps")->check(CLI::PositiveNumber);
  tr_cmd->add_option("--seed", tr.seed, "Master seed");
  tr_cmd->add_option("--out-log", tr.out_log, "CSV log path (default: standard output)");
  tr_cmd->add_option("--out-params", tr.out_params, "Write trained parameters here");
  tr_cmd->add_flag("--freeze-lss", tr.freeze_lss, "Hold the learnable scoring at zero");
  tr_cmd->add_option("--eval-every", tr.eval_every, "Evaluation cadence in steps")->check(CLI::PositiveNumber);
  tr_cmd->add_option("--lr", tr.lr, "Learning rate (default: reference setting)")->check(CLI::PositiveNumber);

  BenchArgs bn;
  auto* bn_cmd = app.add_subcommand("bench", "Dense versus GLA attention scaling");
  bn_cmd->add_option("--sizes", bn.sizes, "Comma-separated hw values")->delimiter(',')->check(CLI::PositiveNumber);
  bn_cmd->add_option("--l", bn.l, "Bucket size")->check(CLI::PositiveNumber);
  bn_cmd->add_option("--reps", bn.reps, "Repetitions per size")->check(CLI::Range(3, 1000));
  bn_cmd->add_option("--channels", bn.channels, "Feature channels")->check(CLI::PositiveNumber);
  bn_cmd->add_option("--seed", bn.seed, "Input seed");

  std::vector<std::string> argv_store{"dlsn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*sr_cmd) return run_sr(sr, out, err);
    if (*dg_cmd) return run_degrade(dg, out, err);
    if (*mt_cmd) return run_metrics(mt, out, err);
    if (*hs_cmd) return run_hash_stats(hs, out, err);
    if (*gc_cmd) return run_gradcheck(gc, out, err);
    if (*tr_cmd) return run_train(tr, out, err);
    if (*bn_cmd) return run_bench(bn, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace dlsn
