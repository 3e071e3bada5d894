#include "dlsn/network.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include "dlsn/binary_io.hpp"
#include "dlsn/random.hpp"

namespace dlsn {

NetworkConfig NetworkConfig::micro(std::uint64_t seed) {
  NetworkConfig c;
  c.glaffm_count = 1;
  c.lffb_blocks = 1;
  c.trunk_channels = 16;
  c.gla_channels = 8;
  c.bucket_size = 16;
  c.rounds = 1;
  c.hash_buckets = 4;
  c.scale = 2;
  c.master_seed = seed;
  return c;
}

void NetworkConfig::validate() const {
  require(glaffm_count >= 1 && lffb_blocks >= 1 && trunk_channels >= 1 && gla_channels >= 1 && bucket_size >= 1 &&
              rounds >= 1 && hash_buckets >= 1,
          "NetworkConfig: all sizes must be positive");
  require(hash_buckets <= gla_channels, "NetworkConfig: hash_buckets must not exceed gla_channels");
  require(scale == 2 || scale == 3 || scale == 4, "NetworkConfig: scale must be 2, 3 or 4");
}

std::vector<int> upscale_stages(int scale) {
  switch (scale) {
    case 2: return {2};
    case 3: return {3};
    case 4: return {2, 2};
    default: throw InvalidArgument("upscale_stages: scale must be 2, 3 or 4");
  }
}

DlsnParams::DlsnParams(const NetworkConfig& cfg) : config(cfg) {
  cfg.validate();
  const int t = cfg.trunk_channels, g = cfg.gla_channels;
  shallow = Conv3x3(t, 3);
  modules.resize(std::size_t(cfg.glaffm_count));
  for (std::size_t m = 0; m < modules.size(); ++m) {
    auto& mod = modules[m];
    mod.lffb.assign(std::size_t(cfg.lffb_blocks), ResidualBlock{Conv3x3(t, t), Conv3x3(t, t)});
    mod.reduce = Conv3x3(g, t);
    mod.gla = GlaParams(g, cfg.bucket_size, cfg.rounds);
    mod.expand = Conv3x3(t, g);
    mod.refine = Conv3x3(t, t);
    mod.bases = make_bases(cfg.hash_buckets, g, cfg.rounds, cfg.master_seed, m);
  }
  for (int s : upscale_stages(cfg.scale)) upscale.emplace_back(t * s * s, t);
  reconstruct = Conv3x3(3, t);
}

namespace {

template <typename Params, typename Visit>
void visit_tensors(Params& p, Visit&& visit) {
  visit("shallow.weight", p.shallow.weight);
  visit("shallow.bias", p.shallow.bias);
  for (std::size_t m = 0; m < p.modules.size(); ++m) {
    auto& mod = p.modules[m];
    const std::string pre = "glaffm" + std::to_string(m) + ".";
    for (std::size_t b = 0; b < mod.lffb.size(); ++b) {
      const std::string rb = pre + "lffb" + std::to_string(b) + ".";
      visit(rb + "conv1.weight", mod.lffb[b].conv1.weight);
      visit(rb + "conv1.bias", mod.lffb[b].conv1.bias);
      visit(rb + "conv2.weight", mod.lffb[b].conv2.weight);
      visit(rb + "conv2.bias", mod.lffb[b].conv2.bias);
    }
    visit(pre + "reduce.weight", mod.reduce.weight);
    visit(pre + "reduce.bias", mod.reduce.bias);
    visit(pre + "gla.qk_conv.weight", mod.gla.qk_conv.weight);
    visit(pre + "gla.qk_conv.bias", mod.gla.qk_conv.bias);
    visit(pre + "gla.v_conv.weight", mod.gla.v_conv.weight);
    visit(pre + "gla.v_conv.bias", mod.gla.v_conv.bias);
    visit(pre + "gla.l_conv.weight", mod.gla.l_conv.weight);
    visit(pre + "gla.l_conv.bias", mod.gla.l_conv.bias);
    visit(pre + "gla.w1", mod.gla.w1);
    visit(pre + "gla.b1", mod.gla.b1);
    visit(pre + "gla.w2", mod.gla.w2);
    visit(pre + "gla.b2", mod.gla.b2);
    visit(pre + "expand.weight", mod.expand.weight);
    visit(pre + "expand.bias", mod.expand.bias);
    visit(pre + "refine.weight", mod.refine.weight);
    visit(pre + "refine.bias", mod.refine.bias);
  }
  for (std::size_t s = 0; s < p.upscale.size(); ++s) {
    visit("upscale" + std::to_string(s) + ".weight", p.upscale[s].weight);
    visit("upscale" + std::to_string(s) + ".bias", p.upscale[s].bias);
  }
  visit("reconstruct.weight", p.reconstruct.weight);
  visit("reconstruct.bias", p.reconstruct.bias);
}

bool is_bias(const std::string& name) {
  return name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2");
}

// Convs that close a residual branch, plus the output conv.
bool is_branch_output(const std::string& name) {
  return name.ends_with("conv2.weight") || name.ends_with("expand.weight") || name.ends_with("refine.weight") ||
         name == "reconstruct.weight";
}

}  // namespace

std::vector<NamedTensor> DlsnParams::tensors() {
  std::vector<NamedTensor> out;
  visit_tensors(*this, [&](const std::string& name, Matrix& m) { out.push_back({name, &m}); });
  return out;
}

std::vector<const Matrix*> DlsnParams::tensors() const {
  std::vector<const Matrix*> out;
  visit_tensors(*this, [&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

DlsnParams init_params(const NetworkConfig& config) {
  DlsnParams p(config);
  Xoshiro256 rng(config.master_seed);
  visit_tensors(p, [&](const std::string& name, Matrix& m) {
    if (is_bias(name)) return;
    double sd = std::sqrt(2.0 / double(m.cols()));  // cols is the fan-in for convs and dense layers
    if (is_branch_output(name)) sd *= kResidualInitScale;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  });
  return p;
}

namespace {

void check_input(Eigen::Index channels, const DlsnParams& params) {
  params.config.validate();
  require(channels == 3, "dlsn: input must have 3 channels");
  require(params.modules.size() == std::size_t(params.config.glaffm_count),
          "dlsn: parameter set does not match its config");
}

}  // namespace

FrozenHashing freeze_hashing(const NetworkTrace& trace) {
  FrozenHashing f;
  for (const auto& m : trace.modules) {
    f.plans.push_back(m.plan);
    f.weights.push_back(m.weights);
  }
  return f;
}

namespace {

template <typename Scalar>
FeatureMapT<Scalar> module_forward(const FeatureMapT<Scalar>& x, const GlaffmParams& mod, const HashPlan* plan,
                                   const RoundWeights* weights, ModuleTraceT<Scalar>& mt) {
  using Map = FeatureMapT<Scalar>;
  mt.input = x;
  Map a = x;
  for (const auto& block : mod.lffb) {
    mt.block_inputs.push_back(a);
    Map hidden = conv2d_3x3(a, as_scalar<Scalar>(block.conv1));
    a += conv2d_3x3(relu(hidden), as_scalar<Scalar>(block.conv2));
    mt.block_hidden.push_back(std::move(hidden));
  }
  mt.lffb_out = a;
  mt.reduced = conv2d_3x3(a, as_scalar<Scalar>(mod.reduce));
  if (plan != nullptr) {
    mt.plan = *plan;
  } else if constexpr (std::is_same_v<Scalar, double>) {
    mt.plan = gla_plan(mt.reduced, mod.gla, mod.bases);
  } else {
    const FeatureMap reduced(mt.reduced.values().template cast<double>(), mt.reduced.height(), mt.reduced.width());
    mt.plan = gla_plan(reduced, mod.gla, mod.bases);
  }
  GlaForwardT<Scalar> fw = gla_forward_detailed(mt.reduced, mod.gla, mt.plan, nullptr, weights);
  mt.weights = std::move(fw.weights);
  mt.attended = std::move(fw.output);
  mt.fused = a + conv2d_3x3(mt.attended, as_scalar<Scalar>(mod.expand));
  return conv2d_3x3(mt.fused, as_scalar<Scalar>(mod.refine)) + mt.input;
}

// Module output rerun from a recorded trace, starting at the layer that
// `part` names ("lffb<b>.", "reduce.", "gla.", "expand." or "refine.").
template <typename Scalar>
FeatureMapT<Scalar> module_resume(const ModuleTraceT<Scalar>& mt, const GlaffmParams& mod, const std::string& part) {
  using Map = FeatureMapT<Scalar>;
  auto starts = [&](const char* layer) { return part.rfind(layer, 0) == 0; };
  Map fused = mt.fused;
  if (!starts("refine")) {
    Map a = mt.lffb_out;
    Map attended = mt.attended;
    if (!starts("expand")) {
      Map reduced = mt.reduced;
      if (!starts("gla")) {
        if (starts("lffb")) {
          const std::size_t first = std::stoul(part.substr(4));
          a = mt.block_inputs[first];
          for (std::size_t b = first; b < mod.lffb.size(); ++b)
            a += conv2d_3x3(relu(conv2d_3x3(a, as_scalar<Scalar>(mod.lffb[b].conv1))),
                            as_scalar<Scalar>(mod.lffb[b].conv2));
        }
        reduced = conv2d_3x3(a, as_scalar<Scalar>(mod.reduce));
      }
      attended = gla_forward_detailed(reduced, mod.gla, mt.plan, nullptr, &mt.weights).output;
    }
    fused = a + conv2d_3x3(attended, as_scalar<Scalar>(mod.expand));
  }
  return conv2d_3x3(fused, as_scalar<Scalar>(mod.refine)) + mt.input;
}

// Upscale stages from `first` on, then the reconstruction conv.
template <typename Scalar>
FeatureMapT<Scalar> tail_forward(FeatureMapT<Scalar> u, const DlsnParams& params, std::size_t first,
                                 NetworkTraceT<Scalar>* t) {
  const auto stages = upscale_stages(params.config.scale);
  for (std::size_t s = first; s < stages.size(); ++s) {
    if (t != nullptr) t->stage_inputs.push_back(u);
    u = pixel_shuffle(conv2d_3x3(u, as_scalar<Scalar>(params.upscale[s])), stages[s]);
  }
  if (t != nullptr) t->upscaled = u;
  return conv2d_3x3(u, as_scalar<Scalar>(params.reconstruct));
}

}  // namespace

template <typename Scalar>
NetworkTraceT<Scalar> forward_features(const FeatureMapT<Scalar>& input, const DlsnParams& params,
                                       const FrozenHashing* frozen) {
  check_input(input.channels(), params);
  if (frozen != nullptr)
    require(frozen->plans.size() == params.modules.size() && frozen->weights.size() == params.modules.size(),
            "dlsn: frozen hashing does not match module count");
  NetworkTraceT<Scalar> t;
  t.input = input;
  t.shallow = conv2d_3x3(input, as_scalar<Scalar>(params.shallow));
  FeatureMapT<Scalar> x = t.shallow;
  for (std::size_t m = 0; m < params.modules.size(); ++m) {
    ModuleTraceT<Scalar> mt;
    x = frozen != nullptr ? module_forward(x, params.modules[m], &frozen->plans[m], &frozen->weights[m], mt)
                          : module_forward<Scalar>(x, params.modules[m], nullptr, nullptr, mt);
    t.modules.push_back(std::move(mt));
  }
  t.trunk = x + t.shallow;
  t.output = tail_forward(t.trunk, params, 0, &t);
  return t;
}

template NetworkTraceT<double> forward_features(const FeatureMapT<double>&, const DlsnParams&, const FrozenHashing*);
template NetworkTraceT<Extended> forward_features(const FeatureMapT<Extended>&, const DlsnParams&,
                                                  const FrozenHashing*);

ImageBuffer dlsn_forward(const ImageBuffer& lr, const DlsnParams& params) {
  FeatureMap x = to_planes(lr);
  x.values() /= 255.0;
  FeatureMap out = forward_features(x, params).output;
  out.values() *= 255.0;
  return from_planes(out);
}

NetworkGrad backward(const NetworkTrace& t, const DlsnParams& params, const FeatureMap& doutput) {
  require(doutput.same_shape(t.output), "dlsn backward: output gradient shape mismatch");
  NetworkGrad g{DlsnParams(params.config), FeatureMap()};

  auto rc = conv2d_3x3_backward(t.upscaled, params.reconstruct, doutput);
  g.params.reconstruct = rc.kernel;
  FeatureMap d = std::move(rc.input);
  const auto stages = upscale_stages(params.config.scale);
  for (std::size_t s = stages.size(); s-- > 0;) {
    auto up = conv2d_3x3_backward(t.stage_inputs[s], params.upscale[s], pixel_unshuffle(d, stages[s]));
    g.params.upscale[s] = up.kernel;
    d = std::move(up.input);
  }

  FeatureMap dshallow = d;  // long skip
  for (std::size_t m = params.modules.size(); m-- > 0;) {
    const GlaffmParams& mod = params.modules[m];
    const ModuleTrace& mt = t.modules[m];
    GlaffmParams& gm = g.params.modules[m];
    FeatureMap dinput = d;  // module residual

    auto rf = conv2d_3x3_backward(mt.fused, mod.refine, d);
    gm.refine = rf.kernel;
    FeatureMap da = rf.input;  // block residual
    auto ex = conv2d_3x3_backward(mt.attended, mod.expand, rf.input);
    gm.expand = ex.kernel;
    GlaGrad gg = gla_backward(mt.reduced, mod.gla, mt.plan, ex.input, &mt.weights);
    gm.gla = std::move(gg.params);
    auto rd = conv2d_3x3_backward(mt.lffb_out, mod.reduce, gg.input);
    gm.reduce = rd.kernel;
    da += rd.input;

    for (std::size_t b = mod.lffb.size(); b-- > 0;) {
      const auto& block = mod.lffb[b];
      auto c2 = conv2d_3x3_backward(relu(mt.block_hidden[b]), block.conv2, da);
      auto c1 = conv2d_3x3_backward(mt.block_inputs[b], block.conv1, relu_backward(mt.block_hidden[b], c2.input));
      gm.lffb[b].conv1 = c1.kernel;
      gm.lffb[b].conv2 = c2.kernel;
      da += c1.input;
    }
    dinput += da;
    d = std::move(dinput);
  }
  dshallow += d;
  auto sh = conv2d_3x3_backward(t.input, params.shallow, dshallow);
  g.params.shallow = sh.kernel;
  g.input = std::move(sh.input);
  return g;
}

GradCheckReport network_grad_check(const FeatureMap& input, const DlsnParams& params, double step, double tolerance,
                                   std::uint64_t seed, std::size_t max_entries) {
  const NetworkTrace base = forward_features(input, params);
  const FrozenHashing frozen = freeze_hashing(base);
  Xoshiro256 rng(seed);
  FeatureMap mask(base.output.channels(), base.output.height(), base.output.width());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.normal();

  const NetworkGrad analytic = backward(base, params, mask);
  DlsnParams probe = params;
  auto named = probe.tensors();
  const NetworkTraceT<Extended> base_ext = forward_features(as_scalar<Extended>(input), params, &frozen);
  const std::size_t module_count = params.modules.size();

  // Everything after the last module is affine, so the output difference is
  // that tail without biases applied to the difference at its input, which
  // double precision carries without loss. The modules are rerun in
  // extended precision from the one owning the perturbed tensor.
  DlsnParams linear_tail = params;
  for (auto& k : linear_tail.upscale) k.bias.setZero();
  linear_tail.reconstruct.bias.setZero();
  auto kernel_delta = [](const Conv3x3& a, const Conv3x3& b) {
    Conv3x3 d;
    d.weight = a.weight - b.weight;
    d.bias = a.bias - b.bias;
    return d;
  };
  auto output_delta = [&](std::size_t t) {
    const std::string& name = named[t].name;
    if (name.rfind("reconstruct", 0) == 0)
      return conv2d_3x3(base.upscaled, kernel_delta(probe.reconstruct, params.reconstruct));
    if (name.rfind("upscale", 0) == 0) {
      const std::size_t s = std::stoul(name.substr(7));
      const FeatureMap d = conv2d_3x3(base.stage_inputs[s], kernel_delta(probe.upscale[s], params.upscale[s]));
      const auto stages = upscale_stages(params.config.scale);
      return tail_forward(pixel_shuffle(d, stages[s]), linear_tail, s + 1, static_cast<NetworkTrace*>(nullptr));
    }
    FeatureMapT<Extended> trunk;
    if (name.rfind("glaffm", 0) == 0) {
      const std::size_t dot = name.find('.');
      const std::size_t first = std::stoul(name.substr(6, dot - 6));
      FeatureMapT<Extended> x = module_resume(base_ext.modules[first], probe.modules[first], name.substr(dot + 1));
      for (std::size_t m = first + 1; m < module_count; ++m) {
        ModuleTraceT<Extended> mt;
        x = module_forward(x, probe.modules[m], &frozen.plans[m], &frozen.weights[m], mt);
      }
      trunk = x + base_ext.shallow;
    } else {
      trunk = forward_features(base_ext.input, probe, &frozen).trunk;
    }
    const FeatureMap d((trunk.values() - base_ext.trunk.values()).cast<double>(), trunk.height(), trunk.width());
    return tail_forward(d, linear_tail, 0, static_cast<NetworkTrace*>(nullptr));
  };
  auto loss = [&](std::size_t t) { return output_delta(t).values().cwiseProduct(mask.values()).sum(); };
  return compare_gradients(named, analytic.params.tensors(), loss, step, tolerance, max_entries,
                           derive_seed(seed, 1));
}

std::vector<std::uint8_t> encode_params(const DlsnParams& params) {
  const NetworkConfig& c = params.config;
  ByteWriter w;
  w.bytes("DLSN", 4);
  w.u32(kParamsFormatVersion);
  for (int v : {c.glaffm_count, c.lffb_blocks, c.trunk_channels, c.gla_channels, c.bucket_size, c.rounds,
                c.hash_buckets, c.scale})
    w.u32(std::uint32_t(v));
  w.u64(c.master_seed);
  for (const Matrix* m : params.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) w.f32(m->data()[i]);
  return w.take();
}

DlsnParams decode_params(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != "DLSN") throw ParseError("not a DLSN parameter file (bad magic)", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kParamsFormatVersion)
    throw ParseError("unsupported DLSN format version " + std::to_string(version), version_at);
  const std::size_t config_at = r.offset();
  NetworkConfig c;
  for (int* field : {&c.glaffm_count, &c.lffb_blocks, &c.trunk_channels, &c.gla_channels, &c.bucket_size, &c.rounds,
                     &c.hash_buckets, &c.scale}) {
    const std::uint32_t v = r.u32("config");
    if (v > (1u << 20)) throw ParseError("implausible config value " + std::to_string(v), r.offset() - 4);
    *field = int(v);
  }
  c.master_seed = r.u64("config seed");
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("invalid config block: ") + e.what(), config_at);
  }
  std::size_t total = 0;
  {
    const DlsnParams shape(c);
    for (const Matrix* m : shape.tensors()) total += std::size_t(m->size());
  }
  if (r.remaining() < 4 * total)
    throw ParseError("truncated tensor data, need " + std::to_string(4 * total) + " bytes", bytes.size());
  DlsnParams p(c);
  for (NamedTensor& t : p.tensors())
    for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] = r.f32(t.name.c_str());
  if (r.remaining() != 0) throw ParseError("trailing bytes after tensor data", r.offset());
  return p;
}

void save_params(const std::filesystem::path& path, const DlsnParams& params) {
  const auto bytes = encode_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

DlsnParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

}  // namespace dlsn
