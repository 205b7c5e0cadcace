#include "lmvp/model.hpp"

#include <array>
#include <cmath>

#include "lmvp/rng.hpp"

namespace lmvp {

namespace {

Tensor glorot(const Shape& shape, int fan_in, int fan_out, uint64_t seed, const std::string& name) {
  Tensor t(shape);
  Rng rng(mix_seed(seed, hash_str(name.c_str())));
  float a = float(std::sqrt(6.0 / double(fan_in + fan_out)));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = float(rng.next_sym()) * a;
  return t;
}

void add_kernel(Params& p, const std::string& name, int co, int ci, int k, uint64_t seed) {
  p.emplace(name + ".w", glorot(Shape{co, ci, k, k}, ci * k * k, co * k * k, seed, name + ".w"));
}

void add_conv(Params& p, const std::string& name, int co, int ci, int k, uint64_t seed) {
  add_kernel(p, name, co, ci, k, seed);
  p.emplace(name + ".b", Tensor(Shape{co}));
}

FVar conv_block(Tape<float>& t, FVar x, FVar w, FVar b, int stride, Act act) {
  return t.activation(t.chan_bias(t.conv2d(x, w, stride, Pad::SameZero), b), act);
}

}  // namespace

Params init_params(const ModelConfig& cfg, uint64_t seed) {
  Params p;
  const int bw = cfg.base_width, fch = cfg.fch(), c = cfg.channels;
  // Discriminator: extractor F then classification head.
  add_conv(p, "dis.f.conv1", bw, cfg.clip_channels(), 3, seed);
  add_conv(p, "dis.f.conv2", fch, bw, 3, seed);
  add_conv(p, "dis.f.conv3", fch, fch, 3, seed);
  add_conv(p, "dis.head.conv", fch, fch, 3, seed);
  p.emplace("dis.head.fc.w", glorot(Shape{1, fch}, fch, 1, seed, "dis.head.fc.w"));
  p.emplace("dis.head.fc.b", Tensor(Shape{1}));
  // Motion guider: one conv GRU plus a linear output conv.
  if (!cfg.ablation) {
    for (const char* gate : {"z", "r", "c"}) {
      add_kernel(p, cat("guider.gru.x", gate), fch, fch, 3, seed);
      add_kernel(p, cat("guider.gru.h", gate), fch, fch, 3, seed);
      p.emplace(cat("guider.gru.", gate, ".b"), Tensor(Shape{fch}));
    }
    add_conv(p, "guider.out", fch, fch, 3, seed);
  }
  // Generator: spatial encoder, motion encoder, filter decoder.
  add_conv(p, "gen.spatial.conv1", bw, c, 3, seed);
  add_conv(p, "gen.spatial.conv2", fch, bw, 3, seed);
  add_conv(p, "gen.spatial.conv3", fch, fch, 3, seed);
  add_conv(p, "gen.motion.conv", fch, fch, 3, seed);
  add_conv(p, "gen.filter.conv1", fch, 2 * fch, 3, seed);
  add_conv(p, "gen.filter.conv2", bw, fch, 3, seed);
  add_conv(p, "gen.filter.proj", cfg.filter_size * cfg.filter_size, bw, 1, seed);
  return p;
}

std::vector<FVar> ModelVars::theta_d() const {
  std::vector<FVar> out = theta_f.vars;
  out.insert(out.end(), theta_c.vars.begin(), theta_c.vars.end());
  return out;
}

ModelVars bind_model(Tape<float>& tape, const Params& params, const ModelConfig& cfg) {
  ModelVars mv;
  std::map<std::string, FVar> bound;
  for (const auto& [name, tensor] : params) {
    FVar v = tape.leaf(tensor);
    bound.emplace(name, v);
    BoundSet* set = nullptr;
    if (in_theta_f(name)) set = &mv.theta_f;
    else if (in_theta_c(name)) set = &mv.theta_c;
    else if (in_theta_m(name)) set = &mv.theta_m;
    else if (in_theta_g(name)) set = &mv.theta_g;
    else throw ContractError(cat("bind_model: parameter '", name, "' belongs to no known set"));
    set->names.push_back(name);
    set->vars.push_back(v);
  }
  auto get = [&](const char* name) -> FVar {
    auto it = bound.find(name);
    if (it == bound.end()) throw ContractError(cat("bind_model: missing parameter '", name, "'"));
    return it->second;
  };
  mv.f = {get("dis.f.conv1.w"), get("dis.f.conv1.b"), get("dis.f.conv2.w"),
          get("dis.f.conv2.b"), get("dis.f.conv3.w"), get("dis.f.conv3.b")};
  mv.head = {get("dis.head.conv.w"), get("dis.head.conv.b"), get("dis.head.fc.w"), get("dis.head.fc.b")};
  if (!cfg.ablation) {
    mv.guider.gru = {get("guider.gru.xz.w"), get("guider.gru.hz.w"), get("guider.gru.z.b"),
                     get("guider.gru.xr.w"), get("guider.gru.hr.w"), get("guider.gru.r.b"),
                     get("guider.gru.xc.w"), get("guider.gru.hc.w"), get("guider.gru.c.b")};
    mv.guider.ow = get("guider.out.w");
    mv.guider.ob = get("guider.out.b");
  }
  mv.gen = {get("gen.spatial.conv1.w"), get("gen.spatial.conv1.b"), get("gen.spatial.conv2.w"),
            get("gen.spatial.conv2.b"), get("gen.spatial.conv3.w"), get("gen.spatial.conv3.b"),
            get("gen.motion.conv.w"),   get("gen.motion.conv.b"),   get("gen.filter.conv1.w"),
            get("gen.filter.conv1.b"),  get("gen.filter.conv2.w"),  get("gen.filter.conv2.b"),
            get("gen.filter.proj.w"),   get("gen.filter.proj.b")};
  return mv;
}

FVar extract_features(Tape<float>& t, FVar clip, const ExtractorVars& f) {
  auto h1 = conv_block(t, clip, f.w1, f.b1, 1, Act::LeakyRelu02);
  auto h2 = conv_block(t, h1, f.w2, f.b2, 2, Act::LeakyRelu02);
  return conv_block(t, h2, f.w3, f.b3, 2, Act::LeakyRelu02);
}

FVar discriminate(Tape<float>& t, FVar clip, const ExtractorVars& f, const HeadVars& head) {
  auto feat = extract_features(t, clip, f);
  auto h = conv_block(t, feat, head.cw, head.cb, 2, Act::LeakyRelu02);
  auto pooled = t.global_avg_pool(h);
  return t.activation(t.dense(pooled, head.fw, head.fb), Act::Sigmoid);
}

std::pair<FVar, FVar> guide_motion(Tape<float>& t, FVar feat, FVar hidden, const GuiderVars& g) {
  FVar next = conv_gru_step(t, hidden, feat, g.gru);
  FVar motion = t.chan_bias(t.conv2d(next, g.ow, 1, Pad::SameZero), g.ob);  // linear: motion is signed
  return {motion, next};
}

FVar encode_spatial(Tape<float>& t, FVar frame, const GenVars& g) {
  auto h1 = conv_block(t, frame, g.s1w, g.s1b, 1, Act::Relu);
  auto h2 = conv_block(t, h1, g.s2w, g.s2b, 2, Act::Relu);
  return conv_block(t, h2, g.s3w, g.s3b, 2, Act::Relu);
}

FVar encode_motion(Tape<float>& t, FVar motion, const GenVars& g) {
  return conv_block(t, motion, g.mw, g.mb, 1, Act::Relu);
}

FVar make_filters(Tape<float>& t, FVar f_spatial, FVar f_motion, const GenVars& g) {
  std::array<FVar, 2> both{f_spatial, f_motion};
  auto cat = t.concat_ch(both);
  auto d1 = conv_block(t, t.upsample2(cat), g.f1w, g.f1b, 1, Act::Relu);
  auto d2 = conv_block(t, t.upsample2(d1), g.f2w, g.f2b, 1, Act::Relu);
  auto logits = t.chan_bias(t.conv2d(d2, g.pw, 1, Pad::SameZero), g.pb);
  return t.softmax_sites(logits);
}

FVar predict_next(Tape<float>& t, FVar frame, FVar motion, const GenVars& g) {
  auto f_s = encode_spatial(t, frame, g);
  auto f_m = encode_motion(t, motion, g);
  auto filters = make_filters(t, f_s, f_m, g);
  return t.dynamic_filter(frame, filters);
}

FVar predict_next_ablation(Tape<float>& t, FVar frame, FVar prev_frame, const GenVars& g) {
  auto f_s = encode_spatial(t, frame, g);
  auto f_prev = encode_spatial(t, prev_frame, g);
  auto f_m = encode_motion(t, t.sub(f_s, f_prev), g);
  auto filters = make_filters(t, f_s, f_m, g);
  return t.dynamic_filter(frame, filters);
}

}  // namespace lmvp
