#include "lmvp/training.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "binio.hpp"

namespace lmvp {

namespace {

constexpr char kCkptMagic[] = "LMVPCKPT";
constexpr uint32_t kCkptVersion = 1;

// Deterministic parallel map: each index writes only its own slot, so the
// result is independent of the thread schedule.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(size_t(threads));
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

Var<float> const_clip(Tape<float>& tape, std::span<const Tensor> frames, int first, int last) {
  std::vector<Var<float>> parts;
  parts.reserve(size_t(last - first + 1));
  for (int i = first; i <= last; ++i) parts.push_back(tape.constant(frames[size_t(i)]));
  return tape.concat_ch(parts);
}

// Gradients aligned with a bound set, folded into a name->tensor map.
void accumulate_grads(std::map<std::string, Tensor>& acc, const std::vector<std::string>& names,
                      const std::vector<Tensor>& grads, size_t offset, float scale) {
  for (size_t i = 0; i < names.size(); ++i) {
    const Tensor& g = grads[offset + i];
    auto [it, fresh] = acc.try_emplace(names[i], Tensor(g.shape()));
    Tensor& a = it->second;
    for (size_t j = 0; j < g.numel(); ++j) a[j] += scale * g[j];
  }
}

float finite_or_throw(float v, const char* phase, int64_t iter) {
  if (!std::isfinite(v))
    throw NumericalError(cat("non-finite loss in ", phase, " at iteration ", iter));
  return v;
}

// Phase 1 / pretrain step (a): Adam step on theta_D from L_dis over
// time-aligned real windows and generated windows. The generated clips are
// fixed negatives: the gradient flows only through the discriminator score.
float phase_discriminator(const VideoSet& train, std::span<const int> batch, Params& params,
                          AdamState& st_dis, const TrainConfig& cfg, const ModelConfig& mcfg, int t0) {
  const int c = mcfg.clip_context;
  const float inv_b = 1.0f / float(batch.size());
  std::map<std::string, Tensor> acc;
  double loss_acc = 0.0;
  for (int vid : batch) {
    auto frames = video_frames(train, vid);
    std::vector<Tensor> fake_frames;
    {
      Tape<float> tape;
      auto mv = bind_model(tape, params, mcfg);
      auto rc = rollout(tape, frames, t0, mv, mcfg, cfg, RolloutOptions{});
      fake_frames = std::move(rc.frames);
    }
    Tape<float> tape;
    auto mv = bind_model(tape, params, mcfg);
    std::vector<Var<float>> preal, pfake;
    for (int e = t0; e < int(frames.size()); ++e) {  // windows ending at each predicted frame
      preal.push_back(discriminate(tape, const_clip(tape, frames, e - c, e), mv.f, mv.head));
      pfake.push_back(discriminate(tape, const_clip(tape, fake_frames, e - c, e), mv.f, mv.head));
    }
    auto loss = loss_dis(tape, std::span<const Var<float>>(preal), std::span<const Var<float>>(pfake),
                         cfg.loss.prob_eps);
    auto wrt = mv.theta_d();
    auto grads = tape.backprop(loss, wrt);
    accumulate_grads(acc, mv.theta_f.names, grads, 0, inv_b);
    accumulate_grads(acc, mv.theta_c.names, grads, mv.theta_f.names.size(), inv_b);
    loss_acc += double(loss.value()[0]);
  }
  adam_update(params, acc, st_dis);
  return float(loss_acc / double(batch.size()));
}

// Phase 2: Adam step on theta_M from the learner loss, real videos only.
// theta_F is fixed; the recurrent chain is differentiated end to end.
float phase_guider(const VideoSet& train, std::span<const int> batch, Params& params, AdamState& st_guider,
                   const TrainConfig& cfg, const ModelConfig& mcfg, int t0) {
  (void)t0;
  const int c = mcfg.clip_context;
  const float inv_b = 1.0f / float(batch.size());
  std::map<std::string, Tensor> acc;
  double loss_acc = 0.0;
  for (int vid : batch) {
    auto frames = video_frames(train, vid);
    const int tt = int(frames.size());
    Tape<float> tape;
    auto mv = bind_model(tape, params, mcfg);
    std::vector<Var<float>> feats;
    std::vector<Tensor> feat_vals;
    for (int t = c; t < tt; ++t) {
      auto f = extract_features(tape, const_clip(tape, frames, t - c, t), mv.f);
      feat_vals.push_back(f.value());
      feats.push_back(f);
    }
    auto targets = motion_target<float>(feat_vals);
    const auto& f0 = feat_vals.front();
    Var<float> hidden = tape.constant(Tensor(f0.shape()));
    std::vector<Var<float>> m_hats;
    for (size_t i = 0; i + 1 < feats.size(); ++i) {
      auto [m_hat, next] = guide_motion(tape, feats[i], hidden, mv.guider);
      hidden = next;
      m_hats.push_back(m_hat);
    }
    auto loss = loss_guider_learner(tape, std::span<const Var<float>>(m_hats),
                                    std::span<const Tensor>(targets));
    auto grads = tape.backprop(loss, mv.theta_m.vars);
    accumulate_grads(acc, mv.theta_m.names, grads, 0, inv_b);
    loss_acc += double(loss.value()[0]);
  }
  adam_update(params, acc, st_guider);
  return float(loss_acc / double(batch.size()));
}

struct GenPhaseResult {
  float recons = 0.0f, teacher = 0.0f, total = 0.0f;
};

// Phase 3 / pretrain step (b): generator-side update. In Joint scope the
// step also trains theta_F and theta_M through the motion path (pretrain);
// in GenOnly scope the leaked feature and guider output are detached and
// only theta_G moves.
GenPhaseResult phase_generator(const VideoSet& train, std::span<const int> batch, Params& params,
                               AdamState& st_dis, AdamState& st_guider, AdamState& st_gen,
                               const TrainConfig& cfg, const ModelConfig& mcfg, int t0, GradScope scope,
                               float gamma) {
  const float inv_b = 1.0f / float(batch.size());
  std::map<std::string, Tensor> acc;
  GenPhaseResult res;
  const bool joint = scope == GradScope::Joint;
  for (int vid : batch) {
    auto frames = video_frames(train, vid);
    Tape<float> tape;
    auto mv = bind_model(tape, params, mcfg);
    RolloutOptions opt;
    opt.scope = scope;
    opt.losses = true;
    opt.gamma = gamma;
    auto rc = rollout(tape, frames, t0, mv, mcfg, cfg, opt);
    std::vector<Var<float>> wrt = mv.theta_g.vars;
    if (joint && !mcfg.ablation) {
      wrt.insert(wrt.end(), mv.theta_f.vars.begin(), mv.theta_f.vars.end());
      wrt.insert(wrt.end(), mv.theta_m.vars.begin(), mv.theta_m.vars.end());
    }
    auto grads = tape.backprop(rc.gen_loss, wrt);
    accumulate_grads(acc, mv.theta_g.names, grads, 0, inv_b);
    if (joint && !mcfg.ablation) {
      accumulate_grads(acc, mv.theta_f.names, grads, mv.theta_g.names.size(), inv_b);
      accumulate_grads(acc, mv.theta_m.names, grads, mv.theta_g.names.size() + mv.theta_f.names.size(), inv_b);
    }
    res.recons += rc.recons.value()[0] * inv_b;
    res.teacher += rc.teacher.value()[0] * inv_b;
    res.total += rc.gen_loss.value()[0] * inv_b;
  }
  std::map<std::string, Tensor> acc_f, acc_m, acc_g;
  for (auto& [name, g] : acc) {
    if (in_theta_f(name)) acc_f.emplace(name, std::move(g));
    else if (in_theta_m(name)) acc_m.emplace(name, std::move(g));
    else acc_g.emplace(name, std::move(g));
  }
  if (!acc_f.empty()) adam_update(params, acc_f, st_dis);
  if (!acc_m.empty()) adam_update(params, acc_m, st_guider);
  adam_update(params, acc_g, st_gen);
  return res;
}

}  // namespace

void TrainConfig::validate(const DataConfig& data) const {
  std::string bad;
  auto flag = [&](const std::string& what) {
    if (!bad.empty()) bad += "; ";
    bad += what;
  };
  if (clip_context < 1) flag("clip_context must be >= 1");
  if (clip_context + 1 > data.t0)
    flag(cat("clip_context + 1 must be <= t0 (clip_context=", clip_context, ", t0=", data.t0, ")"));
  if (batch_size < 1) flag("batch_size must be >= 1");
  if (pretrain_iters < 0 || main_iters < 0) flag("pretrain_iters and main_iters must be >= 0");
  if (eval_interval < 1) flag("eval_interval must be >= 1");
  if (base_width < 1) flag("base_width must be >= 1");
  if (filter_size < 1 || filter_size % 2 == 0) flag("filter_size must be odd and >= 1");
  if (threads < 1) flag("threads must be >= 1");
  if (data.height % 4 != 0 || data.width % 4 != 0)
    flag(cat("height and width must be multiples of 4 (height=", data.height, ", width=", data.width, ")"));
  if (!bad.empty()) throw ConfigError(cat("invalid train config: ", bad));
  loss.validate();
}

std::vector<Tensor> video_frames(const VideoSet& set, int video) {
  std::vector<Tensor> out;
  out.reserve(size_t(set.frames()));
  for (int t = 0; t < set.frames(); ++t) out.push_back(set.frame_chw(video, t));
  return out;
}

RolloutCache rollout(Tape<float>& tape, std::span<const Tensor> video, int t0, const ModelVars& mv,
                     const ModelConfig& mcfg, const TrainConfig& cfg, const RolloutOptions& opt) {
  const int tt = int(video.size());
  const int c = mcfg.clip_context;
  if (t0 < c + 1 || t0 >= tt)
    throw ContractError(cat("rollout: need clip_context + 1 <= t0 < frames, got t0=", t0, ", clip_context=", c,
                            ", frames=", tt));
  const int h = video[0].dim(1), w = video[0].dim(2);

  RolloutCache rc;
  rc.frames.assign(video.begin(), video.end());

  Tensor hidden_val(Shape{mcfg.fch(), h / 4, w / 4});
  std::vector<Var<float>> real_targets;
  std::vector<Var<float>> teacher_terms;

  for (int t = c; t <= tt - 2; ++t) {
    Var<float> m_hat_use;
    if (!mcfg.ablation) {
      auto clip = const_clip(tape, rc.frames, t - c, t);
      auto f_hat = extract_features(tape, clip, mv.f);
      auto [m_hat, next] = guide_motion(tape, f_hat, tape.constant(hidden_val), mv.guider);
      hidden_val = next.value();
      rc.fake_features.push_back(f_hat.value());
      rc.guider_motion.push_back(m_hat.value());
      rc.guider_hidden.push_back(hidden_val);
      m_hat_use = opt.scope == GradScope::Joint ? m_hat : tape.detach(m_hat);
    }
    if (t >= t0 - 1) {
      auto cur = tape.constant(rc.frames[size_t(t)]);
      Var<float> pred;
      if (mcfg.ablation) {
        pred = predict_next_ablation(tape, cur, tape.constant(rc.frames[size_t(t - 1)]), mv.gen);
      } else {
        pred = predict_next(tape, cur, m_hat_use, mv.gen);
      }
      rc.frames[size_t(t + 1)] = pred.value();
      rc.predicted.push_back(pred.value());
      rc.pred_vars.push_back(pred);
      if (opt.losses) {
        real_targets.push_back(tape.constant(video[size_t(t + 1)]));
        if (!mcfg.ablation && opt.gamma != 0.0f && opt.scope == GradScope::GenOnly) {
          std::vector<Var<float>> ext;
          ext.reserve(size_t(c) + 1);
          for (int i = t + 1 - c; i <= t; ++i) ext.push_back(tape.constant(rc.frames[size_t(i)]));
          ext.push_back(pred);
          auto f_ext = extract_features(tape, tape.concat_ch(ext), mv.f);
          teacher_terms.push_back(teacher_term(tape, f_ext, rc.fake_features.back(), rc.guider_motion.back()));
        }
      }
    }
  }

  if (opt.real_branch) {
    for (int t = c; t < tt; ++t) {
      auto f = extract_features(tape, const_clip(tape, video, t - c, t), mv.f);
      rc.real_features.push_back(f.value());
    }
    auto targets = motion_target<float>(std::span<const Tensor>(rc.real_features));
    rc.motion_targets = std::move(targets);
  }

  if (opt.losses) {
    rc.recons = loss_recons(tape, std::span<const Var<float>>(real_targets),
                            std::span<const Var<float>>(rc.pred_vars), cfg.loss);
    if (teacher_terms.empty()) {
      rc.teacher = tape.constant(Tensor(Shape{1}));
    } else {
      std::vector<float> ones(teacher_terms.size(), 1.0f);
      rc.teacher = tape.affine(teacher_terms, ones);
    }
    rc.gen_loss = loss_gen(tape, rc.recons, rc.teacher, opt.gamma);
  }
  return rc;
}

PhaseReport pretrain_iteration(const VideoSet& train, std::span<const int> batch, Params& params,
                               AdamState& st_dis, AdamState& st_guider, AdamState& st_gen,
                               const TrainConfig& cfg, int64_t iter) {
  const ModelConfig mcfg = cfg.model_config(train.channels());
  const int t0 = train.config.t0;
  PhaseReport rep;
  rep.loss_dis =
      finite_or_throw(phase_discriminator(train, batch, params, st_dis, cfg, mcfg, t0), "pretrain phase (a)", iter);
  auto gen = phase_generator(train, batch, params, st_dis, st_guider, st_gen, cfg, mcfg, t0,
                             GradScope::Joint, 0.0f);
  rep.loss_recons = finite_or_throw(gen.recons, "pretrain phase (b)", iter);
  rep.loss_gen = gen.total;
  return rep;
}

PhaseReport train_iteration(const VideoSet& train, std::span<const int> batch, Params& params,
                            AdamState& st_dis, AdamState& st_guider, AdamState& st_gen,
                            const TrainConfig& cfg, int64_t iter) {
  const ModelConfig mcfg = cfg.model_config(train.channels());
  const int t0 = train.config.t0;
  PhaseReport rep;
  rep.loss_dis =
      finite_or_throw(phase_discriminator(train, batch, params, st_dis, cfg, mcfg, t0), "phase 1 (discriminator)", iter);
  if (!cfg.ablation)
    rep.loss_guider =
        finite_or_throw(phase_guider(train, batch, params, st_guider, cfg, mcfg, t0), "phase 2 (motion guider)", iter);
  const float gamma = cfg.ablation ? 0.0f : cfg.loss.gamma;
  auto gen = phase_generator(train, batch, params, st_dis, st_guider, st_gen, cfg, mcfg, t0,
                             GradScope::GenOnly, gamma);
  rep.loss_recons = finite_or_throw(gen.recons, "phase 3 (generator)", iter);
  rep.loss_teacher = gen.teacher;
  rep.loss_gen = gen.total;
  return rep;
}

void pretrain(const VideoSet& train, const TrainConfig& cfg, Params& params, AdamState& st_dis,
              AdamState& st_guider, AdamState& st_gen, std::vector<PhaseReport>* log) {
  BatchPlan plan;
  int epoch = -1;
  for (int64_t k = 0; k < cfg.pretrain_iters; ++k) {
    int bpe = (train.n() + cfg.batch_size - 1) / cfg.batch_size;
    int e = int(k / bpe);
    if (e != epoch) {
      plan = batch_iter(train, cfg.batch_size, mix_seed(cfg.seed, 0xEF0C000 + uint64_t(e)));
      epoch = e;
    }
    auto rep = pretrain_iteration(train, plan.batches[size_t(k % bpe)], params, st_dis, st_guider, st_gen,
                                  cfg, k + 1);
    if (log) log->push_back(rep);
  }
}

// --- checkpoints ------------------------------------------------------------

namespace {

void put_tensor_list(std::string& out, const std::map<std::string, Tensor>& tensors) {
  binio::put_u32(out, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    binio::put_u32(out, uint32_t(name.size()));
    out.append(name);
    binio::put_u32(out, uint32_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) binio::put_u32(out, uint32_t(t.dim(i)));
    binio::put_f32_span(out, t.data(), t.numel());
  }
}

std::map<std::string, Tensor> get_tensor_list(binio::Reader& r) {
  std::map<std::string, Tensor> out;
  uint32_t count = r.get_u32("tensor count");
  if (count > 1u << 20) throw FormatError(cat(r.path(), ": implausible tensor count ", count));
  for (uint32_t i = 0; i < count; ++i) {
    size_t name_off = r.offset();
    uint32_t name_len = r.get_u32("name length");
    if (name_len == 0 || name_len > 4096)
      throw FormatError(cat(r.path(), ": implausible name length ", name_len, " at byte offset ", name_off));
    std::string name = r.get_bytes(name_len, "tensor name");
    uint32_t rank = r.get_u32("rank");
    if (rank > 8) throw FormatError(cat(r.path(), ": implausible rank ", rank, " for tensor '", name, "'"));
    Shape shape(rank);
    size_t numel = 1;
    for (auto& d : shape) {
      uint32_t v = r.get_u32("dimension");
      if (v > 1u << 28) throw FormatError(cat(r.path(), ": implausible dimension ", v, " in tensor '", name, "'"));
      d = int(v);
      numel *= v;
    }
    Tensor t(shape);
    r.get_f32_span(t.data(), numel, "tensor payload");
    if (!out.emplace(std::move(name), std::move(t)).second)
      throw FormatError(cat(r.path(), ": duplicate tensor name"));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kCkptMagic, 8);
  binio::put_u32(out, kCkptVersion);
  put_tensor_list(out, ckpt.params);
  put_tensor_list(out, ckpt.moments);
  binio::put_u64(out, ckpt.iteration);
  binio::put_u64(out, ckpt.seed);
  binio::write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  binio::Reader r(binio::read_file(path), path);
  r.expect_magic(kCkptMagic, 8);
  uint32_t version = r.get_u32("version");
  if (version != kCkptVersion)
    throw FormatError(cat(path, ": unsupported checkpoint version ", version, ", expected ", kCkptVersion));
  Checkpoint ckpt;
  ckpt.params = get_tensor_list(r);
  ckpt.moments = get_tensor_list(r);
  ckpt.iteration = r.get_u64("iteration counter");
  ckpt.seed = r.get_u64("seed");
  r.expect_end();
  return ckpt;
}

Checkpoint make_checkpoint(const Params& params, const AdamState& st_dis, const AdamState& st_guider,
                           const AdamState& st_gen, uint64_t iteration, uint64_t seed) {
  Checkpoint ckpt;
  ckpt.params = params;
  for (const AdamState* st : {&st_dis, &st_guider, &st_gen})
    for (const auto& [name, mm] : st->moments) {
      ckpt.moments.emplace(name + ".m", mm.m);
      ckpt.moments.emplace(name + ".v", mm.v);
    }
  ckpt.iteration = iteration;
  ckpt.seed = seed;
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg, Params& params, AdamState& st_dis,
                        AdamState& st_guider, AdamState& st_gen) {
  auto it = ckpt.params.find("gen.spatial.conv1.w");
  if (it == ckpt.params.end()) throw FormatError("checkpoint: missing tensor 'gen.spatial.conv1.w'");
  const int channels = it->second.dim(1);
  const ModelConfig mcfg = cfg.model_config(channels);
  Params expected = init_params(mcfg, 0);
  if (expected.size() != ckpt.params.size())
    throw ConfigError(cat("checkpoint/config mismatch: checkpoint has ", ckpt.params.size(),
                          " tensors, config implies ", expected.size()));
  for (const auto& [name, t] : expected) {
    auto pit = ckpt.params.find(name);
    if (pit == ckpt.params.end()) throw ConfigError(cat("checkpoint/config mismatch: missing tensor '", name, "'"));
    if (pit->second.shape() != t.shape())
      throw ConfigError(cat("checkpoint/config mismatch for '", name, "': checkpoint ",
                            shape_str(pit->second.shape()), ", config implies ", shape_str(t.shape())));
  }
  params = ckpt.params;
  st_dis = make_adam_state(params, "dis.", cfg.adam_dis);
  st_guider = make_adam_state(params, "guider.", cfg.adam_guider);
  st_gen = make_adam_state(params, "gen.", cfg.adam_gen);

  const int64_t iter = int64_t(ckpt.iteration);
  const int64_t pre_done = std::min<int64_t>(iter, cfg.pretrain_iters);
  const int64_t main_done = iter - pre_done;
  auto fill = [&](AdamState& st) {
    for (auto& [name, mm] : st.moments) {
      auto mit = ckpt.moments.find(name + ".m");
      auto vit = ckpt.moments.find(name + ".v");
      if (mit == ckpt.moments.end() || vit == ckpt.moments.end())
        throw FormatError(cat("checkpoint: missing moments for '", name, "'"));
      if (mit->second.shape() != mm.m.shape())
        throw FormatError(cat("checkpoint: moment shape mismatch for '", name, "'"));
      mm.m = mit->second;
      mm.v = vit->second;
      // The wire format stores one iteration counter; per-tensor step counts
      // follow from the update schedule. theta_F steps twice per pretrain
      // iteration in full mode (phase (a) as part of theta_D, phase (b)
      // through the leaked-feature path).
      bool twice = !cfg.ablation && in_theta_f(name);
      mm.step = (twice ? 2 : 1) * pre_done + main_done;
    }
  };
  fill(st_dis);
  fill(st_guider);
  fill(st_gen);
}

// --- evaluation ---------------------------------------------------------------

std::vector<StepMetrics> evaluate(const VideoSet& testset, int t0, const Params& params,
                                  const TrainConfig& cfg) {
  if (testset.n() == 0) throw ContractError("evaluate: empty test set");
  const ModelConfig mcfg = cfg.model_config(testset.channels());
  const int steps = testset.frames() - t0;
  if (steps < 1) throw ContractError(cat("evaluate: t0=", t0, " leaves no frames to predict"));

  std::vector<std::vector<StepMetrics>> per_video(size_t(testset.n()));
  parallel_for(testset.n(), cfg.threads, [&](int vid) {
    auto frames = video_frames(testset, vid);
    Tape<float> tape;
    auto mv = bind_model(tape, params, mcfg);
    auto rc = rollout(tape, frames, t0, mv, mcfg, cfg, RolloutOptions{});
    std::vector<StepMetrics> rows(size_t(steps));
    const Tensor& last = frames[size_t(t0 - 1)];
    for (int s = 0; s < steps; ++s) {
      const Tensor& truth = frames[size_t(t0 + s)];
      rows[size_t(s)].model = evaluate_metrics(std::span(&truth, 1), std::span(&rc.predicted[size_t(s)], 1));
      rows[size_t(s)].baseline = evaluate_metrics(std::span(&truth, 1), std::span(&last, 1));
    }
    per_video[size_t(vid)] = std::move(rows);
  });

  std::vector<StepMetrics> out(size_t(steps));
  for (int vid = 0; vid < testset.n(); ++vid)
    for (int s = 0; s < steps; ++s) {
      auto addinto = [](MetricRecord& a, const MetricRecord& b) {
        a.bce += b.bce;
        a.mse += b.mse;
        a.psnr += b.psnr;
        a.ssim += b.ssim;
      };
      addinto(out[size_t(s)].model, per_video[size_t(vid)][size_t(s)].model);
      addinto(out[size_t(s)].baseline, per_video[size_t(vid)][size_t(s)].baseline);
    }
  const double inv = 1.0 / double(testset.n());
  for (auto& row : out) {
    for (MetricRecord* r : {&row.model, &row.baseline}) {
      r->bce *= inv;
      r->mse *= inv;
      r->psnr *= inv;
      r->ssim *= inv;
    }
  }
  return out;
}

MetricRecord aggregate(std::span<const StepMetrics> steps, bool baseline) {
  if (steps.empty()) throw ContractError("aggregate: no rows");
  MetricRecord r;
  for (const auto& s : steps) {
    const MetricRecord& m = baseline ? s.baseline : s.model;
    r.bce += m.bce;
    r.mse += m.mse;
    r.psnr += m.psnr;
    r.ssim += m.ssim;
  }
  const double inv = 1.0 / double(steps.size());
  r.bce *= inv;
  r.mse *= inv;
  r.psnr *= inv;
  r.ssim *= inv;
  return r;
}

}  // namespace lmvp
