#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lmvp/adam.hpp"
#include "lmvp/data.hpp"
#include "lmvp/losses.hpp"
#include "lmvp/metrics.hpp"
#include "lmvp/model.hpp"

namespace lmvp {

struct TrainConfig {
  int clip_context = 3;  // c
  LossConfig loss;
  AdamHyper adam_dis, adam_guider, adam_gen;
  int batch_size = 8;
  int pretrain_iters = 300;
  int main_iters = 1500;
  int eval_interval = 500;
  uint64_t seed = 1;
  bool ablation = false;
  int base_width = 32;
  int filter_size = 5;
  int threads = 1;  // forward-only work (generation, evaluation); training is single-owner

  void validate(const DataConfig& data) const;
  ModelConfig model_config(int channels) const {
    return ModelConfig{channels, clip_context, base_width, filter_size, ablation};
  }
};

// What the rollout should put on the tape.
//   None:    plain forward; nothing will be differentiated.
//   Joint:   pretrain step (b): gradients reach theta_F, theta_M and theta_G
//            through each step's subgraph (frames and hidden states enter
//            each step as fixed inputs).
//   GenOnly: main-loop generator phase: the guider output and leaked feature
//            are detached before use, so only theta_G sees a gradient.
enum class GradScope { None, Joint, GenOnly };

// Per-video rollout record: teacher forcing on the conditioning prefix,
// autoregressive beyond it. Tape handles stay valid while the tape lives.
struct RolloutCache {
  std::vector<Tensor> frames;          // length T; real prefix then predictions
  std::vector<Tensor> predicted;       // x_hat for t = T0..T-1 (0-based), length T-T0
  std::vector<Tensor> fake_features;   // f_hat_t, guider steps t = c..T-2 (empty in ablation)
  std::vector<Tensor> guider_motion;   // m_hat_t, same indexing (empty in ablation)
  std::vector<Tensor> guider_hidden;   // hidden state after each guider step
  std::vector<Tensor> real_features;   // f_t on real clips, t = c..T-1 (when requested)
  std::vector<Tensor> motion_targets;  // m_t = f_{t+1}-f_t (when requested)

  std::vector<Var<float>> pred_vars;   // generator outputs on the tape
  Var<float> recons{}, teacher{}, gen_loss{};  // set when losses were requested
};

struct RolloutOptions {
  GradScope scope = GradScope::None;
  bool real_branch = false;  // also record f_t / m_t on the real frames
  bool losses = false;       // build recons/teacher/gen_loss nodes
  float gamma = 0.0f;        // teacher weight used for gen_loss
};

// `video` holds the T ground-truth frames as (C,H,W) tensors; the first t0
// of them condition the rollout.
RolloutCache rollout(Tape<float>& tape, std::span<const Tensor> video, int t0, const ModelVars& mv,
                     const ModelConfig& mcfg, const TrainConfig& cfg, const RolloutOptions& opt);

// Loss components of one iteration, as logged to the loss CSV.
struct PhaseReport {
  float loss_dis = 0.0f;
  float loss_recons = 0.0f;
  float loss_teacher = 0.0f;
  float loss_gen = 0.0f;
  float loss_guider = 0.0f;
};

// One pretrain iteration: (a) discriminator step on L_dis, (b) joint
// theta_F/theta_M/theta_G step on L_gen with gamma = 0.
PhaseReport pretrain_iteration(const VideoSet& train, std::span<const int> batch, Params& params,
                               AdamState& st_dis, AdamState& st_guider, AdamState& st_gen,
                               const TrainConfig& cfg, int64_t iter);

// One main-loop iteration: the three fix-and-update phases. Each phase
// mutates exactly its own parameter set.
PhaseReport train_iteration(const VideoSet& train, std::span<const int> batch, Params& params,
                            AdamState& st_dis, AdamState& st_guider, AdamState& st_gen,
                            const TrainConfig& cfg, int64_t iter);

// Fixed-budget pretraining over the whole schedule (testing convenience).
void pretrain(const VideoSet& train, const TrainConfig& cfg, Params& params, AdamState& st_dis,
              AdamState& st_guider, AdamState& st_gen, std::vector<PhaseReport>* log = nullptr);

// --- checkpointing -----------------------------------------------------------

struct Checkpoint {
  Params params;
  std::map<std::string, Tensor> moments;  // "<param>.m" / "<param>.v"
  uint64_t iteration = 0;
  uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const Params& params, const AdamState& st_dis, const AdamState& st_guider,
                           const AdamState& st_gen, uint64_t iteration, uint64_t seed);

// Rebuilds params and the three optimizer states from a checkpoint. The
// per-tensor Adam step counters are reconstructed from the iteration counter
// and the training schedule.
void restore_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg, Params& params, AdamState& st_dis,
                        AdamState& st_guider, AdamState& st_gen);

// --- evaluation ---------------------------------------------------------------

struct StepMetrics {
  MetricRecord model;
  MetricRecord baseline;  // last-frame copy
};

// Per-prediction-step metrics averaged over the test set, plus the
// last-frame baseline. Row s covers prediction step s+1.
std::vector<StepMetrics> evaluate(const VideoSet& testset, int t0, const Params& params, const TrainConfig& cfg);

MetricRecord aggregate(std::span<const StepMetrics> steps, bool baseline);

// Video frames as (C,H,W) tensors.
std::vector<Tensor> video_frames(const VideoSet& set, int video);

}  // namespace lmvp
