#pragma once

#include <span>
#include <vector>

#include "lmvp/tape.hpp"
#include "lmvp/tensor.hpp"

namespace lmvp {

struct LossConfig {
  enum class Recon { Bce, Mse };

  float gamma = 0.1f;       // teacher-loss weight
  float lambda_gdl = 1.0f;  // GDL weight
  float alpha_gdl = 1.0f;   // GDL exponent
  Recon recon = Recon::Bce;
  float prob_eps = 1e-7f;   // clamp for every log/probability term

  void validate() const;
};

// Discriminator loss: -mean(log p_real) - mean(log(1 - p_fake)), with the
// probabilities clamped to [eps, 1-eps] in-graph.
template <class S>
Var<S> loss_dis(Tape<S>& t, std::span<const Var<S>> real_probs, std::span<const Var<S>> fake_probs, S eps);

// m_t = f_{t+1} - f_t, elementwise, length n-1. Real-video features only.
template <class S>
std::vector<BasicTensor<S>> motion_target(std::span<const BasicTensor<S>> f_seq);

// Learner loss: sum_t ||m_hat_t - m_t||_2^2 (targets enter as constants).
template <class S>
Var<S> loss_guider_learner(Tape<S>& t, std::span<const Var<S>> m_hat, std::span<const BasicTensor<S>> m_target);

// One teacher-loss term: ||f_extended - (f_hat + m_hat)||_2^2 where the
// reference tensors are detached inputs. The gradient reaches the generator
// only through f_extended (the feature of the clip holding the new frame).
template <class S>
Var<S> teacher_term(Tape<S>& t, Var<S> f_extended, const BasicTensor<S>& f_hat, const BasicTensor<S>& m_hat);

// Reconstruction loss over a window of frames: mean pixel term (BCE or MSE)
// plus lambda * mean GDL, both averaged over frames.
template <class S>
Var<S> loss_recons(Tape<S>& t, std::span<const Var<S>> real, std::span<const Var<S>> pred, const LossConfig& cfg);

// Total generator loss: recons + gamma * teacher.
template <class S>
Var<S> loss_gen(Tape<S>& t, Var<S> recons, Var<S> teacher, S gamma);

}  // namespace lmvp
