#include "lmvp/losses.hpp"

namespace lmvp {

void LossConfig::validate() const {
  std::string bad;
  auto flag = [&](const char* what) {
    if (!bad.empty()) bad += "; ";
    bad += what;
  };
  if (!(gamma >= 0.0f)) flag("gamma must be >= 0");
  if (!(lambda_gdl >= 0.0f)) flag("lambda_gdl must be >= 0");
  if (!(alpha_gdl >= 1.0f)) flag("alpha_gdl must be >= 1");
  if (!(prob_eps > 0.0f && prob_eps < 0.5f)) flag("prob_eps must lie in (0, 0.5)");
  if (!bad.empty()) throw ConfigError(cat("invalid loss config: ", bad));
}

template <class S>
Var<S> loss_dis(Tape<S>& t, std::span<const Var<S>> real_probs, std::span<const Var<S>> fake_probs, S eps) {
  if (real_probs.empty() || fake_probs.empty())
    throw ContractError(cat("loss_dis: need non-empty probability lists, got ", real_probs.size(), " real / ",
                            fake_probs.size(), " fake"));
  std::vector<Var<S>> terms;
  std::vector<S> coeffs;
  terms.reserve(real_probs.size() + fake_probs.size());
  for (const auto& p : real_probs) {
    terms.push_back(t.log(t.clamp(p, eps, S(1) - eps)));
    coeffs.push_back(S(-1) / S(real_probs.size()));
  }
  for (const auto& p : fake_probs) {
    terms.push_back(t.log(t.one_minus(t.clamp(p, eps, S(1) - eps))));
    coeffs.push_back(S(-1) / S(fake_probs.size()));
  }
  return t.affine(terms, coeffs);
}

template <class S>
std::vector<BasicTensor<S>> motion_target(std::span<const BasicTensor<S>> f_seq) {
  if (f_seq.size() < 2)
    throw ContractError(cat("motion_target: need at least 2 feature maps, got ", f_seq.size()));
  std::vector<BasicTensor<S>> out;
  out.reserve(f_seq.size() - 1);
  for (size_t i = 0; i + 1 < f_seq.size(); ++i) {
    check_same_shape(f_seq[i], f_seq[i + 1], "motion_target");
    BasicTensor<S> d = f_seq[i + 1];
    const S* a = f_seq[i].data();
    for (size_t j = 0; j < d.numel(); ++j) d[j] -= a[j];
    out.push_back(std::move(d));
  }
  return out;
}

template <class S>
Var<S> loss_guider_learner(Tape<S>& t, std::span<const Var<S>> m_hat, std::span<const BasicTensor<S>> m_target) {
  if (m_hat.empty() || m_hat.size() != m_target.size())
    throw ContractError(cat("loss_guider_learner: sequence length mismatch, ", m_hat.size(), " predictions vs ",
                            m_target.size(), " targets"));
  std::vector<Var<S>> terms;
  std::vector<S> coeffs(m_hat.size(), S(1));
  terms.reserve(m_hat.size());
  for (size_t i = 0; i < m_hat.size(); ++i)
    terms.push_back(t.sq_sum_diff(m_hat[i], t.constant(m_target[i])));
  return t.affine(terms, coeffs);
}

template <class S>
Var<S> teacher_term(Tape<S>& t, Var<S> f_extended, const BasicTensor<S>& f_hat, const BasicTensor<S>& m_hat) {
  check_same_shape(f_hat, m_hat, "teacher_term");
  BasicTensor<S> ref = f_hat;
  const S* m = m_hat.data();
  for (size_t i = 0; i < ref.numel(); ++i) ref[i] += m[i];
  return t.sq_sum_diff(f_extended, t.constant(std::move(ref)));
}

template <class S>
Var<S> loss_recons(Tape<S>& t, std::span<const Var<S>> real, std::span<const Var<S>> pred, const LossConfig& cfg) {
  if (real.empty() || real.size() != pred.size())
    throw ContractError(cat("loss_recons: frame count mismatch, ", real.size(), " real vs ", pred.size(),
                            " predicted"));
  std::vector<Var<S>> terms;
  std::vector<S> coeffs;
  const S inv = S(1) / S(real.size());
  for (size_t i = 0; i < real.size(); ++i) {
    terms.push_back(cfg.recon == LossConfig::Recon::Bce
                        ? t.bce_mean(pred[i], real[i], S(cfg.prob_eps))
                        : t.mse_mean(pred[i], real[i]));
    coeffs.push_back(inv);
    if (cfg.lambda_gdl != 0.0f) {
      terms.push_back(t.gdl(pred[i], real[i], S(cfg.alpha_gdl)));
      coeffs.push_back(S(cfg.lambda_gdl) * inv);
    }
  }
  return t.affine(terms, coeffs);
}

template <class S>
Var<S> loss_gen(Tape<S>& t, Var<S> recons, Var<S> teacher, S gamma) {
  std::array<Var<S>, 2> terms{recons, teacher};
  std::array<S, 2> coeffs{S(1), gamma};
  return t.affine(terms, coeffs);
}

#define LMVP_INSTANTIATE(S)                                                                                  \
  template Var<S> loss_dis<S>(Tape<S>&, std::span<const Var<S>>, std::span<const Var<S>>, S);               \
  template std::vector<BasicTensor<S>> motion_target<S>(std::span<const BasicTensor<S>>);                   \
  template Var<S> loss_guider_learner<S>(Tape<S>&, std::span<const Var<S>>, std::span<const BasicTensor<S>>); \
  template Var<S> teacher_term<S>(Tape<S>&, Var<S>, const BasicTensor<S>&, const BasicTensor<S>&);          \
  template Var<S> loss_recons<S>(Tape<S>&, std::span<const Var<S>>, std::span<const Var<S>>,                \
                                 const LossConfig&);                                                         \
  template Var<S> loss_gen<S>(Tape<S>&, Var<S>, Var<S>, S);

LMVP_INSTANTIATE(float)
LMVP_INSTANTIATE(double)
#undef LMVP_INSTANTIATE

}  // namespace lmvp
