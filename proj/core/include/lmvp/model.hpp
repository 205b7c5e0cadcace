#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lmvp/tape.hpp"
#include "lmvp/tensor.hpp"

namespace lmvp {

using Params = std::map<std::string, Tensor>;

// Architecture knobs. Widths scale off base_width; the leaked feature map
// carries fch() channels at a quarter of the frame resolution.
struct ModelConfig {
  int channels = 1;      // frame channels C
  int clip_context = 3;  // c; clips hold c+1 frames
  int base_width = 32;
  int filter_size = 5;   // K, odd
  bool ablation = false; // no-guider mode: drop the motion guider entirely

  int fch() const { return 2 * base_width; }
  int clip_channels() const { return (clip_context + 1) * channels; }
};

// Fresh parameters, uniform in [-a, a] with a = sqrt(6/(fan_in+fan_out)),
// zero biases. Each tensor draws from its own stream keyed by (seed, name),
// so initialization is order-independent and bit-reproducible.
Params init_params(const ModelConfig& cfg, uint64_t seed);

// Parameter set partition. Every trainable tensor belongs to exactly one.
inline bool in_theta_f(const std::string& name) { return name.rfind("dis.f.", 0) == 0; }
inline bool in_theta_c(const std::string& name) { return name.rfind("dis.head.", 0) == 0; }
inline bool in_theta_d(const std::string& name) { return in_theta_f(name) || in_theta_c(name); }
inline bool in_theta_m(const std::string& name) { return name.rfind("guider.", 0) == 0; }
inline bool in_theta_g(const std::string& name) { return name.rfind("gen.", 0) == 0; }

// --- per-network bound variables -------------------------------------------

using FVar = Var<float>;

struct ExtractorVars {  // theta_F
  FVar w1, b1, w2, b2, w3, b3;
};
struct HeadVars {  // theta_C
  FVar cw, cb, fw, fb;
};
struct GuiderVars {  // theta_M
  GruVars<float> gru;
  FVar ow, ob;
};
struct GenVars {  // theta_G
  FVar s1w, s1b, s2w, s2b, s3w, s3b;  // spatial encoder
  FVar mw, mb;                        // motion encoder
  FVar f1w, f1b, f2w, f2b, pw, pb;    // filter decoder + 1x1 projection
};

// One parameter set bound onto a tape, with names aligned to vars so
// backprop results can be turned back into a name->gradient map.
struct BoundSet {
  std::vector<std::string> names;
  std::vector<FVar> vars;
};

struct ModelVars {
  ExtractorVars f;
  HeadVars head;
  GuiderVars guider;  // unbound in ablation mode
  GenVars gen;
  BoundSet theta_f, theta_c, theta_m, theta_g;
  std::vector<FVar> theta_d() const;  // theta_F + theta_C
};

// Registers every parameter as a tape leaf and wires up the named handles.
ModelVars bind_model(Tape<float>& tape, const Params& params, const ModelConfig& cfg);

// --- network forward passes -------------------------------------------------

// F: leaked feature extractor. clip ((c+1)*C,H,W) -> (fch,H/4,W/4).
FVar extract_features(Tape<float>& t, FVar clip, const ExtractorVars& f);

// D = head(F(clip)): probability that the clip is real, in (0,1), shape (1).
FVar discriminate(Tape<float>& t, FVar clip, const ExtractorVars& f, const HeadVars& head);

// M: one recurrent step. Returns (predicted motion feature, next hidden).
std::pair<FVar, FVar> guide_motion(Tape<float>& t, FVar feat, FVar hidden, const GuiderVars& g);

// G components.
FVar encode_spatial(Tape<float>& t, FVar frame, const GenVars& g);   // (C,H,W) -> (fch,H/4,W/4)
FVar encode_motion(Tape<float>& t, FVar motion, const GenVars& g);   // (fch,h,w) -> (fch,h,w)
FVar make_filters(Tape<float>& t, FVar f_spatial, FVar f_motion, const GenVars& g);  // -> (K*K,H,W)

// Full generator step: dynamic local filtering of the current frame under
// the guidance of the predicted motion feature. Output stays in [0,1].
FVar predict_next(Tape<float>& t, FVar frame, FVar motion, const GenVars& g);

// No-guider variant: the motion feature is replaced by the difference of
// the spatial encodings of the last two frames.
FVar predict_next_ablation(Tape<float>& t, FVar frame, FVar prev_frame, const GenVars& g);

}  // namespace lmvp
