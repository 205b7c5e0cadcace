#pragma once

#include <span>

#include "lmvp/tensor.hpp"

namespace lmvp {

// Evaluation metrics for one comparison (a frame or a window of frames).
struct MetricRecord {
  double bce = 0.0;   // per-pixel binary cross-entropy, clamped logs
  double mse = 0.0;   // per-pixel mean squared error
  double psnr = 0.0;  // 10*log10(1/mse), capped at 99 dB
  double ssim = 0.0;  // 11x11 Gaussian window, sigma 1.5, K1=.01, K2=.03, L=1
};

double metric_bce(const Tensor& x, const Tensor& x_hat, double eps = 1e-7);
double metric_mse(const Tensor& x, const Tensor& x_hat);
double psnr_from_mse(double mse);
// Mean SSIM over valid window positions, channels averaged. Needs
// min(H,W) >= 11.
double metric_ssim(const Tensor& x, const Tensor& x_hat);

// All four metrics averaged over a window of (C,H,W) frames.
MetricRecord evaluate_metrics(std::span<const Tensor> x, std::span<const Tensor> x_hat);

}  // namespace lmvp
