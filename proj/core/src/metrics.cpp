#include "lmvp/metrics.hpp"

#include <array>
#include <cmath>

namespace lmvp {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;  // (K2*L)^2

const std::array<double, kWin * kWin>& gaussian_window() {
  static const std::array<double, kWin * kWin> win = [] {
    std::array<double, kWin * kWin> w{};
    double sum = 0.0;
    for (int y = 0; y < kWin; ++y)
      for (int x = 0; x < kWin; ++x) {
        double dy = y - (kWin - 1) / 2.0, dx = x - (kWin - 1) / 2.0;
        double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        w[size_t(y) * kWin + x] = v;
        sum += v;
      }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return win;
}

}  // namespace

double metric_bce(const Tensor& x, const Tensor& x_hat, double eps) {
  check_same_shape(x, x_hat, "metric_bce");
  if (x.numel() == 0) throw ContractError("metric_bce: empty tensors");
  double acc = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    double t = x[i];
    double p = std::min(std::max(double(x_hat[i]), eps), 1.0 - eps);
    acc += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return acc / double(x.numel());
}

double metric_mse(const Tensor& x, const Tensor& x_hat) {
  check_same_shape(x, x_hat, "metric_mse");
  if (x.numel() == 0) throw ContractError("metric_mse: empty tensors");
  double acc = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    double d = double(x[i]) - double(x_hat[i]);
    acc += d * d;
  }
  return acc / double(x.numel());
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double metric_ssim(const Tensor& x, const Tensor& x_hat) {
  check_same_shape(x, x_hat, "metric_ssim");
  if (x.rank() != 3) throw ContractError(cat("metric_ssim: need (C,H,W), got ", shape_str(x.shape())));
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < kWin || w < kWin)
    throw ContractError(cat("metric_ssim: image ", h, "x", w, " smaller than the ", kWin, "x", kWin, " window"));
  const auto& win = gaussian_window();
  double total = 0.0;
  size_t count = 0;
  for (int ci = 0; ci < c; ++ci) {
    const float* a = x.data() + size_t(ci) * h * w;
    const float* b = x_hat.data() + size_t(ci) * h * w;
    for (int y0 = 0; y0 + kWin <= h; ++y0)
      for (int x0 = 0; x0 + kWin <= w; ++x0) {
        double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < kWin; ++dy)
          for (int dx = 0; dx < kWin; ++dx) {
            double wgt = win[size_t(dy) * kWin + dx];
            double va = a[size_t(y0 + dy) * w + size_t(x0 + dx)];
            double vb = b[size_t(y0 + dy) * w + size_t(x0 + dx)];
            mu_a += wgt * va;
            mu_b += wgt * vb;
            saa += wgt * va * va;
            sbb += wgt * vb * vb;
            sab += wgt * va * vb;
          }
        double var_a = saa - mu_a * mu_a;
        double var_b = sbb - mu_b * mu_b;
        double cov = sab - mu_a * mu_b;
        total += ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
                 ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
        ++count;
      }
  }
  return total / double(count);
}

MetricRecord evaluate_metrics(std::span<const Tensor> x, std::span<const Tensor> x_hat) {
  if (x.empty() || x.size() != x_hat.size())
    throw ContractError(cat("evaluate_metrics: frame count mismatch, ", x.size(), " vs ", x_hat.size()));
  MetricRecord r;
  for (size_t i = 0; i < x.size(); ++i) {
    r.bce += metric_bce(x[i], x_hat[i]);
    double mse = metric_mse(x[i], x_hat[i]);
    r.mse += mse;
    r.psnr += psnr_from_mse(mse);
    r.ssim += metric_ssim(x[i], x_hat[i]);
  }
  double n = double(x.size());
  r.bce /= n;
  r.mse /= n;
  r.psnr /= n;
  r.ssim /= n;
  return r;
}

}  // namespace lmvp
