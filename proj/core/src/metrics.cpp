#include "anerf/metrics.hpp"

#include <cmath>

namespace anerf {

double psnr(const Image& pred, const Image& gt, double cap) {
  if (!pred.same_shape(gt)) throw ContractError("psnr: image shapes differ");
  double se = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(pred.data.size());
  if (mse == 0) return cap;
  return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> grayscale(const Image& img) {
  std::vector<double> g(static_cast<std::size_t>(img.height) * img.width, 0.0);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      double s = 0;
      for (int k = 0; k < img.channels; ++k) s += img.at(r, c, k);
      g[static_cast<std::size_t>(r) * img.width + c] = s / img.channels;
    }
  return g;
}

// Separable "valid" filtering of an h x w field with a 1D kernel.
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * x[static_cast<std::size_t>(r) * w + c + i];
      tmp[static_cast<std::size_t>(r) * ow + c] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(r + i) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = s;
    }
  return out;
}

}  // namespace

double ssim(const Image& pred, const Image& gt, const SsimOptions& o) {
  if (!pred.same_shape(gt)) throw ContractError("ssim: image shapes differ");
  if (pred.height < o.window || pred.width < o.window) {
    throw ContractError("ssim: image smaller than the " + std::to_string(o.window) + "-pixel window");
  }
  std::vector<double> k(static_cast<std::size_t>(o.window));
  double ks = 0;
  for (int i = 0; i < o.window; ++i) {
    const double d = i - (o.window - 1) / 2.0;
    k[i] = std::exp(-d * d / (2 * o.sigma * o.sigma));
    ks += k[i];
  }
  for (auto& v : k) v /= ks;

  const int h = pred.height, w = pred.width;
  const auto x = grayscale(pred), y = grayscale(gt);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
  const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + o.c1) * (2 * cxy + o.c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + o.c1) * (vx + vy + o.c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace anerf
