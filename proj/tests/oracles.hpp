#pragma once

#include <anerf/image.hpp>
#include <cmath>
#include <vector>

namespace anerf::testing {

// Independent scalar-loop references for the image metrics.
inline double psnr_oracle(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return -10 * std::log10(s / a.data.size());
}

// Direct double loop over every window position with Gaussian weights.
inline double ssim_oracle(const Image& a, const Image& b) {
  const int win = 11;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  std::vector<double> g(win * win);
  double gs = 0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) {
      const double dy = y - 5, dx = x - 5;
      g[y * win + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      gs += g[y * win + x];
    }
  auto gray = [](const Image& im, int r, int c) {
    double s = 0;
    for (int k = 0; k < im.channels; ++k) s += im.at(r, c, k);
    return s / im.channels;
  };
  double total = 0;
  int count = 0;
  for (int r0 = 0; r0 + win <= a.height; ++r0) {
    for (int q0 = 0; q0 + win <= a.width; ++q0) {
      double mx = 0, my = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double w = g[y * win + x] / gs;
          mx += w * gray(a, r0 + y, q0 + x);
          my += w * gray(b, r0 + y, q0 + x);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double w = g[y * win + x] / gs;
          const double ex = gray(a, r0 + y, q0 + x) - mx, ey = gray(b, r0 + y, q0 + x) - my;
          vx += w * ex * ex;
          vy += w * ey * ey;
          cxy += w * ex * ey;
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace anerf::testing
