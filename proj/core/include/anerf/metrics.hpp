#pragma once

#include "anerf/image.hpp"

namespace anerf {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all pixels and channels; MSE = 0 gives the cap.
/// Throws ContractError on a shape mismatch.
double psnr(const Image& pred, const Image& gt, double cap = kPsnrCap);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean local SSIM of the channel-mean grayscale images over all valid window
/// positions. Throws ContractError if the image is smaller than the window.
double ssim(const Image& pred, const Image& gt, const SsimOptions& options = {});

}  // namespace anerf
