#pragma once

#include "mvp/common.hpp"
#include "mvp/rng.hpp"

#include <algorithm>
#include <vector>

namespace mvp {

// Reduced PMF-style pixel-space augmentation baseline for the timing
// comparison: mixup, cutmix and cutout over a batch of channel-major float
// images, each activated independently with probability 1/2 per call.
template <typename Scalar>
struct PixelBatch {
  std::vector<VectorX<Scalar>> images;  // flat 3*H*W, channel-major
  int height = 0;
  int width = 0;
};

template <typename Scalar>
void pixel_augment_batch(PixelBatch<Scalar>& batch, SplitRng& rng) {
  const int bs = static_cast<int>(batch.images.size());
  if (bs == 0) return;
  const int H = batch.height, W = batch.width;
  const Index plane = static_cast<Index>(H) * W;

  auto random_perm = [&]() {
    return rng.sample_without_replacement(bs, bs);
  };
  auto random_rect = [&](int& x0, int& y0, int& rw, int& rh) {
    const double lam = rng.uniform_real();
    rw = std::max(1, static_cast<int>(W * std::sqrt(1.0 - lam)));
    rh = std::max(1, static_cast<int>(H * std::sqrt(1.0 - lam)));
    x0 = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(W - rw + 1)));
    y0 = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(H - rh + 1)));
  };

  if (rng.uniform_real() < 0.5) {  // mixup
    const Scalar lam = static_cast<Scalar>(0.5 + 0.5 * rng.uniform_real());
    const std::vector<int> perm = random_perm();
    std::vector<VectorX<Scalar>> mixed(batch.images.size());
    for (int i = 0; i < bs; ++i)
      mixed[static_cast<std::size_t>(i)] =
          lam * batch.images[static_cast<std::size_t>(i)] +
          (Scalar(1) - lam) * batch.images[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    batch.images = std::move(mixed);
  }
  if (rng.uniform_real() < 0.5) {  // cutmix: paste a rectangle from a permuted partner
    const std::vector<int> perm = random_perm();
    int x0, y0, rw, rh;
    random_rect(x0, y0, rw, rh);
    std::vector<VectorX<Scalar>> src = batch.images;
    for (int i = 0; i < bs; ++i) {
      auto& dst = batch.images[static_cast<std::size_t>(i)];
      const auto& from = src[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + rh; ++y) {
          const Index off = c * plane + static_cast<Index>(y) * W + x0;
          dst.segment(off, rw) = from.segment(off, rw);
        }
    }
  }
  if (rng.uniform_real() < 0.5) {  // cutout: zero a random rectangle per image
    for (int i = 0; i < bs; ++i) {
      int x0, y0, rw, rh;
      random_rect(x0, y0, rw, rh);
      auto& dst = batch.images[static_cast<std::size_t>(i)];
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + rh; ++y)
          dst.segment(c * plane + static_cast<Index>(y) * W + x0, rw).setZero();
    }
  }
}

}  // namespace mvp
