#include "fddlab/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::eval {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + num::to_string(a.shape()) + " and " +
                     num::to_string(b.shape()) + " differ");
  }
}

double mse_to_psnr(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(4.0 / mse));
}

double mse_range(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(n);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b, bool* zero = nullptr) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) {
    if (zero) *zero = true;
    return 0.0;
  }
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  require_same(a, b, "psnr");
  return mse_to_psnr(mse_range(a.ptr(), b.ptr(), a.numel()));
}

std::vector<double> per_frame_psnr(const Tensor& a, const Tensor& b) {
  require_same(a, b, "per_frame_psnr");
  const int F = a.dim(0);
  const std::size_t per = a.numel() / F;
  std::vector<double> out(F);
  for (int f = 0; f < F; ++f) out[f] = mse_to_psnr(mse_range(a.ptr() + f * per, b.ptr() + f * per, per));
  return out;
}

FeatureFn backbone_features(const models::ParamSet& theta, const models::BackboneConfig& cfg) {
  return [&theta, cfg](const Tensor& frames) {
    num::NoTapeScope off;
    return models::feature_net(theta, cfg, frames);
  };
}

Pooled pooled_features(const FeatureFn& features, const Tensor& frames) {
  // One frame per call: batched GEMM may round a row differently depending
  // on its position, and equal frames must give equal features.
  std::vector<Tensor> per;
  for (int n = 0; n < frames.dim(0); ++n) per.push_back(features(num::slice(frames, 0, n, 1)));
  const Tensor f = num::concat(std::span<const Tensor>(per), 0);
  if (f.rank() != 4) throw ShapeError("pooled_features: expected [N,K,h,w], got " + num::to_string(f.shape()));
  const int N = f.dim(0), K = f.dim(1), h = f.dim(2), w = f.dim(3);
  // The outer ring of the map mostly encodes the zero padding, which is the
  // same for every frame; it is dropped when the map is large enough.
  const int by = h >= 4 ? 1 : 0, bx = w >= 4 ? 1 : 0;
  const int ih = h - 2 * by, iw = w - 2 * bx;
  const int ph = std::max(1, ih / 2), pw = std::max(1, iw / 2);
  const int sy = ih / ph, sx = iw / pw;
  Pooled pooled{std::vector<std::vector<double>>(N, std::vector<double>(static_cast<std::size_t>(K) * ph * pw, 0.0)),
                K, ph * pw};
  auto& out = pooled.rows;
  const float* p = f.ptr();
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) {
      for (int y = 0; y < ph * sy; ++y) {
        for (int x = 0; x < pw * sx; ++x) {
          out[n][(static_cast<std::size_t>(k) * ph + y / sy) * pw + x / sx] +=
              p[((static_cast<std::size_t>(n) * K + k) * h + y + by) * w + x + bx] / double(sy * sx);
        }
      }
    }
  }
  return pooled;
}

double temporal_consistency(const Tensor& video, const FeatureFn& features) {
  if (video.rank() != 4 || video.dim(0) < 2) {
    throw std::invalid_argument("temporal_consistency: needs at least 2 frames, got shape " +
                                num::to_string(video.shape()));
  }
  Pooled pooled = pooled_features(features, video);
  auto& rows = pooled.rows;
  const std::size_t K = pooled.channels, cells = pooled.cells;
  for (auto& r : rows) {
    for (std::size_t k = 0; k < K; ++k) {
      double m = 0.0;
      for (std::size_t c = 0; c < cells; ++c) m += r[k * cells + c];
      m /= static_cast<double>(cells);
      for (std::size_t c = 0; c < cells; ++c) r[k * cells + c] -= m;
    }
  }
  double total = 0.0;
  for (std::size_t f = 0; f + 1 < rows.size(); ++f) {
    // Identical frames score exactly 1, including flat ones whose centered
    // features vanish.
    total += rows[f] == rows[f + 1] ? 1.0 : cosine(rows[f], rows[f + 1]);
  }
  return total / static_cast<double>(rows.size() - 1);
}

Directional directional_agreement(const Tensor& input, const Tensor& output, const Tensor& oracle,
                                  const FeatureFn& features) {
  require_same(input, output, "directional_agreement");
  require_same(input, oracle, "directional_agreement");
  auto flat = [&](const Tensor& v) {
    std::vector<double> out;
    for (const auto& r : pooled_features(features, v).rows) out.insert(out.end(), r.begin(), r.end());
    return out;
  };
  const auto fi = flat(input), fo = flat(output), fr = flat(oracle);
  std::vector<double> d_out(fi.size()), d_ref(fi.size());
  for (std::size_t i = 0; i < fi.size(); ++i) {
    d_out[i] = fo[i] - fi[i];
    d_ref[i] = fr[i] - fi[i];
  }
  Directional r;
  r.value = cosine(d_out, d_ref, &r.zero_delta);
  if (!r.zero_delta && d_out == d_ref) r.value = 1.0;
  return r;
}

double unchanged_region_mse(const Tensor& output, const Tensor& oracle, const Tensor& mask) {
  require_same(output, oracle, "unchanged_region_mse");
  const int F = output.dim(0), C = output.dim(1), H = output.dim(2), W = output.dim(3);
  if (mask.shape() != num::Shape{F, 1, H, W}) {
    throw ShapeError("unchanged_region_mse: mask " + num::to_string(mask.shape()) + " does not match " +
                     num::to_string(output.shape()));
  }
  double s = 0.0;
  std::size_t n = 0;
  for (int f = 0; f < F; ++f) {
    for (int p = 0; p < H * W; ++p) {
      if (mask.ptr()[static_cast<std::size_t>(f) * H * W + p] != 0.0f) continue;
      for (int c = 0; c < C; ++c) {
        const std::size_t i = (static_cast<std::size_t>(f) * C + c) * H * W + p;
        const double d = static_cast<double>(output.ptr()[i]) - oracle.ptr()[i];
        s += d * d;
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

}  // namespace fddlab::eval
