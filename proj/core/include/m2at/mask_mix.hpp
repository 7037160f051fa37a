#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "m2at/attack.hpp"
#include "m2at/nn.hpp"
#include "m2at/rng.hpp"
#include "m2at/tensor.hpp"

namespace m2at {

// Rectangle in pixel coordinates, half-open on both axes: a pixel (row, col)
// is inside iff x1 <= col < x2 and y1 <= row < y2. The half-open convention
// makes (x2-x1)(y2-y1) equal the mask popcount exactly.
struct MaskBox {
  std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// Corners from the area parameter: x1 uniform on {0..W} inclusive,
// x2 = min(W, round(W*sqrt(1-lambda1)) + x1); same for y with H.
// lambda1 = 1 gives a zero-size box, lambda1 = 0 at the origin the full image.
MaskBox sample_box(std::size_t H, std::size_t W, double lambda1, Rng& rng);

// [H,W] tensor with 1 exactly on the box.
Tensor make_mask(const MaskBox& box, std::size_t H, std::size_t W);

// (x2-x1)(y2-y1)/(H*W); equals popcount(make_mask)/(H*W) exactly.
double area_ratio(const MaskBox& box, std::size_t H, std::size_t W);

// xi = x + delta.M, xi_bar = x + delta.(1-M); the [H,W] mask broadcasts over
// channels. x and delta are [c,h,w]. Rejects masks with entries outside {0,1}.
std::pair<Tensor, Tensor> apply_mask(const Tensor& x, const Tensor& delta,
                                     const Tensor& mask);

// t     = l1' * onehot(y) + (1-l1') * s_bar
// t_bar = l1' * s_bar     + (1-l1') * onehot(y)
// where s_bar is 0 at y and 1/(K-1) elsewhere.
std::pair<Tensor, Tensor> smooth_labels(int y, double lambda1_prime, std::size_t K);

struct PerturbedPair {
  Tensor xi;      // [c,h,w]
  Tensor xi_bar;  // [c,h,w]
  Tensor t;       // [K]
  Tensor t_bar;   // [K]
  double lambda1_prime = 0.0;
};

struct MixedSample {
  Tensor x_tilde;  // [c,h,w]
  Tensor y_tilde;  // [K]
  double lambda2 = 0.0;
};

// x~ = l2 xi + (1-l2) xi_bar, y~ likewise from t, t_bar.
MixedSample mix(const PerturbedPair& pair, double lambda2);

// Beta(alpha, alpha) via Rng::beta_symmetric; alpha = 1 is exactly uniform.
double sample_beta(double alpha, Rng& rng);

// ---- whole-batch composition of the above ----

struct M2atSampleTrace {
  double lambda1 = 0.0;
  MaskBox box;
  double lambda1_prime = 0.0;
  double lambda2 = 0.0;
};

struct M2atBatch {
  Tensor images;                    // [n,c,h,w]
  Tensor targets;                   // [n,K]
  std::vector<M2atSampleTrace> trace;
  std::vector<int> failed_samples;  // from pgd
};

struct M2atOptions {
  std::optional<double> force_lambda1;  // pin the area parameter (tests, limits)
  const Tensor* fixed_delta = nullptr;  // bypass the attack with a given delta
};

// Per sample: delta from pgd (or fixed), lambda1 ~ U[0,1], box, mask, area
// ratio, smoothed labels, lambda2 ~ Beta(alpha,alpha), mix. All randomness
// comes from per-sample substreams of rng, so batch scheduling cannot change
// any output. The attack itself consumes rng.substream(1); sample draws use
// rng.substream(2, i).
M2atBatch m2at_batch(const ModelParams& params, const Tensor& batch,
                     const std::vector<int>& labels, const AttackConfig& atk,
                     double beta_alpha, Rng& rng, const M2atOptions& opts = {});

}  // namespace m2at
