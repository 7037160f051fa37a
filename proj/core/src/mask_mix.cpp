#include "m2at/mask_mix.hpp"

#include <cmath>
#include <stdexcept>

namespace m2at {

MaskBox sample_box(std::size_t H, std::size_t W, double lambda1, Rng& rng) {
  if (H < 1 || W < 1) throw std::invalid_argument("sample_box: empty image");
  if (!(lambda1 >= 0.0 && lambda1 <= 1.0))
    throw std::invalid_argument("sample_box: lambda1 must be in [0,1], got " +
                                std::to_string(lambda1));
  const double side = std::sqrt(1.0 - lambda1);
  // corners are integers: round the scaled side, clip at the far edge
  const std::size_t sw = std::size_t(std::llround(double(W) * side));
  const std::size_t sh = std::size_t(std::llround(double(H) * side));
  MaskBox b;
  b.x1 = rng.uniform_int(W);  // inclusive upper end: W itself is attainable
  b.y1 = rng.uniform_int(H);
  b.x2 = std::min(W, b.x1 + sw);
  b.y2 = std::min(H, b.y1 + sh);
  return b;
}

namespace {

void check_box(const MaskBox& b, std::size_t H, std::size_t W) {
  if (b.x1 > b.x2 || b.x2 > W || b.y1 > b.y2 || b.y2 > H)
    throw std::invalid_argument("mask: box (" + std::to_string(b.x1) + "," +
                                std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
                                std::to_string(b.y2) + ") invalid for " +
                                std::to_string(H) + "x" + std::to_string(W));
}

}  // namespace

Tensor make_mask(const MaskBox& box, std::size_t H, std::size_t W) {
  check_box(box, H, W);
  Tensor m = Tensor::zeros({H, W});
  for (std::size_t y = box.y1; y < box.y2; ++y)
    for (std::size_t x = box.x1; x < box.x2; ++x) m(y, x) = 1.0f;
  return m;
}

double area_ratio(const MaskBox& box, std::size_t H, std::size_t W) {
  check_box(box, H, W);
  return double((box.x2 - box.x1) * (box.y2 - box.y1)) / double(H * W);
}

std::pair<Tensor, Tensor> apply_mask(const Tensor& x, const Tensor& delta,
                                     const Tensor& mask) {
  detail::check_same_shape(x, delta, "apply_mask");
  if (x.ndim() != 3)
    throw std::invalid_argument("apply_mask: expects [c,h,w], got " + shape_str(x.shape));
  if (mask.ndim() != 2 || mask.extent(0) != x.extent(1) || mask.extent(1) != x.extent(2))
    throw std::invalid_argument("apply_mask: mask " + shape_str(mask.shape) +
                                " does not cover image " + shape_str(x.shape));
  for (const float v : mask.data)
    if (v != 0.0f && v != 1.0f)
      throw std::invalid_argument("apply_mask: non-binary mask");

  const std::size_t c = x.extent(0), hw = mask.numel();
  Tensor xi = x;
  Tensor xi_bar = x;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t off = ch * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      if (mask.data[p] == 1.0f) xi.data[off + p] += delta.data[off + p];
      else xi_bar.data[off + p] += delta.data[off + p];
    }
  }
  return {std::move(xi), std::move(xi_bar)};
}

std::pair<Tensor, Tensor> smooth_labels(int y, double lambda1_prime, std::size_t K) {
  if (K < 2) throw std::invalid_argument("smooth_labels: needs at least 2 classes");
  if (y < 0 || std::size_t(y) >= K)
    throw std::invalid_argument("smooth_labels: label out of range");
  if (!(lambda1_prime >= 0.0 && lambda1_prime <= 1.0))
    throw std::invalid_argument("smooth_labels: area ratio must be in [0,1]");
  const double l = lambda1_prime;
  const double off = 1.0 / double(K - 1);
  Tensor t({K}), t_bar({K});
  for (std::size_t j = 0; j < K; ++j) {
    if (j == std::size_t(y)) {
      t.data[j] = float(l);
      t_bar.data[j] = float(1.0 - l);
    } else {
      t.data[j] = float((1.0 - l) * off);
      t_bar.data[j] = float(l * off);
    }
  }
  return {std::move(t), std::move(t_bar)};
}

MixedSample mix(const PerturbedPair& pair, double lambda2) {
  if (!(lambda2 >= 0.0 && lambda2 <= 1.0))
    throw std::invalid_argument("mix: lambda2 must be in [0,1]");
  detail::check_same_shape(pair.xi, pair.xi_bar, "mix");
  detail::check_same_shape(pair.t, pair.t_bar, "mix labels");
  const float l = float(lambda2);
  const float lb = float(1.0 - lambda2);
  MixedSample out;
  out.lambda2 = lambda2;
  out.x_tilde = Tensor(pair.xi.shape);
  for (std::size_t i = 0; i < out.x_tilde.numel(); ++i)
    out.x_tilde.data[i] = l * pair.xi.data[i] + lb * pair.xi_bar.data[i];
  out.y_tilde = Tensor(pair.t.shape);
  for (std::size_t i = 0; i < out.y_tilde.numel(); ++i)
    out.y_tilde.data[i] = l * pair.t.data[i] + lb * pair.t_bar.data[i];
  return out;
}

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("sample_beta: alpha must be > 0");
  return rng.beta_symmetric(alpha);
}

M2atBatch m2at_batch(const ModelParams& params, const Tensor& batch,
                     const std::vector<int>& labels, const AttackConfig& atk,
                     double beta_alpha, Rng& rng, const M2atOptions& opts) {
  if (batch.ndim() != 4 || batch.extent(0) != labels.size())
    throw std::invalid_argument("m2at_batch: batch " + shape_str(batch.shape) +
                                " does not match " + std::to_string(labels.size()) +
                                " labels");
  if (!(beta_alpha > 0.0))
    throw std::invalid_argument("m2at_batch: beta alpha must be > 0");
  const std::size_t n = batch.extent(0), c = batch.extent(1);
  const std::size_t h = batch.extent(2), w = batch.extent(3);
  const std::size_t chw = c * h * w;
  const std::size_t K = params.config.num_classes;

  Tensor delta;
  M2atBatch out;
  double budget;  // what mixing must never amplify
  bool unit_clamp;
  if (opts.fixed_delta) {
    detail::check_same_shape(*opts.fixed_delta, batch, "m2at_batch delta");
    delta = *opts.fixed_delta;
    budget = 0.0;
    for (const float v : delta.data) budget = std::max(budget, double(std::abs(v)));
    unit_clamp = false;  // pure-algebra mode: keep the given delta's range
  } else {
    Rng atk_rng = rng.substream(1);
    AttackResult res = pgd(params, batch, labels, atk, &atk_rng);
    delta = std::move(res.delta);
    out.failed_samples = std::move(res.failed_samples);
    budget = atk.epsilon;
    unit_clamp = atk.clamp_valid_range;
  }

  out.images = Tensor(batch.shape);
  out.targets = Tensor({n, K});
  out.trace.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    Rng sub = rng.substream(2, s);
    double l1 = sub.uniform();  // always drawn, so forcing it leaves the
    if (opts.force_lambda1) l1 = *opts.force_lambda1;  // box/beta draws aligned
    const MaskBox box = sample_box(h, w, l1, sub);
    const double l1p = area_ratio(box, h, w);

    Tensor xs({c, h, w}, {batch.data.begin() + s * chw, batch.data.begin() + (s + 1) * chw});
    Tensor ds({c, h, w}, {delta.data.begin() + s * chw, delta.data.begin() + (s + 1) * chw});
    auto [xi, xi_bar] = apply_mask(xs, ds, make_mask(box, h, w));
    auto [t, t_bar] = smooth_labels(labels[s], l1p, K);
    const double l2 = sample_beta(beta_alpha, sub);
    PerturbedPair pair{std::move(xi), std::move(xi_bar), std::move(t), std::move(t_bar), l1p};
    MixedSample ms = mix(pair, l2);

    // mixing is convex so it cannot leave the ball mathematically; the
    // re-projection squeezes out float rounding so the budget holds exactly
    const Tensor safe = project_linf(ms.x_tilde, xs, budget, unit_clamp);
    std::copy(safe.data.begin(), safe.data.end(), out.images.data.begin() + s * chw);
    std::copy(ms.y_tilde.data.begin(), ms.y_tilde.data.end(),
              out.targets.data.begin() + s * K);
    out.trace[s] = {l1, box, l1p, l2};
  }
  return out;
}

}  // namespace m2at
