#include "m2at/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace m2at {

const char* loss_name(LossKind kind) {
  return kind == LossKind::CrossEntropy ? "cross-entropy" : "margin";
}

LossKind loss_from_string(const std::string& s) {
  if (s == "cross-entropy" || s == "xent") return LossKind::CrossEntropy;
  if (s == "margin") return LossKind::Margin;
  throw std::invalid_argument("unknown loss '" + s + "' (expected cross-entropy | margin)");
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw std::invalid_argument("attack: epsilon must be in (0,1], got " +
                                std::to_string(epsilon));
  if (!(step_size > 0.0 && step_size <= epsilon))
    throw std::invalid_argument("attack: step size must satisfy 0 < alpha <= epsilon, got " +
                                std::to_string(step_size));
  if (rounds < 1)
    throw std::invalid_argument("attack: rounds must be >= 1");
}

Tensor input_gradient(const ModelParams& params, const Tensor& batch,
                      const std::vector<int>& labels, LossKind loss) {
  if (batch.ndim() != 4 || batch.extent(0) != labels.size())
    throw std::invalid_argument("input_gradient: batch " + shape_str(batch.shape) +
                                " does not match " + std::to_string(labels.size()) +
                                " labels");
  Graph g;
  const ModelNodes mn = bind_model(g, params, batch);
  const NodeId targets = g.leaf(one_hot(labels, params.config.num_classes));
  const NodeId loss_id = loss == LossKind::CrossEntropy
                             ? g.softmax_cross_entropy(mn.logits, targets)
                             : g.margin_loss(mn.logits, targets);
  const NodeId wrt[] = {mn.input};
  // finiteness is judged per sample by the callers, not wholesale
  auto grads = g.backward(loss_id, wrt, {.check_finite = false});
  return std::move(grads.at(mn.input));
}

namespace {

// Clamp one pixel into the ball. The delta is clamped in double where the
// epsilon bound is exact; the final float rounding can overshoot by one ulp,
// which the nextafter pullback undoes, so |result - origin| <= eps holds in
// double precision too.
float ball_clamp(double cand, float origin, double eps, bool unit) {
  const double o = double(origin);
  double d = cand - o;
  if (d > eps) d = eps;
  else if (d < -eps) d = -eps;
  double r = o + d;
  if (unit) r = std::min(std::max(r, 0.0), 1.0);
  float f = float(r);
  if (double(f) - o > eps)
    f = std::nextafterf(f, -std::numeric_limits<float>::infinity());
  else if (o - double(f) > eps)
    f = std::nextafterf(f, std::numeric_limits<float>::infinity());
  if (unit) f = std::min(std::max(f, 0.0f), 1.0f);
  return f;
}

}  // namespace

Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon,
                    bool clamp_valid_range) {
  detail::check_same_shape(candidate, origin, "project_linf");
  if (epsilon < 0.0) throw std::invalid_argument("project_linf: negative epsilon");
  Tensor out(candidate.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = ball_clamp(double(candidate.data[i]), origin.data[i], epsilon,
                             clamp_valid_range);
  return out;
}

namespace {

// rows whose gradient slice contains a NaN/Inf
std::vector<int> bad_rows(const Tensor& grad, std::size_t n) {
  std::vector<int> bad;
  const std::size_t row = grad.numel() / n;
  for (std::size_t s = 0; s < n; ++s) {
    const float* p = grad.data.data() + s * row;
    for (std::size_t j = 0; j < row; ++j) {
      if (!std::isfinite(p[j])) {
        bad.push_back(int(s));
        break;
      }
    }
  }
  return bad;
}

}  // namespace

AttackResult fgsm(const ModelParams& params, const Tensor& batch,
                  const std::vector<int>& labels, double epsilon,
                  bool clamp_valid_range) {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw std::invalid_argument("fgsm: epsilon must be in (0,1]");
  const Tensor grad = input_gradient(params, batch, labels, LossKind::CrossEntropy);
  const auto bad = bad_rows(grad, batch.extent(0));
  if (!bad.empty())
    throw std::runtime_error("fgsm: non-finite gradient for batch index " +
                             std::to_string(bad.front()));
  // the raw step: entries exactly -eps, 0 or +eps (as float)
  Tensor raw(batch.shape);
  const float eps = float(epsilon);
  for (std::size_t i = 0; i < raw.numel(); ++i) {
    const float gv = grad.data[i];
    raw.data[i] = gv > 0.0f ? eps : (gv < 0.0f ? -eps : 0.0f);
  }
  Tensor cand = ew_add(batch, raw);
  AttackResult res;
  res.adversarial = project_linf(cand, batch, epsilon, clamp_valid_range);
  res.delta = std::move(raw);
  return res;
}

AttackResult pgd_core(const Tensor& batch, const AttackConfig& cfg,
                      const GradFn& grad_fn, Rng* rng) {
  cfg.validate();
  if (batch.ndim() < 1 || batch.extent(0) == 0)
    throw std::invalid_argument("pgd: empty batch");
  const std::size_t n = batch.extent(0);
  const std::size_t row = batch.numel() / n;

  Tensor xhat = batch;
  if (cfg.random_start) {
    if (!rng) throw std::invalid_argument("pgd: random_start requires an rng");
    for (std::size_t s = 0; s < n; ++s) {
      Rng sub = rng->substream(s);
      float* p = xhat.data.data() + s * row;
      for (std::size_t j = 0; j < row; ++j)
        p[j] = float(double(p[j]) + sub.uniform(-cfg.epsilon, cfg.epsilon));
    }
    xhat = project_linf(xhat, batch, cfg.epsilon, cfg.clamp_valid_range);
  }

  std::vector<char> alive(n, 1);
  std::vector<int> failed;
  const float alpha = float(cfg.step_size);
  for (int it = 0; it < cfg.rounds; ++it) {
    const Tensor grad = grad_fn(xhat);
    detail::check_same_shape(grad, batch, "pgd gradient");
    for (int s : bad_rows(grad, n)) {
      if (!alive[std::size_t(s)]) continue;
      alive[std::size_t(s)] = 0;
      failed.push_back(s);
      // abort this sample: revert to the clean input
      std::copy_n(batch.data.data() + std::size_t(s) * row, row,
                  xhat.data.data() + std::size_t(s) * row);
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (!alive[s]) continue;
      float* p = xhat.data.data() + s * row;
      const float* gp = grad.data.data() + s * row;
      for (std::size_t j = 0; j < row; ++j)
        p[j] += gp[j] > 0.0f ? alpha : (gp[j] < 0.0f ? -alpha : 0.0f);
    }
    xhat = project_linf(xhat, batch, cfg.epsilon, cfg.clamp_valid_range);
  }
  std::sort(failed.begin(), failed.end());

  AttackResult res;
  res.delta = ew_sub(xhat, batch);
  res.adversarial = std::move(xhat);
  res.failed_samples = std::move(failed);
  return res;
}

AttackResult pgd(const ModelParams& params, const Tensor& batch,
                 const std::vector<int>& labels, const AttackConfig& cfg,
                 Rng* rng) {
  if (batch.ndim() != 4 || batch.extent(0) != labels.size())
    throw std::invalid_argument("pgd: batch " + shape_str(batch.shape) +
                                " does not match " + std::to_string(labels.size()) +
                                " labels");
  return pgd_core(
      batch, cfg,
      [&](const Tensor& cur) { return input_gradient(params, cur, labels, cfg.loss); },
      rng);
}

AttackResult margin_pgd(const ModelParams& params, const Tensor& batch,
                        const std::vector<int>& labels, const AttackConfig& cfg,
                        Rng* rng) {
  AttackConfig m = cfg;
  m.loss = LossKind::Margin;
  return pgd(params, batch, labels, m, rng);
}

}  // namespace m2at
