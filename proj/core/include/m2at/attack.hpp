#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "m2at/nn.hpp"
#include "m2at/rng.hpp"
#include "m2at/tensor.hpp"

namespace m2at {

enum class LossKind : std::uint8_t { CrossEntropy, Margin };

const char* loss_name(LossKind kind);
LossKind loss_from_string(const std::string& s);  // "cross-entropy" | "margin"

struct AttackConfig {
  double epsilon = 8.0 / 255.0;  // l-inf radius, pixel units
  double step_size = 2.0 / 255.0;
  int rounds = 10;
  LossKind loss = LossKind::CrossEntropy;
  bool random_start = false;
  bool clamp_valid_range = true;

  void validate() const;  // 0 < step <= epsilon <= 1, rounds >= 1
};

struct AttackResult {
  Tensor adversarial;  // x-hat, same shape as the input batch
  // pgd: x-hat minus x. fgsm: the raw pre-clamp step, entries exactly
  // -eps, 0 or +eps so the sign algebra stays testable.
  Tensor delta;
  std::vector<int> failed_samples;  // rows whose attack aborted on a bad gradient
};

// Gradient of the mean batch loss w.r.t. the input pixels.
Tensor input_gradient(const ModelParams& params, const Tensor& batch,
                      const std::vector<int>& labels, LossKind loss);

// Per-pixel clamp into [origin - eps, origin + eps], then into [0,1] when
// clamp_valid_range is set. Idempotent.
Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon,
                    bool clamp_valid_range);

// Single step of size epsilon along sign of the input gradient. A non-finite
// gradient is an error naming the offending batch index.
AttackResult fgsm(const ModelParams& params, const Tensor& batch,
                  const std::vector<int>& labels, double epsilon,
                  bool clamp_valid_range = true);

// k rounds of project(x + alpha * sign(grad)). random_start draws the start
// uniformly inside the ball (needs rng, one substream per sample). A sample
// whose gradient turns non-finite mid-iteration reverts to its clean input
// and is reported in failed_samples.
AttackResult pgd(const ModelParams& params, const Tensor& batch,
                 const std::vector<int>& labels, const AttackConfig& cfg,
                 Rng* rng = nullptr);

// CW stand-in: pgd maximizing the margin loss max_{j != y} z_j - z_y.
AttackResult margin_pgd(const ModelParams& params, const Tensor& batch,
                        const std::vector<int>& labels, const AttackConfig& cfg,
                        Rng* rng = nullptr);

// The bare iteration behind pgd, taking any gradient oracle; contract tests
// drive it with closed-form losses.
using GradFn = std::function<Tensor(const Tensor& current)>;
AttackResult pgd_core(const Tensor& batch, const AttackConfig& cfg,
                      const GradFn& grad_fn, Rng* rng = nullptr);

}  // namespace m2at
