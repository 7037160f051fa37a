#include "m2at/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "m2at/rng.hpp"

namespace m2at {

namespace {

Tensor slice_rows(const Tensor& images, std::size_t begin, std::size_t count) {
  Shape shape = images.shape;
  shape[0] = count;
  Tensor out(shape);
  const std::size_t row = images.numel() / images.shape[0];
  std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(begin * row),
              count * row, out.data.begin());
  return out;
}

std::vector<int> slice_labels(const std::vector<int>& labels, std::size_t begin,
                              std::size_t count) {
  return {labels.begin() + static_cast<std::ptrdiff_t>(begin),
          labels.begin() + static_cast<std::ptrdiff_t>(begin + count)};
}

// Adversarial inputs for one spec over a whole set. Both evaluate() and
// transfer_matrix() go through here so white-box numbers agree bit for bit.
Tensor attacked_images(const ModelParams& params, const LabeledImageSet& set,
                       const AttackSpec& spec, std::uint64_t seed,
                       std::size_t batch_size) {
  const std::size_t n = set.size();
  Tensor out = set.images;
  if (spec.kind == AttackKind::Clean) return out;
  const std::size_t row = set.images.numel() / n;
  Rng root(seed);
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < n; begin += batch_size, ++batch_index) {
    const std::size_t count = std::min(batch_size, n - begin);
    const Tensor xb = slice_rows(set.images, begin, count);
    const std::vector<int> yb = slice_labels(set.labels, begin, count);
    AttackResult res;
    Rng sub = root.substream(batch_index);
    switch (spec.kind) {
      case AttackKind::Fgsm:
        res = fgsm(params, xb, yb, spec.config.epsilon, spec.config.clamp_valid_range);
        break;
      case AttackKind::Pgd:
        res = pgd(params, xb, yb, spec.config, &sub);
        break;
      case AttackKind::MarginPgd:
        res = margin_pgd(params, xb, yb, spec.config, &sub);
        break;
      case AttackKind::Clean:
        break;
    }
    std::copy_n(res.adversarial.data.begin(), count * row,
                out.data.begin() + static_cast<std::ptrdiff_t>(begin * row));
  }
  return out;
}

std::size_t count_correct(const ModelParams& params, const Tensor& images,
                          const std::vector<int>& labels, std::size_t batch_size) {
  const std::vector<int> pred = predict(params, images, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  return correct;
}

std::string format_alpha(double alpha255) {
  char buf[32];
  if (alpha255 == std::floor(alpha255))
    std::snprintf(buf, sizeof buf, "%d", static_cast<int>(alpha255));
  else
    std::snprintf(buf, sizeof buf, "%g", alpha255);
  return buf;
}

}  // namespace

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw std::invalid_argument("argmax_rows: want [n,k] logits");
  const std::size_t n = logits.shape[0], k = logits.shape[1];
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data.data() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;  // strict: ties keep the lowest index
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const ModelParams& params, const Tensor& images,
                         std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be positive");
  const std::size_t n = images.shape[0];
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t count = std::min(batch_size, n - begin);
    const Tensor xb = slice_rows(images, begin, count);
    const Tensor logits = forward_logits(params, xb);
    const std::vector<int> p = argmax_rows(logits);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

AttackSpec clean_spec() { return {}; }

AttackSpec fgsm_spec(double epsilon) {
  AttackSpec s;
  s.kind = AttackKind::Fgsm;
  s.config.epsilon = epsilon;
  s.config.step_size = epsilon;
  s.config.rounds = 1;
  s.name = "fgsm";
  return s;
}

AttackSpec pgd_spec(double epsilon, double step_size, int rounds) {
  AttackSpec s;
  s.kind = AttackKind::Pgd;
  s.config.epsilon = epsilon;
  s.config.step_size = step_size;
  s.config.rounds = rounds;
  s.name = "pgd-" + std::to_string(rounds);
  return s;
}

AttackSpec margin_spec(double epsilon, double step_size, int rounds) {
  AttackSpec s = pgd_spec(epsilon, step_size, rounds);
  s.kind = AttackKind::MarginPgd;
  s.config.loss = LossKind::Margin;
  s.name = "margin-" + std::to_string(rounds);
  return s;
}

EvalReport evaluate(const ModelParams& params, const LabeledImageSet& set,
                    const std::vector<AttackSpec>& attacks, std::uint64_t seed,
                    std::size_t batch_size, const std::string& model_id) {
  set.validate();
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  EvalReport report;
  report.model_id = model_id;
  report.seed = seed;
  report.sample_count = set.size();
  for (const AttackSpec& spec : attacks) {
    if (spec.kind != AttackKind::Clean) spec.config.validate();
    const Tensor images = attacked_images(params, set, spec, seed, batch_size);
    EvalEntry e;
    e.attack = spec.name;
    if (spec.kind != AttackKind::Clean) {
      e.epsilon = spec.config.epsilon;
      e.step_size = spec.kind == AttackKind::Fgsm ? spec.config.epsilon : spec.config.step_size;
      e.rounds = spec.kind == AttackKind::Fgsm ? 1 : spec.config.rounds;
    }
    e.total = set.size();
    e.correct = count_correct(params, images, set.labels, batch_size);
    e.accuracy = static_cast<double>(e.correct) / static_cast<double>(e.total);
    report.entries.push_back(std::move(e));
  }
  return report;
}

std::vector<SweepPoint> epsilon_sweep(const ModelParams& params,
                                      const LabeledImageSet& set,
                                      const AttackConfig& base,
                                      const std::vector<double>& budgets255,
                                      const std::vector<double>& steps255,
                                      std::uint64_t seed, std::size_t batch_size) {
  if (budgets255.empty()) throw std::invalid_argument("epsilon_sweep: no budgets");
  if (steps255.empty()) throw std::invalid_argument("epsilon_sweep: no step sizes");
  for (std::size_t i = 0; i + 1 < budgets255.size(); ++i)
    if (!(budgets255[i] < budgets255[i + 1]))
      throw std::invalid_argument("epsilon_sweep: budgets must ascend");
  if (budgets255.front() < 0.0)
    throw std::invalid_argument("epsilon_sweep: negative budget");
  for (double a : steps255)
    if (!(a > 0.0)) throw std::invalid_argument("epsilon_sweep: step sizes must be positive");

  // Clean accuracy once; reused verbatim for every zero-budget point.
  const double clean_acc =
      evaluate(params, set, {clean_spec()}, seed, batch_size).entries[0].accuracy;

  std::vector<SweepPoint> out;
  // FGSM does not depend on the step size: compute per budget, repeat per panel.
  std::vector<double> fgsm_acc(budgets255.size(), clean_acc);
  for (std::size_t b = 0; b < budgets255.size(); ++b) {
    if (budgets255[b] == 0.0) continue;
    AttackSpec s = fgsm_spec(budgets255[b] / 255.0);
    s.config.clamp_valid_range = base.clamp_valid_range;
    fgsm_acc[b] = evaluate(params, set, {s}, seed, batch_size).entries[0].accuracy;
  }
  for (double a : steps255) {
    const std::string atag = format_alpha(a);
    for (std::size_t b = 0; b < budgets255.size(); ++b) {
      SweepPoint p;
      p.series = "fgsm a=" + atag;
      p.epsilon255 = budgets255[b];
      p.alpha255 = a;
      p.attack = "fgsm";
      p.accuracy = fgsm_acc[b];
      out.push_back(p);
    }
  }
  for (double a : steps255) {
    const std::string atag = format_alpha(a);
    for (std::size_t b = 0; b < budgets255.size(); ++b) {
      SweepPoint p;
      p.series = "pgd-" + std::to_string(base.rounds) + " a=" + atag;
      p.epsilon255 = budgets255[b];
      p.alpha255 = a;
      p.attack = "pgd-" + std::to_string(base.rounds);
      if (budgets255[b] == 0.0) {
        p.accuracy = clean_acc;
      } else {
        AttackSpec s = pgd_spec(budgets255[b] / 255.0,
                                std::min(a, budgets255[b]) / 255.0, base.rounds);
        s.config.random_start = base.random_start;
        s.config.clamp_valid_range = base.clamp_valid_range;
        s.config.loss = base.loss;
        p.accuracy = evaluate(params, set, {s}, seed, batch_size).entries[0].accuracy;
      }
      out.push_back(p);
    }
  }
  return out;
}

TransferResult transfer_matrix(const std::vector<NamedModel>& models,
                               const LabeledImageSet& set, const AttackConfig& atk,
                               std::uint64_t seed, std::size_t batch_size) {
  if (models.size() < 2)
    throw std::invalid_argument("transfer_matrix: need at least two models");
  atk.validate();
  set.validate();
  const std::size_t m = models.size();
  for (const NamedModel& nm : models) {
    if (nm.params == nullptr) throw std::invalid_argument("transfer_matrix: null model");
    if (nm.params->config.num_classes != set.num_classes)
      throw std::invalid_argument("transfer_matrix: model '" + nm.name +
                                  "' class count differs from the dataset");
  }
  TransferResult r;
  r.total = set.size();
  r.accuracy.assign(m, std::vector<double>(m, 0.0));
  r.correct.assign(m, std::vector<std::size_t>(m, 0));
  for (const NamedModel& nm : models) r.names.push_back(nm.name);

  AttackSpec spec = pgd_spec(atk.epsilon, atk.step_size, atk.rounds);
  spec.config = atk;
  for (std::size_t attacker = 0; attacker < m; ++attacker) {
    const Tensor images =
        attacked_images(*models[attacker].params, set, spec, seed, batch_size);
    for (std::size_t defender = 0; defender < m; ++defender) {
      const std::size_t c =
          count_correct(*models[defender].params, images, set.labels, batch_size);
      r.correct[defender][attacker] = c;
      r.accuracy[defender][attacker] =
          static_cast<double>(c) / static_cast<double>(r.total);
    }
  }
  return r;
}

}  // namespace m2at
