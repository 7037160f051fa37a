#include "m2at/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "m2at/eval.hpp"
#include "m2at/graph.hpp"
#include "m2at/mask_mix.hpp"
#include "m2at/rng.hpp"

namespace m2at {

namespace {

std::size_t row_stride(const Tensor& batch) { return batch.numel() / batch.shape[0]; }

Tensor sample_of(const Tensor& batch, std::size_t s) {
  Tensor out({batch.shape[1], batch.shape[2], batch.shape[3]});
  const std::size_t row = row_stride(batch);
  std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(s * row), row,
              out.data.begin());
  return out;
}

void put_row(Tensor& dst, std::size_t r, const Tensor& src) {
  const std::size_t row = row_stride(dst);
  std::copy_n(src.data.begin(), row,
              dst.data.begin() + static_cast<std::ptrdiff_t>(r * row));
}

// lambda * onehot(y) + (1 - lambda) * s_bar, evaluated in double per entry
void blend_labels(Tensor& targets, std::size_t r, int y, double lambda,
                  std::size_t K) {
  float* t = targets.data.data() + r * K;
  const double off = (1.0 - lambda) / static_cast<double>(K - 1);
  for (std::size_t j = 0; j < K; ++j)
    t[j] = static_cast<float>(j == static_cast<std::size_t>(y) ? lambda : off);
}

void one_hot_row(Tensor& targets, std::size_t r, int y, std::size_t K) {
  float* t = targets.data.data() + r * K;
  std::fill_n(t, K, 0.0f);
  t[static_cast<std::size_t>(y)] = 1.0f;
}

AttackSpec probe_spec(const TrainConfig& cfg, int rounds) {
  AttackSpec s = pgd_spec(cfg.attack.epsilon,
                          std::min(cfg.attack.step_size, cfg.attack.epsilon), rounds);
  s.config.clamp_valid_range = cfg.attack.clamp_valid_range;
  // deterministic probe: no random start, plain cross-entropy
  return s;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::Standard: return "standard";
    case Method::PgdAt: return "pgd_at";
    case Method::PgdLs: return "pgd_ls";
    case Method::AvmixupG1: return "avmixup_g1";
    case Method::M2at: return "m2at";
    case Method::Ablation: return "ablation";
  }
  throw std::logic_error("method_name: bad enum");
}

Method method_from_string(const std::string& s) {
  if (s == "standard") return Method::Standard;
  if (s == "pgd_at") return Method::PgdAt;
  if (s == "pgd_ls") return Method::PgdLs;
  if (s == "avmixup_g1") return Method::AvmixupG1;
  if (s == "m2at") return Method::M2at;
  if (s == "ablation") return Method::Ablation;
  throw std::invalid_argument("unknown method '" + s + "'");
}

AblationFlags flags_for(Method m, const AblationFlags& ablation) {
  switch (m) {
    case Method::Standard: return {false, false, false};  // no attack at all
    case Method::PgdAt: return {false, false, false};
    case Method::PgdLs: return {false, false, true};
    case Method::AvmixupG1: return {false, true, true};
    case Method::M2at: return {true, true, true};
    case Method::Ablation: return ablation;
  }
  throw std::logic_error("flags_for: bad enum");
}

void TrainConfig::validate() const {
  model.validate();
  if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw std::invalid_argument("train: learning rate must be positive and finite");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("train: momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train: negative weight decay");
  if (!(beta_alpha > 0.0) || !std::isfinite(beta_alpha))
    throw std::invalid_argument("train: beta_alpha must be positive");
  if (eval_rounds < 1 || final_rounds < 1)
    throw std::invalid_argument("train: attack rounds for probes must be >= 1");
  if (attack.epsilon < 0.0 || attack.epsilon > 1.0)
    throw std::invalid_argument("train: attack budget outside [0,1]");
  if (method != Method::Standard && attack.epsilon > 0.0) attack.validate();
}

TrainBatch build_train_batch(const ModelParams& params, const Tensor& xb,
                             const std::vector<int>& yb, const TrainConfig& cfg,
                             Rng& rng) {
  const std::size_t n = xb.shape[0];
  const std::size_t h = xb.shape[2], w = xb.shape[3];
  const std::size_t K = params.config.num_classes;
  if (yb.size() != n) throw std::invalid_argument("build_train_batch: label count");

  TrainBatch out;
  if (cfg.method == Method::Standard) {
    out.images = xb;
    out.targets = one_hot(yb, K);
    return out;
  }

  const AblationFlags f = flags_for(cfg.method, cfg.ablation);
  const bool no_attack = cfg.attack.epsilon == 0.0;

  if (f.masking && f.mixing && f.label_smoothing) {
    M2atOptions mo;
    Tensor zeros;
    if (no_attack) {
      zeros = Tensor(xb.shape);
      mo.fixed_delta = &zeros;
    }
    M2atBatch mb = m2at_batch(params, xb, yb, cfg.attack, cfg.beta_alpha, rng, mo);
    out.images = std::move(mb.images);
    out.targets = std::move(mb.targets);
    out.attack_failures = mb.failed_samples.size();
    return out;
  }

  // shared adversarial step for every other flag combination
  Tensor delta(xb.shape);  // zeros when the budget is off
  Tensor adv = xb;
  if (!no_attack) {
    Rng atk_rng = rng.substream(1);
    AttackResult res = pgd(params, xb, yb, cfg.attack, &atk_rng);
    out.attack_failures = res.failed_samples.size();
    delta = std::move(res.delta);
    adv = std::move(res.adversarial);
  }
  const double budget = no_attack ? 0.0 : cfg.attack.epsilon;
  const bool clamp = cfg.attack.clamp_valid_range;

  if (!f.masking) {
    if (!f.mixing) {
      // pgd_at / pgd_ls: train on the adversarial points themselves
      out.images = std::move(adv);
      out.targets = Tensor({n, K});
      for (std::size_t s = 0; s < n; ++s) {
        if (f.label_smoothing) {
          Rng sub = rng.substream(2, s);
          const double l = sample_beta(1.0, sub);  // fixed Beta(1,1) blend
          blend_labels(out.targets, s, yb[s], 1.0 - l, K);
        } else {
          one_hot_row(out.targets, s, yb[s], K);
        }
      }
      return out;
    }
    // clean/adversarial interpolation (avmixup with one vertex pair)
    out.images = Tensor(xb.shape);
    out.targets = Tensor({n, K});
    const std::size_t row = row_stride(xb);
    for (std::size_t s = 0; s < n; ++s) {
      Rng sub = rng.substream(2, s);
      const double l2 = sample_beta(cfg.beta_alpha, sub);
      const float l = static_cast<float>(l2);
      const float lb = static_cast<float>(1.0 - l2);
      const float* xs = xb.data.data() + s * row;
      const float* as = adv.data.data() + s * row;
      float* os = out.images.data.data() + s * row;
      for (std::size_t i = 0; i < row; ++i) os[i] = l * xs[i] + lb * as[i];
      // mixing must stay inside the attack ball despite float rounding
      Tensor mixed({xb.shape[1], h, w});
      std::copy_n(os, row, mixed.data.begin());
      const Tensor safe = project_linf(mixed, sample_of(xb, s), budget, clamp);
      std::copy_n(safe.data.begin(), row, os);
      if (f.label_smoothing)
        blend_labels(out.targets, s, yb[s], l2, K);
      else
        one_hot_row(out.targets, s, yb[s], K);
    }
    return out;
  }

  // masking paths; without mixing both halves of the pair become rows
  const bool two_rows = !f.mixing;
  const std::size_t rows = two_rows ? 2 * n : n;
  Shape shape = xb.shape;
  shape[0] = rows;
  out.images = Tensor(shape);
  out.targets = Tensor({rows, K});
  for (std::size_t s = 0; s < n; ++s) {
    const Tensor xs = sample_of(xb, s);
    const Tensor ds = sample_of(delta, s);
    Rng sub = rng.substream(2, s);
    const double l1 = sub.uniform();
    const MaskBox box = sample_box(h, w, l1, sub);
    const double l1p = area_ratio(box, h, w);
    const Tensor mask = make_mask(box, h, w);
    auto [xi, xi_bar] = apply_mask(xs, ds, mask);
    if (two_rows) {
      put_row(out.images, s, project_linf(xi, xs, budget, clamp));
      put_row(out.images, n + s, project_linf(xi_bar, xs, budget, clamp));
      if (f.label_smoothing) {
        auto [t, t_bar] = smooth_labels(yb[s], l1p, K);
        std::copy_n(t.data.begin(), K, out.targets.data.begin() + s * K);
        std::copy_n(t_bar.data.begin(), K, out.targets.data.begin() + (n + s) * K);
      } else {
        one_hot_row(out.targets, s, yb[s], K);
        one_hot_row(out.targets, n + s, yb[s], K);
      }
      continue;
    }
    // masking + mixing without smoothing: mixed image, hard label
    const double l2 = sample_beta(cfg.beta_alpha, sub);
    const float l = static_cast<float>(l2);
    const float lb = static_cast<float>(1.0 - l2);
    Tensor mixed(xi.shape);
    for (std::size_t i = 0; i < mixed.numel(); ++i)
      mixed.data[i] = l * xi.data[i] + lb * xi_bar.data[i];
    put_row(out.images, s, project_linf(mixed, xs, budget, clamp));
    one_hot_row(out.targets, s, yb[s], K);
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, const LabeledImageSet& train_set,
                  const LabeledImageSet& eval_set, MetricsSink* metrics) {
  cfg.validate();
  train_set.validate();
  eval_set.validate();
  const std::size_t c = cfg.model.in_c, h = cfg.model.in_h, w = cfg.model.in_w;
  const std::size_t K = cfg.model.num_classes;
  if (train_set.num_classes != K || eval_set.num_classes != K)
    throw std::invalid_argument("train: dataset class count does not match the model");
  if (train_set.images.shape[1] != c || train_set.images.shape[2] != h ||
      train_set.images.shape[3] != w)
    throw std::invalid_argument("train: dataset image shape does not match the model");

  ModelParams params = init_params(cfg.model, cfg.seed);
  OptimState opt =
      make_optim(params, cfg.lr, cfg.momentum, cfg.weight_decay, cfg.epochs);
  Rng root(cfg.seed);
  const std::size_t n = train_set.size();
  const std::size_t row = c * h * w;

  TrainResult result;
  double best = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_now = scheduled_lr(opt, epoch);
    Rng shuffle_rng = root.substream(4, epoch);
    const std::vector<std::size_t> order = shuffled_indices(n, shuffle_rng);

    EpochStats st;
    st.lr = lr_now;
    double loss_sum = 0.0;
    std::size_t batches = 0;

    for (std::size_t begin = 0, bi = 0; begin < n; begin += cfg.batch_size, ++bi) {
      const std::size_t count = std::min(cfg.batch_size, n - begin);
      Tensor xb({count, c, h, w});
      std::vector<int> yb(count);
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t src = order[begin + j];
        yb[j] = train_set.labels[src];
        if (cfg.augment_train) {
          Rng au = root.substream(3, epoch, begin + j);
          put_row(xb, j, augment(sample_of(train_set.images, src), au));
        } else {
          std::copy_n(train_set.images.data.begin() +
                          static_cast<std::ptrdiff_t>(src * row),
                      row, xb.data.begin() + static_cast<std::ptrdiff_t>(j * row));
        }
      }

      Rng brng = root.substream(5, epoch, bi);
      TrainBatch tb = build_train_batch(params, xb, yb, cfg, brng);
      st.attack_failures += tb.attack_failures;

      GraphT<float> g;
      ModelNodes mn = bind_model(g, params, tb.images);
      const NodeId tgt = g.leaf(tb.targets);
      const NodeId loss = g.softmax_cross_entropy(mn.logits, tgt);
      loss_sum += static_cast<double>(g.value(loss).data[0]);
      ++batches;

      auto gm = g.backward(loss, mn.params);
      std::vector<Tensor> grads;
      grads.reserve(mn.params.size());
      for (const NodeId id : mn.params) grads.push_back(std::move(gm.at(id)));
      if (!sgd_step(params, grads, opt, lr_now)) ++st.rejected_steps;
    }
    st.train_loss = loss_sum / static_cast<double>(batches);

    std::vector<AttackSpec> specs{clean_spec()};
    if (cfg.attack.epsilon > 0.0) specs.push_back(probe_spec(cfg, cfg.eval_rounds));
    const EvalReport er = evaluate(params, eval_set, specs, cfg.seed);
    st.clean_acc = er.entries[0].accuracy;
    st.robust_acc =
        cfg.attack.epsilon > 0.0 ? er.entries[1].accuracy : st.clean_acc;

    if (metrics) {
      const long e = static_cast<long>(epoch);
      metrics->emit("train", e, "loss", st.train_loss);
      metrics->emit("train", e, "lr", st.lr);
      metrics->emit("train", e, "rejected_steps", static_cast<double>(st.rejected_steps));
      metrics->emit("train", e, "attack_failures",
                    static_cast<double>(st.attack_failures));
      metrics->emit("eval", e, "clean_acc", st.clean_acc, "clean");
      if (cfg.attack.epsilon > 0.0)
        metrics->emit("eval", e, "robust_acc", st.robust_acc, er.entries[1].attack);
    }

    if (st.robust_acc > best) {
      best = st.robust_acc;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    result.epoch_stats.push_back(st);
  }

  result.best_probe_robust = best;
  result.final_params = std::move(params);

  std::vector<AttackSpec> final_specs{clean_spec()};
  if (cfg.attack.epsilon > 0.0) final_specs.push_back(probe_spec(cfg, cfg.final_rounds));
  const EvalReport fin =
      evaluate(result.final_params, eval_set, final_specs, cfg.seed);
  const EvalReport bst = evaluate(result.best_params, eval_set, final_specs, cfg.seed);
  result.final_clean = fin.entries[0].accuracy;
  result.final_robust =
      cfg.attack.epsilon > 0.0 ? fin.entries[1].accuracy : result.final_clean;
  result.best_clean = bst.entries[0].accuracy;
  result.best_robust =
      cfg.attack.epsilon > 0.0 ? bst.entries[1].accuracy : result.best_clean;

  if (metrics) {
    const std::string atk =
        cfg.attack.epsilon > 0.0 ? final_specs[1].name : std::string("clean");
    metrics->emit("summary", -1, "final_clean", result.final_clean, "clean");
    metrics->emit("summary", -1, "final_robust", result.final_robust, atk);
    metrics->emit("summary", -1, "best_clean", result.best_clean, "clean");
    metrics->emit("summary", -1, "best_robust", result.best_robust, atk);
    metrics->emit("summary", -1, "best_epoch", static_cast<double>(result.best_epoch));
    metrics->flush();
  }
  return result;
}

}  // namespace m2at
