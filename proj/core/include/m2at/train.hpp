#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m2at/attack.hpp"
#include "m2at/data.hpp"
#include "m2at/metrics.hpp"
#include "m2at/nn.hpp"

namespace m2at {

enum class Method : std::uint8_t { Standard, PgdAt, PgdLs, AvmixupG1, M2at, Ablation };

const char* method_name(Method m);
// "standard" | "pgd_at" | "pgd_ls" | "avmixup_g1" | "m2at" | "ablation"
Method method_from_string(const std::string& s);

struct AblationFlags {
  bool masking = false;
  bool mixing = false;
  bool label_smoothing = false;
  bool operator==(const AblationFlags&) const = default;
};

// Every named method except Standard is a point in the flag cube; Ablation
// picks the point explicitly. m2at is {1,1,1}, so an ablation run with all
// flags on takes the very same code path and reproduces it bit for bit.
AblationFlags flags_for(Method m, const AblationFlags& ablation);

struct TrainConfig {
  ModelConfig model;
  Method method = Method::M2at;
  AblationFlags ablation;  // consulted only when method == Ablation
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  AttackConfig attack;  // attack.epsilon == 0 turns the perturbation off
  double beta_alpha = 1.0;
  bool augment_train = false;
  std::uint64_t seed = 0;
  int eval_rounds = 10;   // per-epoch robustness probe
  int final_rounds = 20;  // final / best model report

  void validate() const;
};

// One optimization batch: images plus dense targets as the method dictates.
// Masking without mixing trains on both halves of each pair, so those
// batches carry 2n rows.
struct TrainBatch {
  Tensor images;   // [n',c,h,w]
  Tensor targets;  // [n',K]
  std::size_t attack_failures = 0;
};

// Deterministic given (params, xb, yb, cfg, rng state). The attack consumes
// rng.substream(1) and per-sample draws come from rng.substream(2, i),
// mirroring m2at_batch.
TrainBatch build_train_batch(const ModelParams& params, const Tensor& xb,
                             const std::vector<int>& yb, const TrainConfig& cfg,
                             Rng& rng);

struct EpochStats {
  double train_loss = 0.0;  // mean over batches
  double clean_acc = 0.0;
  double robust_acc = 0.0;  // eval_rounds PGD; equals clean_acc when eps == 0
  double lr = 0.0;
  std::size_t rejected_steps = 0;
  std::size_t attack_failures = 0;
};

struct TrainResult {
  ModelParams final_params;
  ModelParams best_params;  // highest per-epoch robust probe, earliest on ties
  std::size_t best_epoch = 0;
  double best_probe_robust = 0.0;
  double final_clean = 0.0;
  double final_robust = 0.0;  // final_rounds PGD
  double best_clean = 0.0;
  double best_robust = 0.0;  // final_rounds PGD on the best checkpoint
  std::vector<EpochStats> epoch_stats;
};

// Full loop: shuffle, optional augment, method-specific batch construction,
// soft-label cross-entropy, momentum SGD with the milestone schedule,
// per-epoch clean + PGD probes, best-checkpoint tracking, stronger final
// report. Aborts with a diagnostic if a forward pass goes non-finite;
// non-finite gradients skip the step and are counted per epoch.
TrainResult train(const TrainConfig& cfg, const LabeledImageSet& train_set,
                  const LabeledImageSet& eval_set, MetricsSink* metrics = nullptr);

}  // namespace m2at
