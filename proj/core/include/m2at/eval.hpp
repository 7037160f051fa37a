#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m2at/attack.hpp"
#include "m2at/data.hpp"
#include "m2at/nn.hpp"

namespace m2at {

// argmax per row; ties go to the lowest class index
std::vector<int> argmax_rows(const Tensor& logits);

// predictions for a whole set, processed in chunks
std::vector<int> predict(const ModelParams& params, const Tensor& images,
                         std::size_t batch_size = 128);

enum class AttackKind : std::uint8_t { Clean, Fgsm, Pgd, MarginPgd };

struct AttackSpec {
  AttackKind kind = AttackKind::Clean;
  AttackConfig config;  // ignored for Clean; rounds ignored for Fgsm
  std::string name = "clean";
};

AttackSpec clean_spec();
AttackSpec fgsm_spec(double epsilon);
AttackSpec pgd_spec(double epsilon, double step_size, int rounds);
AttackSpec margin_spec(double epsilon, double step_size, int rounds);

struct EvalEntry {
  std::string attack;
  double epsilon = 0.0;
  double step_size = 0.0;
  int rounds = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;  // correct/total
};

struct EvalReport {
  std::string model_id;
  std::uint64_t seed = 0;
  std::size_t sample_count = 0;
  std::vector<EvalEntry> entries;
};

// White-box evaluation: adversarial inputs are regenerated against these
// params for every spec. Never mutates the model.
EvalReport evaluate(const ModelParams& params, const LabeledImageSet& set,
                    const std::vector<AttackSpec>& attacks, std::uint64_t seed = 0,
                    std::size_t batch_size = 128, const std::string& model_id = "");

// One accuracy per (attack kind, step size, budget). Budgets must ascend;
// a zero budget is scored as the clean accuracy, exactly. FGSM takes no step
// size, so its row is computed once per budget and repeated across the step
// grid. For PGD the effective step is min(step, epsilon).
struct SweepPoint {
  std::string series;  // legend label, e.g. "pgd-10 a=2"
  double epsilon255 = 0.0;  // budget in 0..255 units, Fig.-style axis
  double alpha255 = 0.0;
  std::string attack;  // "fgsm" | "pgd-<k>"
  double accuracy = 0.0;
};

std::vector<SweepPoint> epsilon_sweep(const ModelParams& params,
                                      const LabeledImageSet& set,
                                      const AttackConfig& base,
                                      const std::vector<double>& budgets255,
                                      const std::vector<double>& steps255,
                                      std::uint64_t seed = 0,
                                      std::size_t batch_size = 128);

// accuracy[defender][attacker]; adversarial sets generated once per attacker.
// The diagonal is the white-box number and matches evaluate() exactly.
struct TransferResult {
  std::vector<std::string> names;
  std::vector<std::vector<double>> accuracy;
  std::vector<std::vector<std::size_t>> correct;
  std::size_t total = 0;
};

struct NamedModel {
  std::string name;
  const ModelParams* params = nullptr;
};

TransferResult transfer_matrix(const std::vector<NamedModel>& models,
                               const LabeledImageSet& set, const AttackConfig& atk,
                               std::uint64_t seed = 0, std::size_t batch_size = 128);

}  // namespace m2at
