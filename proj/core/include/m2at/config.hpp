#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m2at/attack.hpp"
#include "m2at/nn.hpp"
#include "m2at/train.hpp"

namespace m2at {

// Flat dotted-key run description. Sources, in override order: built-in
// defaults, then a key=value file, then command-line flags. Unknown keys are
// rejected so typos cannot silently fall back to defaults. Budgets and step
// sizes are written in 0..255 pixel units, as on the command line.
struct RunConfig {
  // run.*
  std::string run_id = "run";
  std::uint64_t seed = 0;
  bool deterministic = true;  // metrics timestamps become event counters
  std::string out_dir = "out";
  // data.*
  std::string data_kind = "synth";  // "synth" | "cifar10"
  std::string data_dir;             // cifar10 root; env M2AT_DATA_DIR when empty
  bool augment = false;
  // synth.*
  std::size_t synth_classes = 4;
  std::size_t synth_train = 2000;
  std::size_t synth_eval = 400;
  std::size_t synth_channels = 1;
  std::size_t synth_height = 12;
  std::size_t synth_width = 12;
  double synth_margin = 4.0;
  // model.*
  std::string arch = "small-cnn";
  int width_mult = 1;
  // train.*
  std::string method = "m2at";
  bool masking = true;  // ablation flags; used when method == "ablation"
  bool mixing = true;
  bool label_smoothing = true;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  double beta_alpha = 1.0;
  int eval_rounds = 10;
  int final_rounds = 20;
  // attack.* (epsilon/alpha in 0..255 units)
  double epsilon255 = 8.0;
  double alpha255 = 2.0;
  int rounds = 10;
  bool random_start = true;
  std::string attack_loss = "cross-entropy";  // or "margin"
  bool clamp_valid_range = true;
  // eval.*
  std::size_t eval_batch = 128;
  // sweep.*
  std::vector<double> sweep_budgets255 = {0, 2, 4, 8, 16, 24, 32};
  std::vector<double> sweep_alphas255 = {2};

  // Parse one key. Throws std::invalid_argument on unknown keys or malformed
  // values, naming the key.
  void set(const std::string& key, const std::string& value);

  // Every key in a stable order; set()-compatible, so a run is fully
  // reconstructable from the serialized copy.
  std::string serialize() const;

  // derived configs
  AttackConfig attack_config() const;
  ModelConfig model_config(std::size_t in_c, std::size_t in_h, std::size_t in_w,
                           std::size_t num_classes) const;
  TrainConfig train_config(const ModelConfig& model) const;
};

// key = value lines; '#' comments and blank lines ignored; keys applied in
// file order via RunConfig::set.
void apply_config_file(RunConfig& cfg, const std::string& path);

// helpers shared with the CLI
bool parse_bool(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

}  // namespace m2at
