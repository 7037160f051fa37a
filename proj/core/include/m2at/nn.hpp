#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m2at/graph.hpp"
#include "m2at/rng.hpp"
#include "m2at/tensor.hpp"

namespace m2at {

enum class ArchKind : std::uint8_t { Mlp, SmallCnn, MiniWrn };

const char* arch_name(ArchKind kind);
ArchKind arch_from_string(const std::string& s);  // "mlp" | "small-cnn" | "mini-wrn"

struct ModelConfig {
  ArchKind kind = ArchKind::Mlp;
  std::size_t in_c = 1, in_h = 4, in_w = 4;
  std::size_t num_classes = 2;
  int width_mult = 1;

  void validate() const;  // K >= 2, width >= 1, conv kinds need h,w >= 4
  bool operator==(const ModelConfig&) const = default;
};

struct Param {
  std::string name;
  Tensor value;
  bool decay = false;  // weight decay applies to weights, not biases
};

struct ModelParams {
  ModelConfig config;
  std::vector<Param> params;

  std::size_t param_count() const;
};

// Deterministic fan-in-scaled uniform initialization; biases start at zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Plants the batch and every parameter as graph leaves and records the
// architecture's forward pass. Shared by training, attacks and the 64-bit
// gradient check so all of them exercise the same construction.
struct ModelNodes {
  NodeId input = -1;
  std::vector<NodeId> params;  // same order as ModelParams::params
  NodeId logits = -1;
};

template <typename S>
ModelNodes bind_model(GraphT<S>& g, const ModelParams& p, const TensorT<S>& batch);

// Pure inference convenience: logits [n,K] for a batch [n,c,h,w].
Tensor forward_logits(const ModelParams& params, const Tensor& batch);

// ---- dense label helpers ----

// one-hot rows, [n,K]
Tensor one_hot(const std::vector<int>& labels, std::size_t num_classes);
// s-bar: zero at the true class, 1/(K-1) elsewhere
Tensor offclass_uniform(int label, std::size_t num_classes);

// ---- momentum SGD ----

struct OptimState {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::vector<std::size_t> milestones;  // epoch indices where the rate drops
  double decay_factor = 0.1;
  std::vector<Tensor> velocity;  // shape-matched to params
};

// Milestones at floor(0.5 T) and floor(0.75 T).
OptimState make_optim(const ModelParams& params, double lr, double momentum,
                      double weight_decay, std::size_t total_epochs);

// Effective rate for a 0-based epoch index.
double scheduled_lr(const OptimState& opt, std::size_t epoch);

// v <- m v + (g + wd theta); theta <- theta - lr v. Weight decay is skipped
// for params with decay=false. A non-finite gradient rejects the whole step
// (params and velocity untouched) and returns false for the caller to flag.
bool sgd_step(ModelParams& params, const std::vector<Tensor>& grads,
              OptimState& opt, double lr_now);

// ---- checkpoints ----
// Binary, little-endian: "M2ATCKPT" magic, u32 version, architecture
// descriptor, then named f32 tensors with explicit shapes.

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace m2at
