#include "m2at/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace m2at {

const char* arch_name(ArchKind kind) {
  switch (kind) {
    case ArchKind::Mlp: return "mlp";
    case ArchKind::SmallCnn: return "small-cnn";
    case ArchKind::MiniWrn: return "mini-wrn";
  }
  return "?";
}

ArchKind arch_from_string(const std::string& s) {
  if (s == "mlp") return ArchKind::Mlp;
  if (s == "small-cnn") return ArchKind::SmallCnn;
  if (s == "mini-wrn") return ArchKind::MiniWrn;
  throw std::invalid_argument("unknown architecture '" + s +
                              "' (expected mlp | small-cnn | mini-wrn)");
}

void ModelConfig::validate() const {
  if (num_classes < 2)
    throw std::invalid_argument("model: needs at least 2 classes");
  if (width_mult < 1)
    throw std::invalid_argument("model: width multiplier must be >= 1");
  if (in_c < 1 || in_h < 1 || in_w < 1)
    throw std::invalid_argument("model: input extents must be >= 1");
  if (kind != ArchKind::Mlp && (in_h < 4 || in_w < 4))
    throw std::invalid_argument("model: conv architectures need spatial extents >= 4");
}

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  bool decay = false;
  std::size_t fan_in = 0;
};

ParamSpec weight(std::string name, Shape shape, std::size_t fan_in) {
  return {std::move(name), std::move(shape), true, fan_in};
}

ParamSpec bias(std::string name, std::size_t n) {
  return {std::move(name), Shape{n}, false, 0};
}

std::size_t pool2_out(std::size_t x) { return (x - 2) / 2 + 1; }

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t m = std::size_t(cfg.width_mult);
  const std::size_t K = cfg.num_classes;
  std::vector<ParamSpec> out;
  switch (cfg.kind) {
    case ArchKind::Mlp: {
      const std::size_t in = cfg.in_c * cfg.in_h * cfg.in_w;
      const std::size_t h1 = 32 * m;
      out.push_back(weight("fc1.w", {in, h1}, in));
      out.push_back(bias("fc1.b", h1));
      out.push_back(weight("fc2.w", {h1, K}, h1));
      out.push_back(bias("fc2.b", K));
      break;
    }
    case ArchKind::SmallCnn: {
      const std::size_t c1 = 16 * m, c2 = 32 * m;
      out.push_back(weight("conv1.w", {c1, cfg.in_c, 3, 3}, cfg.in_c * 9));
      out.push_back(bias("conv1.b", c1));
      out.push_back(weight("conv2.w", {c2, c1, 3, 3}, c1 * 9));
      out.push_back(bias("conv2.b", c2));
      const std::size_t h4 = pool2_out(pool2_out(cfg.in_h));
      const std::size_t w4 = pool2_out(pool2_out(cfg.in_w));
      out.push_back(weight("fc.w", {c2 * h4 * w4, K}, c2 * h4 * w4));
      out.push_back(bias("fc.b", K));
      break;
    }
    case ArchKind::MiniWrn: {
      const std::size_t widths[3] = {16 * m, 32 * m, 64 * m};
      out.push_back(weight("stem.w", {widths[0], cfg.in_c, 3, 3}, cfg.in_c * 9));
      out.push_back(bias("stem.b", widths[0]));
      std::size_t in_ch = widths[0];
      for (int grp = 0; grp < 3; ++grp) {
        const std::size_t wg = widths[grp];
        const int stride = grp == 0 ? 1 : 2;
        for (int blk = 0; blk < 2; ++blk) {
          const std::string pre = "g" + std::to_string(grp + 1) + ".b" +
                                  std::to_string(blk + 1) + ".";
          const std::size_t bin = blk == 0 ? in_ch : wg;
          const int bstride = blk == 0 ? stride : 1;
          out.push_back(weight(pre + "conv1.w", {wg, bin, 3, 3}, bin * 9));
          out.push_back(bias(pre + "conv1.b", wg));
          out.push_back(weight(pre + "conv2.w", {wg, wg, 3, 3}, wg * 9));
          out.push_back(bias(pre + "conv2.b", wg));
          if (bin != wg || bstride != 1)
            out.push_back(weight(pre + "skip.w", {wg, bin, 1, 1}, bin));
        }
        in_ch = wg;
      }
      out.push_back(weight("fc.w", {widths[2], K}, widths[2]));
      out.push_back(bias("fc.b", K));
      break;
    }
  }
  return out;
}

}  // namespace

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for (const Param& p : params) n += p.value.numel();
  return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  const auto specs = param_specs(config);  // validates config
  ModelParams mp;
  mp.config = config;
  mp.params.reserve(specs.size());
  Rng root(seed);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ParamSpec& ps = specs[i];
    Tensor t = Tensor::zeros(ps.shape);
    if (ps.decay) {
      Rng sub = root.substream(i);
      const double bound = std::sqrt(6.0 / double(ps.fan_in));
      for (auto& v : t.data) v = float(sub.uniform(-bound, bound));
    }
    mp.params.push_back({ps.name, std::move(t), ps.decay});
  }
  return mp;
}

template <typename S>
ModelNodes bind_model(GraphT<S>& g, const ModelParams& p, const TensorT<S>& batch) {
  const ModelConfig& cfg = p.config;
  if (batch.ndim() != 4 || batch.extent(1) != cfg.in_c ||
      batch.extent(2) != cfg.in_h || batch.extent(3) != cfg.in_w)
    throw std::invalid_argument(
        "forward: batch " + shape_str(batch.shape) + " does not match model input [n," +
        std::to_string(cfg.in_c) + "," + std::to_string(cfg.in_h) + "," +
        std::to_string(cfg.in_w) + "]");
  const std::size_t n = batch.extent(0);

  ModelNodes out;
  out.input = g.leaf(batch);
  out.params.reserve(p.params.size());
  for (const Param& pr : p.params)
    out.params.push_back(g.leaf(tensor_cast<S>(pr.value)));

  auto pid = [&](const std::string& name) -> NodeId {
    for (std::size_t i = 0; i < p.params.size(); ++i)
      if (p.params[i].name == name) return out.params[i];
    throw std::logic_error("model: missing parameter " + name);
  };

  switch (cfg.kind) {
    case ArchKind::Mlp: {
      const std::size_t in = cfg.in_c * cfg.in_h * cfg.in_w;
      NodeId x = g.reshape(out.input, {n, in});
      x = g.add(g.matmul(x, pid("fc1.w")), pid("fc1.b"));
      x = g.relu(x);
      out.logits = g.add(g.matmul(x, pid("fc2.w")), pid("fc2.b"));
      break;
    }
    case ArchKind::SmallCnn: {
      NodeId x = g.add(g.conv2d(out.input, pid("conv1.w"), 1, 1), pid("conv1.b"));
      x = g.maxpool2d(g.relu(x), 2);
      x = g.add(g.conv2d(x, pid("conv2.w"), 1, 1), pid("conv2.b"));
      x = g.maxpool2d(g.relu(x), 2);
      const Shape& s = g.value(x).shape;
      x = g.reshape(x, {n, s[1] * s[2] * s[3]});
      out.logits = g.add(g.matmul(x, pid("fc.w")), pid("fc.b"));
      break;
    }
    case ArchKind::MiniWrn: {
      NodeId x = g.add(g.conv2d(out.input, pid("stem.w"), 1, 1), pid("stem.b"));
      const std::size_t m = std::size_t(cfg.width_mult);
      const std::size_t widths[3] = {16 * m, 32 * m, 64 * m};
      std::size_t in_ch = widths[0];
      for (int grp = 0; grp < 3; ++grp) {
        const std::size_t wg = widths[grp];
        const int stride = grp == 0 ? 1 : 2;
        for (int blk = 0; blk < 2; ++blk) {
          const std::string pre = "g" + std::to_string(grp + 1) + ".b" +
                                  std::to_string(blk + 1) + ".";
          const std::size_t bin = blk == 0 ? in_ch : wg;
          const int bstride = blk == 0 ? stride : 1;
          // pre-activation basic block, no norm layers
          NodeId h = g.relu(x);
          NodeId y = g.add(g.conv2d(h, pid(pre + "conv1.w"), bstride, 1),
                           pid(pre + "conv1.b"));
          y = g.relu(y);
          y = g.add(g.conv2d(y, pid(pre + "conv2.w"), 1, 1), pid(pre + "conv2.b"));
          const NodeId skip = (bin != wg || bstride != 1)
                                  ? g.conv2d(h, pid(pre + "skip.w"), bstride, 0)
                                  : x;
          x = g.add(y, skip);
        }
        in_ch = wg;
      }
      x = g.mean(g.relu(x), {2, 3});  // global average pool -> [n, 64m]
      out.logits = g.add(g.matmul(x, pid("fc.w")), pid("fc.b"));
      break;
    }
  }
  return out;
}

template ModelNodes bind_model<float>(GraphT<float>&, const ModelParams&,
                                      const TensorT<float>&);
template ModelNodes bind_model<double>(GraphT<double>&, const ModelParams&,
                                       const TensorT<double>&);

Tensor forward_logits(const ModelParams& params, const Tensor& batch) {
  Graph g;
  const ModelNodes mn = bind_model(g, params, batch);
  return g.value(mn.logits);
}

Tensor one_hot(const std::vector<int>& labels, std::size_t num_classes) {
  Tensor t = Tensor::zeros({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= num_classes)
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) +
                                  " outside 0.." + std::to_string(num_classes - 1));
    t(i, std::size_t(labels[i])) = 1.0f;
  }
  return t;
}

Tensor offclass_uniform(int label, std::size_t num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("offclass_uniform: needs at least 2 classes");
  if (label < 0 || std::size_t(label) >= num_classes)
    throw std::invalid_argument("offclass_uniform: label out of range");
  Tensor t = Tensor::full({num_classes}, 1.0f / float(num_classes - 1));
  t(std::size_t(label)) = 0.0f;
  return t;
}

OptimState make_optim(const ModelParams& params, double lr, double momentum,
                      double weight_decay, std::size_t total_epochs) {
  OptimState opt;
  opt.lr = lr;
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  opt.milestones = {total_epochs / 2, total_epochs * 3 / 4};
  opt.velocity.reserve(params.params.size());
  for (const Param& p : params.params)
    opt.velocity.push_back(Tensor::zeros(p.value.shape));
  return opt;
}

double scheduled_lr(const OptimState& opt, std::size_t epoch) {
  double lr = opt.lr;
  for (std::size_t ms : opt.milestones)
    if (epoch >= ms) lr *= opt.decay_factor;
  return lr;
}

bool sgd_step(ModelParams& params, const std::vector<Tensor>& grads,
              OptimState& opt, double lr_now) {
  if (grads.size() != params.params.size() ||
      opt.velocity.size() != params.params.size())
    throw std::invalid_argument("sgd_step: gradient/velocity count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    detail::check_same_shape(grads[i], params.params[i].value, "sgd_step");
    if (!all_finite(grads[i])) return false;  // reject, caller flags it
  }
  const float m = float(opt.momentum);
  const float lr = float(lr_now);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Param& p = params.params[i];
    const float wd = p.decay ? float(opt.weight_decay) : 0.0f;
    Tensor& v = opt.velocity[i];
    for (std::size_t j = 0; j < v.numel(); ++j) {
      v.data[j] = m * v.data[j] + (grads[i].data[j] + wd * p.value.data[j]);
      p.value.data[j] -= lr * v.data[j];
    }
  }
  return true;
}

namespace {

constexpr char kMagic[8] = {'M', '2', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, std::uint32_t(v));
  put_u32(os, std::uint32_t(v >> 32));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  return lo | (std::uint64_t(get_u32(is)) << 32);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kVersion);
  const ModelConfig& c = params.config;
  put_u32(os, std::uint32_t(c.kind));
  put_u32(os, std::uint32_t(c.in_c));
  put_u32(os, std::uint32_t(c.in_h));
  put_u32(os, std::uint32_t(c.in_w));
  put_u32(os, std::uint32_t(c.num_classes));
  put_u32(os, std::uint32_t(c.width_mult));
  put_u32(os, std::uint32_t(params.params.size()));
  for (const Param& p : params.params) {
    put_u32(os, std::uint32_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    put_u32(os, std::uint32_t(p.value.ndim()));
    for (std::size_t d : p.value.shape) put_u64(os, d);
    for (float v : p.value.data) put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  ModelParams mp;
  const std::uint32_t kind = get_u32(is);
  if (kind > std::uint32_t(ArchKind::MiniWrn))
    throw std::runtime_error("checkpoint: unknown architecture id " + std::to_string(kind));
  mp.config.kind = ArchKind(kind);
  mp.config.in_c = get_u32(is);
  mp.config.in_h = get_u32(is);
  mp.config.in_w = get_u32(is);
  mp.config.num_classes = get_u32(is);
  mp.config.width_mult = int(get_u32(is));
  mp.config.validate();

  const auto specs = param_specs(mp.config);
  const std::uint32_t count = get_u32(is);
  if (count != specs.size())
    throw std::runtime_error("checkpoint: expected " + std::to_string(specs.size()) +
                             " tensors, file has " + std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(is);
    if (name_len > 256) throw std::runtime_error("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated file");
    const std::uint32_t ndim = get_u32(is);
    if (ndim > 8) throw std::runtime_error("checkpoint: implausible rank");
    Shape shape(ndim);
    for (auto& d : shape) d = std::size_t(get_u64(is));
    if (name != specs[i].name || shape != specs[i].shape)
      throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " is " + name +
                               shape_str(shape) + ", expected " + specs[i].name +
                               shape_str(specs[i].shape));
    Tensor t(shape);
    for (auto& v : t.data) v = std::bit_cast<float>(get_u32(is));
    if (!all_finite(t))
      throw std::runtime_error("checkpoint: non-finite values in " + name);
    mp.params.push_back({name, std::move(t), specs[i].decay});
  }
  return mp;
}

}  // namespace m2at
