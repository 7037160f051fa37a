#include "m2at/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace m2at {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for key '" + key + "'");
}

double parse_double(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v.empty()) bad_value(key, value);
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, value);
  return d;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v.empty() || v[0] == '-') bad_value(key, value);
  errno = 0;
  char* end = nullptr;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, value);
  return u;
}

int parse_int(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  errno = 0;
  char* end = nullptr;
  const long l = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || errno != 0 || end != v.c_str() + v.size()) bad_value(key, value);
  return static_cast<int>(l);
}

std::string join(const std::vector<double>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) os << ',';
    os << xs[i];
  }
  return os.str();
}

}  // namespace

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value);
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::string item;
  std::istringstream is(value);
  while (std::getline(is, item, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) bad_value(key, value);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "run.id") run_id = v;
  else if (key == "run.seed") seed = parse_u64(key, v);
  else if (key == "run.deterministic") deterministic = parse_bool(key, v);
  else if (key == "run.out_dir") out_dir = v;
  else if (key == "data.kind") {
    if (v != "synth" && v != "cifar10") bad_value(key, v);
    data_kind = v;
  } else if (key == "data.dir") data_dir = v;
  else if (key == "data.augment") augment = parse_bool(key, v);
  else if (key == "synth.classes") synth_classes = parse_u64(key, v);
  else if (key == "synth.train") synth_train = parse_u64(key, v);
  else if (key == "synth.eval") synth_eval = parse_u64(key, v);
  else if (key == "synth.channels") synth_channels = parse_u64(key, v);
  else if (key == "synth.height") synth_height = parse_u64(key, v);
  else if (key == "synth.width") synth_width = parse_u64(key, v);
  else if (key == "synth.margin") synth_margin = parse_double(key, v);
  else if (key == "model.arch") arch = arch_name(arch_from_string(v));
  else if (key == "model.width_mult") width_mult = parse_int(key, v);
  else if (key == "train.method") method = method_name(method_from_string(v));
  else if (key == "train.masking") masking = parse_bool(key, v);
  else if (key == "train.mixing") mixing = parse_bool(key, v);
  else if (key == "train.label_smoothing") label_smoothing = parse_bool(key, v);
  else if (key == "train.epochs") epochs = parse_u64(key, v);
  else if (key == "train.batch_size") batch_size = parse_u64(key, v);
  else if (key == "train.lr") lr = parse_double(key, v);
  else if (key == "train.momentum") momentum = parse_double(key, v);
  else if (key == "train.weight_decay") weight_decay = parse_double(key, v);
  else if (key == "train.beta_alpha") beta_alpha = parse_double(key, v);
  else if (key == "train.eval_rounds") eval_rounds = parse_int(key, v);
  else if (key == "train.final_rounds") final_rounds = parse_int(key, v);
  else if (key == "attack.epsilon") epsilon255 = parse_double(key, v);
  else if (key == "attack.alpha") alpha255 = parse_double(key, v);
  else if (key == "attack.rounds") rounds = parse_int(key, v);
  else if (key == "attack.random_start") random_start = parse_bool(key, v);
  else if (key == "attack.loss") {
    if (v != "cross-entropy" && v != "margin") bad_value(key, v);
    attack_loss = v;
  } else if (key == "attack.clamp") clamp_valid_range = parse_bool(key, v);
  else if (key == "eval.batch_size") eval_batch = parse_u64(key, v);
  else if (key == "sweep.budgets") sweep_budgets255 = parse_double_list(key, v);
  else if (key == "sweep.alphas") sweep_alphas255 = parse_double_list(key, v);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "run.id = " << run_id << '\n';
  os << "run.seed = " << seed << '\n';
  os << "run.deterministic = " << (deterministic ? "true" : "false") << '\n';
  os << "run.out_dir = " << out_dir << '\n';
  os << "data.kind = " << data_kind << '\n';
  os << "data.dir = " << data_dir << '\n';
  os << "data.augment = " << (augment ? "true" : "false") << '\n';
  os << "synth.classes = " << synth_classes << '\n';
  os << "synth.train = " << synth_train << '\n';
  os << "synth.eval = " << synth_eval << '\n';
  os << "synth.channels = " << synth_channels << '\n';
  os << "synth.height = " << synth_height << '\n';
  os << "synth.width = " << synth_width << '\n';
  os << "synth.margin = " << synth_margin << '\n';
  os << "model.arch = " << arch << '\n';
  os << "model.width_mult = " << width_mult << '\n';
  os << "train.method = " << method << '\n';
  os << "train.masking = " << (masking ? "true" : "false") << '\n';
  os << "train.mixing = " << (mixing ? "true" : "false") << '\n';
  os << "train.label_smoothing = " << (label_smoothing ? "true" : "false") << '\n';
  os << "train.epochs = " << epochs << '\n';
  os << "train.batch_size = " << batch_size << '\n';
  os << "train.lr = " << lr << '\n';
  os << "train.momentum = " << momentum << '\n';
  os << "train.weight_decay = " << weight_decay << '\n';
  os << "train.beta_alpha = " << beta_alpha << '\n';
  os << "train.eval_rounds = " << eval_rounds << '\n';
  os << "train.final_rounds = " << final_rounds << '\n';
  os << "attack.epsilon = " << epsilon255 << '\n';
  os << "attack.alpha = " << alpha255 << '\n';
  os << "attack.rounds = " << rounds << '\n';
  os << "attack.random_start = " << (random_start ? "true" : "false") << '\n';
  os << "attack.loss = " << attack_loss << '\n';
  os << "attack.clamp = " << (clamp_valid_range ? "true" : "false") << '\n';
  os << "eval.batch_size = " << eval_batch << '\n';
  os << "sweep.budgets = " << join(sweep_budgets255) << '\n';
  os << "sweep.alphas = " << join(sweep_alphas255) << '\n';
  return os.str();
}

AttackConfig RunConfig::attack_config() const {
  AttackConfig a;
  a.epsilon = epsilon255 / 255.0;
  a.step_size = alpha255 / 255.0;
  a.rounds = rounds;
  a.random_start = random_start;
  a.loss = attack_loss == "margin" ? LossKind::Margin : LossKind::CrossEntropy;
  a.clamp_valid_range = clamp_valid_range;
  return a;
}

ModelConfig RunConfig::model_config(std::size_t in_c, std::size_t in_h,
                                    std::size_t in_w, std::size_t num_classes) const {
  ModelConfig m;
  m.kind = arch_from_string(arch);
  m.in_c = in_c;
  m.in_h = in_h;
  m.in_w = in_w;
  m.num_classes = num_classes;
  m.width_mult = width_mult;
  return m;
}

TrainConfig RunConfig::train_config(const ModelConfig& model) const {
  TrainConfig t;
  t.model = model;
  t.method = method_from_string(method);
  t.ablation = {masking, mixing, label_smoothing};
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lr = lr;
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.attack = attack_config();
  t.beta_alpha = beta_alpha;
  t.augment_train = augment;
  t.seed = seed;
  t.eval_rounds = eval_rounds;
  t.final_rounds = final_rounds;
  return t;
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace m2at
