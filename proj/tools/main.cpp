// m2at: train, attack and evaluate small robust classifiers from the shell.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "m2at/config.hpp"
#include "m2at/data.hpp"
#include "m2at/eval.hpp"
#include "m2at/graph.hpp"
#include "m2at/mask_mix.hpp"
#include "m2at/metrics.hpp"
#include "m2at/nn.hpp"
#include "m2at/svg.hpp"
#include "m2at/train.hpp"

namespace fs = std::filesystem;
using namespace m2at;

namespace {

constexpr const char* kDataDirEnv = "M2AT_DATA_DIR";

// ---- config plumbing ----------------------------------------------------
// Precedence: defaults < --config file < --set pairs < named flags.

struct ConfigCli {
  std::string config_path;
  std::vector<std::string> sets;
  // named flags arrive as strings; RunConfig::set validates them
  std::map<std::string, std::string> flags;
};

void add_common_options(CLI::App* cmd, ConfigCli& cc) {
  cmd->add_option("--config", cc.config_path, "key = value config file");
  cmd->add_option("--set", cc.sets, "override a config key, key=value (repeatable)");
  const struct {
    const char* flag;
    const char* key;
    const char* help;
  } named[] = {
      {"--seed", "run.seed", "rng seed"},
      {"--out", "run.out_dir", "output directory"},
      {"--data", "data.kind", "dataset: synth | cifar10"},
      {"--data-dir", "data.dir", "cifar10 root (or env M2AT_DATA_DIR)"},
      {"--arch", "model.arch", "mlp | small-cnn | mini-wrn"},
      {"--width-mult", "model.width_mult", "width multiplier"},
      {"--method", "train.method",
       "standard | pgd_at | pgd_ls | avmixup_g1 | m2at | ablation"},
      {"--epochs", "train.epochs", "training epochs"},
      {"--batch-size", "train.batch_size", "optimization batch size"},
      {"--lr", "train.lr", "initial learning rate"},
      {"--beta-alpha", "train.beta_alpha", "Beta(alpha,alpha) mixing parameter"},
      {"--epsilon", "attack.epsilon", "ball radius, 0..255 units"},
      {"--alpha", "attack.alpha", "attack step size, 0..255 units"},
      {"--rounds", "attack.rounds", "attack iterations"},
      {"--classes", "synth.classes", "synthetic class count"},
      {"--margin", "synth.margin", "synthetic margin parameter"},
  };
  for (const auto& n : named)
    cmd->add_option_function<std::string>(
        n.flag, [&cc, key = std::string(n.key)](const std::string& v) { cc.flags[key] = v; },
        n.help);
  cmd->add_option_function<std::string>(
      "--ablation",
      [&cc](const std::string& bits) {
        if (bits.size() != 3 || bits.find_first_not_of("01") != std::string::npos)
          throw CLI::ValidationError("--ablation", "expected three bits, e.g. 101");
        cc.flags["train.method"] = "ablation";
        cc.flags["train.masking"] = bits[0] == '1' ? "true" : "false";
        cc.flags["train.mixing"] = bits[1] == '1' ? "true" : "false";
        cc.flags["train.label_smoothing"] = bits[2] == '1' ? "true" : "false";
      },
      "ablation flags as bits masking/mixing/smoothing, e.g. 110");
  cmd->add_flag_function(
      "--augment",
      [&cc](std::int64_t) { cc.flags["data.augment"] = "true"; },
      "random crop + flip augmentation during training");
}

RunConfig resolve_config(const ConfigCli& cc) {
  RunConfig cfg;
  if (!cc.config_path.empty()) apply_config_file(cfg, cc.config_path);
  for (const std::string& kv : cc.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [key, value] : cc.flags) cfg.set(key, value);
  return cfg;
}

// ---- datasets -------------------------------------------------------------

struct DataSplits {
  LabeledImageSet train;
  LabeledImageSet eval;
};

DataSplits load_splits(const RunConfig& cfg, bool need_train) {
  DataSplits ds;
  if (cfg.data_kind == "synth") {
    if (need_train) {
      ds.train = synth_blobs(cfg.seed, cfg.synth_classes, cfg.synth_train,
                             cfg.synth_channels, cfg.synth_height, cfg.synth_width,
                             cfg.synth_margin, 0);
      ds.train.split = "train";
    }
    ds.eval = synth_blobs(cfg.seed, cfg.synth_classes, cfg.synth_eval,
                          cfg.synth_channels, cfg.synth_height, cfg.synth_width,
                          cfg.synth_margin, cfg.synth_train);
    ds.eval.split = "eval";
    return ds;
  }
  std::string dir = cfg.data_dir;
  if (dir.empty()) {
    const char* env = std::getenv(kDataDirEnv);
    if (env != nullptr) dir = env;
  }
  if (dir.empty())
    throw std::runtime_error(
        "cifar10: no dataset directory; pass --data-dir / data.dir or set " +
        std::string(kDataDirEnv));
  auto [tr, te] = load_cifar10(dir);
  if (need_train) ds.train = std::move(tr);
  ds.eval = std::move(te);
  return ds;
}

const LabeledImageSet& pick_split(const DataSplits& ds, const std::string& split) {
  if (split == "eval") return ds.eval;
  if (split == "train") return ds.train;
  throw std::invalid_argument("unknown split '" + split + "' (train | eval)");
}

void check_model_matches(const ModelParams& params, const LabeledImageSet& set) {
  const ModelConfig& m = params.config;
  if (set.images.shape[1] != m.in_c || set.images.shape[2] != m.in_h ||
      set.images.shape[3] != m.in_w || set.num_classes != m.num_classes)
    throw std::runtime_error(
        "checkpoint geometry does not match the dataset (model " +
        std::to_string(m.in_c) + "x" + std::to_string(m.in_h) + "x" +
        std::to_string(m.in_w) + ", " + std::to_string(m.num_classes) +
        " classes)");
}

// ---- train ----------------------------------------------------------------

int cmd_train(const ConfigCli& cc) {
  RunConfig cfg = resolve_config(cc);
  const DataSplits ds = load_splits(cfg, true);
  const std::size_t c = ds.train.images.shape[1], h = ds.train.images.shape[2],
                    w = ds.train.images.shape[3];
  const ModelConfig model = cfg.model_config(c, h, w, ds.train.num_classes);
  const TrainConfig tcfg = cfg.train_config(model);
  tcfg.validate();

  fs::create_directories(cfg.out_dir);
  write_text_file((fs::path(cfg.out_dir) / "config.txt").string(), cfg.serialize());
  if (!cc.config_path.empty()) {
    std::ifstream src(cc.config_path, std::ios::binary);
    std::ostringstream buf;
    buf << src.rdbuf();
    write_text_file((fs::path(cfg.out_dir) / "config.source.txt").string(), buf.str());
  }

  MetricsSink sink((fs::path(cfg.out_dir) / "metrics.jsonl").string(), cfg.run_id,
                   cfg.seed, cfg.deterministic);
  std::printf("train: method=%s arch=%s data=%s train=%zu eval=%zu epochs=%zu\n",
              cfg.method.c_str(), cfg.arch.c_str(), cfg.data_kind.c_str(),
              ds.train.size(), ds.eval.size(), cfg.epochs);
  const TrainResult res = train(tcfg, ds.train, ds.eval, &sink);

  save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), res.final_params);
  save_checkpoint((fs::path(cfg.out_dir) / "best.ckpt").string(), res.best_params);

  const std::string probe = "pgd-" + std::to_string(tcfg.final_rounds);
  std::printf("final: clean=%.4f robust(%s)=%.4f\n", res.final_clean, probe.c_str(),
              res.final_robust);
  std::printf("best:  epoch=%zu clean=%.4f robust(%s)=%.4f\n", res.best_epoch,
              res.best_clean, probe.c_str(), res.best_robust);
  std::printf("artifacts: %s/{config.txt,metrics.jsonl,final.ckpt,best.ckpt}\n",
              cfg.out_dir.c_str());
  return 0;
}

// ---- eval -----------------------------------------------------------------

std::vector<AttackSpec> build_specs(const RunConfig& cfg,
                                    const std::vector<std::string>& names) {
  const AttackConfig base = cfg.attack_config();
  std::vector<AttackSpec> specs;
  for (const std::string& a : names) {
    if (a == "clean") {
      specs.push_back(clean_spec());
    } else if (a == "fgsm") {
      AttackSpec s = fgsm_spec(base.epsilon);
      s.config.clamp_valid_range = base.clamp_valid_range;
      specs.push_back(s);
    } else if (a == "pgd") {
      AttackSpec s = pgd_spec(base.epsilon, base.step_size, base.rounds);
      s.config.random_start = base.random_start;
      s.config.clamp_valid_range = base.clamp_valid_range;
      specs.push_back(s);
    } else if (a == "margin") {
      AttackSpec s = margin_spec(base.epsilon, base.step_size, base.rounds);
      s.config.random_start = base.random_start;
      s.config.clamp_valid_range = base.clamp_valid_range;
      specs.push_back(s);
    } else {
      throw std::invalid_argument("unknown attack '" + a +
                                  "' (clean | fgsm | pgd | margin)");
    }
  }
  return specs;
}

int cmd_eval(const ConfigCli& cc, const std::string& model_path,
             const std::string& split, const std::vector<std::string>& attacks) {
  RunConfig cfg = resolve_config(cc);
  const ModelParams params = load_checkpoint(model_path);
  const DataSplits ds = load_splits(cfg, split == "train");
  const LabeledImageSet& set = pick_split(ds, split);
  check_model_matches(params, set);

  const EvalReport report = evaluate(params, set, build_specs(cfg, attacks), cfg.seed,
                                     cfg.eval_batch, model_path);
  std::printf("model=%s split=%s samples=%zu\n", model_path.c_str(), split.c_str(),
              report.sample_count);
  for (const EvalEntry& e : report.entries) {
    if (e.attack == "clean")
      std::printf("%-12s %26s acc=%.4f (%zu/%zu)\n", e.attack.c_str(), "", e.accuracy,
                  e.correct, e.total);
    else
      std::printf("%-12s eps=%-7.3g alpha=%-7.3g acc=%.4f (%zu/%zu)\n",
                  e.attack.c_str(), e.epsilon * 255.0, e.step_size * 255.0, e.accuracy,
                  e.correct, e.total);
  }
  return 0;
}

// ---- attack ---------------------------------------------------------------

int cmd_attack(const ConfigCli& cc, const std::string& model_path,
               const std::string& split, const std::string& kind,
               const std::string& save_path) {
  RunConfig cfg = resolve_config(cc);
  const ModelParams params = load_checkpoint(model_path);
  const DataSplits ds = load_splits(cfg, split == "train");
  const LabeledImageSet& set = pick_split(ds, split);
  check_model_matches(params, set);

  const std::vector<AttackSpec> specs = build_specs(cfg, {std::string("clean"), kind});
  const EvalReport report =
      evaluate(params, set, specs, cfg.seed, cfg.eval_batch, model_path);
  const EvalEntry& clean = report.entries[0];
  const EvalEntry& adv = report.entries[1];

  // regenerate the perturbed set to report delta statistics / export it
  const AttackConfig base = specs[1].config;
  Rng root(cfg.seed);
  LabeledImageSet out = set;
  double max_delta = 0.0;
  std::size_t failed = 0;
  const std::size_t n = set.size();
  const std::size_t row = set.images.numel() / n;
  std::size_t bi = 0;
  for (std::size_t begin = 0; begin < n; begin += cfg.eval_batch, ++bi) {
    const std::size_t count = std::min(cfg.eval_batch, n - begin);
    Tensor xb({count, set.images.shape[1], set.images.shape[2], set.images.shape[3]});
    std::copy_n(set.images.data.begin() + static_cast<std::ptrdiff_t>(begin * row),
                count * row, xb.data.begin());
    const std::vector<int> yb(set.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                              set.labels.begin() +
                                  static_cast<std::ptrdiff_t>(begin + count));
    AttackResult res;
    Rng sub = root.substream(bi);
    if (specs[1].kind == AttackKind::Fgsm)
      res = fgsm(params, xb, yb, base.epsilon, base.clamp_valid_range);
    else if (specs[1].kind == AttackKind::MarginPgd)
      res = margin_pgd(params, xb, yb, base, &sub);
    else
      res = pgd(params, xb, yb, base, &sub);
    failed += res.failed_samples.size();
    for (std::size_t i = 0; i < count * row; ++i) {
      const double d = std::abs(static_cast<double>(res.adversarial.data[i]) -
                                static_cast<double>(xb.data[i]));
      max_delta = std::max(max_delta, d);
    }
    std::copy_n(res.adversarial.data.begin(), count * row,
                out.images.data.begin() + static_cast<std::ptrdiff_t>(begin * row));
  }

  std::printf("model=%s split=%s samples=%zu attack=%s\n", model_path.c_str(),
              split.c_str(), n, adv.attack.c_str());
  std::printf("clean acc=%.4f adversarial acc=%.4f success=%.4f\n", clean.accuracy,
              adv.accuracy, 1.0 - adv.accuracy);
  std::printf("max |delta| = %.6f (%.3f/255), budget %.3f/255, failed rows %zu\n",
              max_delta, max_delta * 255.0, base.epsilon * 255.0, failed);
  if (!save_path.empty()) {
    out.split = "adversarial";
    write_cifar_records(save_path, out);
    std::printf("wrote %s (pixels quantized to the 1/255 container grid)\n",
                save_path.c_str());
  }
  return 0;
}

// ---- sweep ----------------------------------------------------------------

int cmd_sweep(const ConfigCli& cc, const std::string& model_path,
              const std::string& split) {
  RunConfig cfg = resolve_config(cc);
  const ModelParams params = load_checkpoint(model_path);
  const DataSplits ds = load_splits(cfg, split == "train");
  const LabeledImageSet& set = pick_split(ds, split);
  check_model_matches(params, set);

  const std::vector<SweepPoint> points =
      epsilon_sweep(params, set, cfg.attack_config(), cfg.sweep_budgets255,
                    cfg.sweep_alphas255, cfg.seed, cfg.eval_batch);

  fs::create_directories(cfg.out_dir);
  // CSV, budgets and steps in 0..255 units
  std::ostringstream csv;
  csv << "series,epsilon,alpha,attack,accuracy\n";
  char line[256];
  for (const SweepPoint& p : points) {
    std::snprintf(line, sizeof line, "%s,%g,%g,%s,%.6f\n", p.series.c_str(),
                  p.epsilon255, p.alpha255, p.attack.c_str(), p.accuracy);
    csv << line;
  }
  const std::string csv_path = (fs::path(cfg.out_dir) / "sweep.csv").string();
  write_text_file(csv_path, csv.str());

  std::ostringstream jsonl;
  for (const SweepPoint& p : points) {
    nlohmann::ordered_json j;
    j["series"] = p.series;
    j["epsilon"] = p.epsilon255;
    j["alpha"] = p.alpha255;
    j["attack"] = p.attack;
    j["accuracy"] = p.accuracy;
    jsonl << j.dump() << '\n';
  }
  const std::string jsonl_path = (fs::path(cfg.out_dir) / "sweep.jsonl").string();
  write_text_file(jsonl_path, jsonl.str());

  std::vector<SvgSeries> series;
  for (const SweepPoint& p : points) {
    SvgSeries* s = nullptr;
    for (SvgSeries& existing : series)
      if (existing.label == p.series) s = &existing;
    if (s == nullptr) {
      series.push_back({p.series, {}});
      s = &series.back();
    }
    s->points.emplace_back(p.epsilon255, p.accuracy);
  }
  const std::string svg_path = (fs::path(cfg.out_dir) / "sweep.svg").string();
  write_text_file(svg_path,
                  render_line_chart("accuracy under attack", "epsilon (/255)",
                                    "accuracy", series));

  std::printf("sweep: %zu points over %zu budgets\n", points.size(),
              cfg.sweep_budgets255.size());
  std::printf("artifacts: %s %s %s\n", csv_path.c_str(), jsonl_path.c_str(),
              svg_path.c_str());
  return 0;
}

// ---- transfer ---------------------------------------------------------------

int cmd_transfer(const ConfigCli& cc, const std::vector<std::string>& model_args,
                 const std::string& split) {
  RunConfig cfg = resolve_config(cc);
  if (model_args.size() < 2)
    throw std::invalid_argument("transfer needs at least two --model arguments");
  std::vector<std::pair<std::string, ModelParams>> loaded;
  for (const std::string& arg : model_args) {
    const std::size_t eq = arg.find('=');
    const std::string name =
        eq == std::string::npos ? fs::path(arg).stem().string() : arg.substr(0, eq);
    const std::string path = eq == std::string::npos ? arg : arg.substr(eq + 1);
    loaded.emplace_back(name, load_checkpoint(path));
  }
  const DataSplits ds = load_splits(cfg, split == "train");
  const LabeledImageSet& set = pick_split(ds, split);
  std::vector<NamedModel> models;
  for (auto& [name, params] : loaded) {
    check_model_matches(params, set);
    models.push_back({name, &params});
  }

  const TransferResult tr =
      transfer_matrix(models, set, cfg.attack_config(), cfg.seed, cfg.eval_batch);

  std::printf("transfer on %zu samples; rows defend, columns attack\n", tr.total);
  std::printf("%-16s", "");
  for (const std::string& n : tr.names) std::printf(" %12s", n.c_str());
  std::printf("\n");
  for (std::size_t d = 0; d < tr.names.size(); ++d) {
    std::printf("%-16s", tr.names[d].c_str());
    for (std::size_t a = 0; a < tr.names.size(); ++a)
      std::printf(" %12.4f", tr.accuracy[d][a]);
    std::printf("\n");
  }

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ostringstream csv;
    csv << "defender,attacker,accuracy,correct,total\n";
    char line[256];
    for (std::size_t d = 0; d < tr.names.size(); ++d)
      for (std::size_t a = 0; a < tr.names.size(); ++a) {
        std::snprintf(line, sizeof line, "%s,%s,%.6f,%zu,%zu\n", tr.names[d].c_str(),
                      tr.names[a].c_str(), tr.accuracy[d][a], tr.correct[d][a],
                      tr.total);
        csv << line;
      }
    const std::string path = (fs::path(cfg.out_dir) / "transfer.csv").string();
    write_text_file(path, csv.str());
    std::printf("artifacts: %s\n", path.c_str());
  }
  return 0;
}

// ---- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const ConfigCli& cc, std::size_t batch, double tolerance,
                  double step, const std::string& loss_kind) {
  RunConfig cfg = resolve_config(cc);
  const LabeledImageSet set =
      synth_blobs(cfg.seed, cfg.synth_classes, batch, cfg.synth_channels,
                  cfg.synth_height, cfg.synth_width, cfg.synth_margin, 0);
  const ModelConfig model =
      cfg.model_config(cfg.synth_channels, cfg.synth_height, cfg.synth_width,
                       cfg.synth_classes);
  const ModelParams params = init_params(model, cfg.seed);

  GraphT<double> g;
  const ModelNodes mn = bind_model(g, params, tensor_cast<double>(set.images));
  const NodeId targets = g.leaf(tensor_cast<double>(one_hot(set.labels, model.num_classes)));
  const NodeId loss = loss_kind == "margin"
                          ? g.margin_loss(mn.logits, targets)
                          : g.softmax_cross_entropy(mn.logits, targets);

  std::vector<GradCheckEntry> wrt;
  for (std::size_t i = 0; i < params.params.size(); ++i)
    wrt.push_back({params.params[i].name, mn.params[i]});
  const GradCheckReport report = grad_check(g, loss, wrt, tolerance, step);

  std::printf("gradcheck arch=%s loss=%s batch=%zu step=%g tolerance=%g\n",
              cfg.arch.c_str(), loss_kind.c_str(), batch, step, tolerance);
  for (const auto& p : report.params)
    std::printf("  %-24s max_rel_err=%.3e (flat index %zu)\n", p.name.c_str(),
                p.max_rel_err, p.worst_index);
  std::printf("overall max_rel_err=%.3e -> %s\n", report.max_rel_err,
              report.pass ? "pass" : "FAIL");
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masking-and-mixing adversarial training laboratory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "m2at 0.1.0");

  ConfigCli cc_train, cc_eval, cc_attack, cc_sweep, cc_transfer, cc_grad;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common_options(train_cmd, cc_train);

  CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy under a set of attacks");
  add_common_options(eval_cmd, cc_eval);
  std::string eval_model, eval_split = "eval";
  std::vector<std::string> eval_attacks = {"clean", "fgsm", "pgd", "margin"};
  eval_cmd->add_option("--model", eval_model, "checkpoint path")->required();
  eval_cmd->add_option("--split", eval_split, "train | eval");
  eval_cmd->add_option("--attacks", eval_attacks,
                       "subset of: clean fgsm pgd margin")
      ->delimiter(',');

  CLI::App* attack_cmd =
      app.add_subcommand("attack", "craft adversarial examples for a checkpoint");
  add_common_options(attack_cmd, cc_attack);
  std::string atk_model, atk_split = "eval", atk_kind = "pgd", atk_save;
  attack_cmd->add_option("--model", atk_model, "checkpoint path")->required();
  attack_cmd->add_option("--split", atk_split, "train | eval");
  attack_cmd->add_option("--kind", atk_kind, "fgsm | pgd | margin");
  attack_cmd->add_option("--save", atk_save, "write perturbed set to this file");

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "accuracy across attack budgets, csv/jsonl/svg");
  add_common_options(sweep_cmd, cc_sweep);
  std::string sweep_model, sweep_split = "eval";
  sweep_cmd->add_option("--model", sweep_model, "checkpoint path")->required();
  sweep_cmd->add_option("--split", sweep_split, "train | eval");

  CLI::App* transfer_cmd =
      app.add_subcommand("transfer", "cross-model attack transfer matrix");
  add_common_options(transfer_cmd, cc_transfer);
  std::vector<std::string> transfer_models;
  std::string transfer_split = "eval";
  transfer_cmd
      ->add_option("--model", transfer_models, "name=checkpoint (two or more)")
      ->required();
  transfer_cmd->add_option("--split", transfer_split, "train | eval");

  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "compare backward against central differences");
  add_common_options(grad_cmd, cc_grad);
  std::size_t grad_batch = 4;
  double grad_tol = 1e-4, grad_step = 1e-5;
  std::string grad_loss = "cross-entropy";
  grad_cmd->add_option("--batch", grad_batch, "batch size for the probe");
  grad_cmd->add_option("--tolerance", grad_tol, "max relative error allowed");
  grad_cmd->add_option("--step", grad_step, "central difference step");
  grad_cmd->add_option("--loss", grad_loss, "cross-entropy | margin");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(cc_train);
    if (eval_cmd->parsed()) return cmd_eval(cc_eval, eval_model, eval_split, eval_attacks);
    if (attack_cmd->parsed())
      return cmd_attack(cc_attack, atk_model, atk_split, atk_kind, atk_save);
    if (sweep_cmd->parsed()) return cmd_sweep(cc_sweep, sweep_model, sweep_split);
    if (transfer_cmd->parsed())
      return cmd_transfer(cc_transfer, transfer_models, transfer_split);
    if (grad_cmd->parsed())
      return cmd_gradcheck(cc_grad, grad_batch, grad_tol, grad_step, grad_loss);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
