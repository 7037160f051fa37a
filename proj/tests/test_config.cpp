#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "m2at/config.hpp"
#include "m2at/metrics.hpp"
#include "m2at/svg.hpp"

using namespace m2at;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("run config set and serialize round-trip") {
  RunConfig cfg;
  cfg.set("run.id", "exp-3");
  cfg.set("run.seed", "42");
  cfg.set("model.arch", "mlp");
  cfg.set("train.method", "pgd_at");
  cfg.set("train.lr", "0.05");
  cfg.set("attack.epsilon", "4");
  cfg.set("attack.loss", "margin");
  cfg.set("sweep.budgets", "0,2,4");
  cfg.set("train.masking", "off");
  CHECK(cfg.run_id == "exp-3");
  CHECK(cfg.seed == 42);
  CHECK(cfg.arch == "mlp");
  CHECK(cfg.method == "pgd_at");
  CHECK(cfg.lr == 0.05);
  CHECK(cfg.epsilon255 == 4.0);
  CHECK(cfg.attack_loss == "margin");
  CHECK(cfg.sweep_budgets255 == std::vector<double>{0, 2, 4});
  CHECK(cfg.masking == false);

  // feeding the serialization back reproduces it exactly
  const std::string text = cfg.serialize();
  RunConfig redo;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    REQUIRE(eq != std::string::npos);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    while (!value.empty() && value.front() == ' ') value.erase(value.begin());
    redo.set(key, value);
  }
  CHECK(redo.serialize() == text);
}

TEST_CASE("run config rejects unknown keys and bad values by name") {
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(cfg.set("foo.bar", "1"),
                       doctest::Contains("unknown key 'foo.bar'"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cfg.set("train.lr", "fast"),
                       doctest::Contains("train.lr"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cfg.set("run.seed", "-3"), doctest::Contains("run.seed"),
                       std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("data.kind", "imagenet"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("attack.loss", "hinge"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("model.arch", "resnet50"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("train.method", "trades"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("train.epochs", "2.5"), std::invalid_argument);
}

TEST_CASE("bool and list parsers") {
  for (const char* v : {"true", "1", "yes", "on"}) CHECK(parse_bool("k", v));
  for (const char* v : {"false", "0", "no", "off"}) CHECK(!parse_bool("k", v));
  CHECK_THROWS_AS((void)parse_bool("k", "maybe"), std::invalid_argument);

  CHECK(parse_double_list("k", "1,2,3.5") == std::vector<double>{1, 2, 3.5});
  CHECK(parse_double_list("k", "8") == std::vector<double>{8});
  CHECK_THROWS_AS((void)parse_double_list("k", ""), std::invalid_argument);
  CHECK_THROWS_AS((void)parse_double_list("k", "1,,2"), std::invalid_argument);
  CHECK_THROWS_AS((void)parse_double_list("k", "1,x"), std::invalid_argument);
}

TEST_CASE("config files: comments, blanks, spacing and error locations") {
  const auto dir = temp_dir("m2at_cfg");
  const std::string path = (dir / "run.cfg").string();
  {
    std::ofstream os(path);
    os << "# a comment\n";
    os << "\n";
    os << "  train.lr = 0.02  \n";
    os << "train.epochs=7\n";
    os << "run.id = from-file\n";
    os << "train.lr = 0.03\n";  // later lines win
  }
  RunConfig cfg;
  apply_config_file(cfg, path);
  CHECK(cfg.lr == 0.03);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.run_id == "from-file");

  {
    std::ofstream os(path, std::ios::trunc);
    os << "train.lr 0.5\n";  // no '='
  }
  CHECK_THROWS_WITH_AS(apply_config_file(cfg, path), doctest::Contains(":1"),
                       std::invalid_argument);
  {
    std::ofstream os(path, std::ios::trunc);
    os << "# fine\n";
    os << "train.lr = banana\n";
  }
  try {
    apply_config_file(cfg, path);
    FAIL("expected a parse error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2") != std::string::npos);  // file location
    CHECK(msg.find("train.lr") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_config_file(cfg, (dir / "missing.cfg").string()),
                  std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("derived attack, model and train configs") {
  RunConfig cfg;
  cfg.set("attack.epsilon", "8");
  cfg.set("attack.alpha", "2");
  cfg.set("attack.rounds", "7");
  cfg.set("attack.random_start", "false");
  cfg.set("attack.loss", "margin");
  const AttackConfig a = cfg.attack_config();
  CHECK(a.epsilon == 8.0 / 255.0);
  CHECK(a.step_size == 2.0 / 255.0);
  CHECK(a.rounds == 7);
  CHECK(a.random_start == false);
  CHECK(a.loss == LossKind::Margin);
  CHECK(a.clamp_valid_range == true);

  cfg.set("model.arch", "small-cnn");
  cfg.set("model.width_mult", "2");
  const ModelConfig m = cfg.model_config(1, 12, 12, 4);
  CHECK(m.kind == ArchKind::SmallCnn);
  CHECK(m.in_c == 1);
  CHECK(m.in_h == 12);
  CHECK(m.in_w == 12);
  CHECK(m.num_classes == 4);
  CHECK(m.width_mult == 2);

  cfg.set("train.method", "ablation");
  cfg.set("train.masking", "true");
  cfg.set("train.mixing", "false");
  cfg.set("train.label_smoothing", "true");
  cfg.set("train.epochs", "9");
  cfg.set("train.batch_size", "32");
  cfg.set("train.beta_alpha", "2.5");
  cfg.set("run.seed", "19");
  cfg.set("data.augment", "true");
  const TrainConfig t = cfg.train_config(m);
  CHECK(t.model == m);
  CHECK(t.method == Method::Ablation);
  CHECK(t.ablation == AblationFlags{true, false, true});
  CHECK(t.epochs == 9);
  CHECK(t.batch_size == 32);
  CHECK(t.beta_alpha == 2.5);
  CHECK(t.seed == 19);
  CHECK(t.augment_train == true);
  CHECK(t.attack.epsilon == 8.0 / 255.0);
  CHECK(t.attack.loss == LossKind::Margin);
}

TEST_CASE("metrics lines have a fixed key order") {
  MetricsRecord r;
  r.time = 3.0;
  r.run_id = "r1";
  r.seed = 7;
  r.phase = "eval";
  r.epoch = 2;
  r.metric = "clean_acc";
  r.value = 0.5;
  r.attack = "pgd-10";
  CHECK(to_json_line(r) ==
        "{\"time\":3.0,\"run_id\":\"r1\",\"seed\":7,\"phase\":\"eval\","
        "\"epoch\":2,\"metric\":\"clean_acc\",\"value\":0.5,\"attack\":\"pgd-10\"}");
}

TEST_CASE("deterministic sinks serialize a run byte for byte") {
  const auto dir = temp_dir("m2at_metrics");
  const std::string pa = (dir / "a.jsonl").string();
  const std::string pb = (dir / "b.jsonl").string();
  for (const std::string& p : {pa, pb}) {
    MetricsSink sink(p, "run", 7);
    sink.emit("train", 0, "loss", 1.25);
    sink.emit("eval", 0, "clean_acc", 0.75, "clean");
    sink.emit("summary", -1, "best_epoch", 0.0);
    sink.flush();
    CHECK(sink.count() == 3);
  }
  const std::string a = slurp(pa);
  CHECK(a == slurp(pb));

  // the time field is the record index, so the content is fully predictable
  MetricsRecord r0;
  r0.time = 0.0;
  r0.run_id = "run";
  r0.seed = 7;
  r0.phase = "train";
  r0.epoch = 0;
  r0.metric = "loss";
  r0.value = 1.25;
  MetricsRecord r1 = r0;
  r1.time = 1.0;
  r1.phase = "eval";
  r1.metric = "clean_acc";
  r1.value = 0.75;
  r1.attack = "clean";
  MetricsRecord r2 = r0;
  r2.time = 2.0;
  r2.phase = "summary";
  r2.epoch = -1;
  r2.metric = "best_epoch";
  r2.value = 0.0;
  CHECK(a == to_json_line(r0) + "\n" + to_json_line(r1) + "\n" +
                 to_json_line(r2) + "\n");
  std::filesystem::remove_all(dir);
}

TEST_CASE("a default sink counts but writes nothing") {
  MetricsSink sink;
  sink.emit("train", 0, "loss", 1.0);
  sink.emit("train", 1, "loss", 0.5);
  sink.flush();
  CHECK(sink.count() == 2);
  CHECK(sink.path().empty());
}

TEST_CASE("svg charts are deterministic and escape markup") {
  SvgSeries s1{"pgd <a&b>", {{0, 1.0}, {8, 0.5}, {16, 0.25}}};
  SvgSeries s2{"clean", {{0, 0.9}, {8, 0.9}, {16, 0.9}}};
  const std::string svg =
      render_line_chart("acc & <eps>", "epsilon (/255)", "accuracy", {s1, s2});
  CHECK(svg.rfind("<svg ", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("acc &amp; &lt;eps&gt;") != std::string::npos);
  CHECK(svg.find("pgd &lt;a&amp;b&gt;") != std::string::npos);
  CHECK(svg.find("<a&b>") == std::string::npos);  // raw label never leaks
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("<circle") != std::string::npos);
  CHECK(svg.find("epsilon (/255)") != std::string::npos);

  const std::string again =
      render_line_chart("acc & <eps>", "epsilon (/255)", "accuracy", {s1, s2});
  CHECK(again == svg);

  CHECK_THROWS_AS((void)render_line_chart("t", "x", "y", {}), std::invalid_argument);
  CHECK_THROWS_AS((void)render_line_chart("t", "x", "y", {{"empty", {}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)render_line_chart("t", "x", "y", {s1}, 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("write_text_file writes exactly the given bytes") {
  const auto dir = temp_dir("m2at_svg_out");
  const std::string path = (dir / "chart.svg").string();
  const std::string content = "line1\nline2\n";
  write_text_file(path, content);
  CHECK(slurp(path) == content);
  CHECK_THROWS_AS(write_text_file((dir / "no" / "such" / "dir.svg").string(), "x"),
                  std::runtime_error);
  std::filesystem::remove_all(dir);
}
