#include "m2at/metrics.hpp"

#include <chrono>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace m2at {

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["time"] = r.time;
  j["run_id"] = r.run_id;
  j["seed"] = r.seed;
  j["phase"] = r.phase;
  j["epoch"] = r.epoch;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["attack"] = r.attack;
  return j.dump();
}

MetricsSink::MetricsSink(const std::string& path, std::string run_id,
                         std::uint64_t seed, bool deterministic)
    : path_(path),
      run_id_(std::move(run_id)),
      seed_(seed),
      deterministic_(deterministic) {
  if (path_.empty()) return;
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("metrics: cannot open '" + path_ + "' for writing");
}

void MetricsSink::emit(const std::string& phase, long epoch,
                       const std::string& metric, double value,
                       const std::string& attack) {
  MetricsRecord r;
  if (deterministic_) {
    r.time = static_cast<double>(counter_);
  } else {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    r.time = std::chrono::duration<double>(now).count();
  }
  ++counter_;
  r.run_id = run_id_;
  r.seed = seed_;
  r.phase = phase;
  r.epoch = epoch;
  r.metric = metric;
  r.value = value;
  r.attack = attack;
  if (!out_.is_open()) return;
  out_ << to_json_line(r) << '\n';
  if (!out_) throw std::runtime_error("metrics: write failed on '" + path_ + "'");
}

void MetricsSink::flush() {
  if (out_.is_open()) out_.flush();
}

}  // namespace m2at
