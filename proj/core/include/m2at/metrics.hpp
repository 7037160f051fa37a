#pragma once

#include <cstdint>
#include <fstream>
#include <string>

namespace m2at {

struct MetricsRecord {
  double time = 0.0;  // event counter when deterministic, unix seconds otherwise
  std::string run_id;
  std::uint64_t seed = 0;
  std::string phase;  // "train" | "eval" | "summary"
  long epoch = -1;    // -1 outside epoch scope
  std::string metric;
  double value = 0.0;
  std::string attack;  // "" when not attack-specific
};

// One JSONL line, fixed key order, shortest-round-trip numbers.
std::string to_json_line(const MetricsRecord& r);

// Append-only JSONL stream. In deterministic mode (the default) the time
// field is the record index, so runs with equal seeds and configs serialize
// byte for byte. A default-constructed sink drops everything.
class MetricsSink {
 public:
  MetricsSink() = default;
  MetricsSink(const std::string& path, std::string run_id, std::uint64_t seed,
              bool deterministic = true);

  void emit(const std::string& phase, long epoch, const std::string& metric,
            double value, const std::string& attack = "");
  void flush();
  const std::string& path() const { return path_; }
  std::uint64_t count() const { return counter_; }

 private:
  std::ofstream out_;
  std::string path_;
  std::string run_id_;
  std::uint64_t seed_ = 0;
  bool deterministic_ = true;
  std::uint64_t counter_ = 0;
};

}  // namespace m2at
