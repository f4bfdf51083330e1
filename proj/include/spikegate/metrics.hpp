#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikegate/training.hpp"

namespace spikegate {

// ---------------------------------------------------------------------------
// Metric arithmetic

inline double accuracy_from_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size()) throw ShapeError("accuracy: prediction and label counts differ");
  if (predicted.empty()) throw UndefinedMetricError("accuracy of an empty split");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(predicted.size());
}

inline double asr_from_predictions(std::span<const std::size_t> predicted, std::size_t target) {
  if (predicted.empty()) throw UndefinedMetricError("ASR is undefined on an empty malicious split");
  std::size_t hit = 0;
  for (std::size_t p : predicted) hit += p == target;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(predicted.size());
}

/// MR = ASR(SNN) * 100 / ASR(ANN). May exceed 100. The ratio is taken first
/// so equal rates give exactly 100.
inline double migration_rate(double asr_snn, double asr_ann) {
  if (!(asr_ann > 0.0)) throw UndefinedMetricError("MR is undefined when the ANN ASR is zero");
  if (!(asr_snn >= 0.0)) throw UndefinedMetricError("MR needs a non-negative SNN ASR");
  return asr_snn / asr_ann * 100.0;
}

inline std::vector<std::size_t> labels_of(const Dataset& d) {
  std::vector<std::size_t> out;
  out.reserve(d.size());
  for (const auto& s : d.samples) out.push_back(s.label);
  return out;
}

/// Clean accuracy in percent; SNN predictions by output spike count.
inline double accuracy(Model& m, const Dataset& clean_test) {
  if (clean_test.empty()) throw UndefinedMetricError("accuracy of an empty split");
  return accuracy_from_predictions(predict(m, clean_test), labels_of(clean_test));
}

/// Percentage of malicious samples classified as the target class.
inline double attack_success_rate(Model& m, const Dataset& malicious_test, std::size_t target) {
  if (malicious_test.empty()) throw UndefinedMetricError("ASR is undefined on an empty malicious split");
  return asr_from_predictions(predict(m, malicious_test), target);
}

/// Monotonic wall-clock stopwatch.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Wall-clock seconds spent in `pipeline()`.
template <class F>
double time_overhead(F&& pipeline) {
  Stopwatch sw;
  pipeline();
  return sw.seconds();
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  std::string run_id;
  std::string rule;  // lrb | lrc | lrh
  int com = 0;       // 1..4 for lrh, 0 otherwise
  double pr = 0.0;
  std::string trigger_mode;
  std::string trigger_pos;
  std::size_t target_class = 0;
  std::string neuron;
  std::string surrogate;
  std::size_t T = 0;
  double acc = 0.0;
  std::optional<double> asr;
  std::optional<double> mr;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;

  void validate() const {
    if (!(acc >= 0.0 && acc <= 100.0)) throw ConfigError("report acc out of [0,100]");
    if (asr && !(*asr >= 0.0 && *asr <= 100.0)) throw ConfigError("report asr out of [0,100]");
    if (mr && !(*mr >= 0.0)) throw ConfigError("report mr negative");
  }
};

inline const char* csv_header() {
  return "run_id,rule,com,pr,trigger_mode,trigger_pos,target_class,neuron,surrogate,T,acc,asr,mr,wall_time_s,seed";
}

namespace detail {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s, const char* field) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError(std::string("bad number in field ") + field);
  return v;
}

inline std::uint64_t parse_u64(const std::string& s, const char* field) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError(std::string("bad integer in field ") + field);
  return v;
}

inline void check_csv_text(const std::string& s, const char* field) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw FormatError(std::string("field ") + field + " may not contain commas, quotes or newlines");
  }
}

}  // namespace detail

inline std::string to_csv_row(const EvalReport& r) {
  for (const auto& [v, f] : {std::pair{&r.run_id, "run_id"}, {&r.rule, "rule"}, {&r.trigger_mode, "trigger_mode"},
                             {&r.trigger_pos, "trigger_pos"}, {&r.neuron, "neuron"}, {&r.surrogate, "surrogate"}}) {
    detail::check_csv_text(*v, f);
  }
  using detail::format_double;
  std::ostringstream o;
  o << r.run_id << ',' << r.rule << ',' << r.com << ',' << format_double(r.pr) << ',' << r.trigger_mode << ','
    << r.trigger_pos << ',' << r.target_class << ',' << r.neuron << ',' << r.surrogate << ',' << r.T << ','
    << format_double(r.acc) << ',' << (r.asr ? format_double(*r.asr) : "") << ','
    << (r.mr ? format_double(*r.mr) : "") << ',' << format_double(r.wall_time_s) << ',' << r.seed;
  return o.str();
}

inline EvalReport parse_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      f.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  f.push_back(cur);
  if (f.size() != 15) throw FormatError("CSV row has " + std::to_string(f.size()) + " fields, expected 15");
  using namespace detail;
  EvalReport r;
  r.run_id = f[0];
  r.rule = f[1];
  r.com = static_cast<int>(parse_u64(f[2], "com"));
  r.pr = parse_double(f[3], "pr");
  r.trigger_mode = f[4];
  r.trigger_pos = f[5];
  r.target_class = parse_u64(f[6], "target_class");
  r.neuron = f[7];
  r.surrogate = f[8];
  r.T = parse_u64(f[9], "T");
  r.acc = parse_double(f[10], "acc");
  if (!f[11].empty()) r.asr = parse_double(f[11], "asr");
  if (!f[12].empty()) r.mr = parse_double(f[12], "mr");
  r.wall_time_s = parse_double(f[13], "wall_time_s");
  r.seed = parse_u64(f[14], "seed");
  return r;
}

inline std::string to_csv(const std::vector<EvalReport>& rows) {
  std::string out = std::string(csv_header()) + "\n";
  for (const auto& r : rows) out += to_csv_row(r) + "\n";
  return out;
}

inline std::vector<EvalReport> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) throw FormatError("unexpected CSV header");
  std::vector<EvalReport> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_csv_row(line));
  }
  return rows;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"run_id", r.run_id},   {"rule", r.rule},
                      {"com", r.com},         {"pr", r.pr},
                      {"trigger_mode", r.trigger_mode}, {"trigger_pos", r.trigger_pos},
                      {"target_class", r.target_class}, {"neuron", r.neuron},
                      {"surrogate", r.surrogate},       {"T", r.T},
                      {"acc", r.acc},         {"wall_time_s", r.wall_time_s},
                      {"seed", r.seed}};
  j["asr"] = r.asr ? nlohmann::json(*r.asr) : nlohmann::json(nullptr);
  j["mr"] = r.mr ? nlohmann::json(*r.mr) : nlohmann::json(nullptr);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.rule = j.at("rule").get<std::string>();
    r.com = j.at("com").get<int>();
    r.pr = j.at("pr").get<double>();
    r.trigger_mode = j.at("trigger_mode").get<std::string>();
    r.trigger_pos = j.at("trigger_pos").get<std::string>();
    r.target_class = j.at("target_class").get<std::size_t>();
    r.neuron = j.at("neuron").get<std::string>();
    r.surrogate = j.at("surrogate").get<std::string>();
    r.T = j.at("T").get<std::size_t>();
    r.acc = j.at("acc").get<double>();
    if (!j.at("asr").is_null()) r.asr = j.at("asr").get<double>();
    if (!j.at("mr").is_null()) r.mr = j.at("mr").get<double>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad report JSON: ") + e.what());
  }
}

}  // namespace spikegate
