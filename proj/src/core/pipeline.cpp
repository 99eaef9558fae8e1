#include "core/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/tensor_io.hpp"

namespace pistm {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_condition(double re) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", re);
  return buf;
}

// Stable per-condition stream: independent of the condition's position in the
// design, so editing the set never reseeds the survivors.
std::uint64_t mix_condition_seed(std::uint64_t base, double re, std::uint64_t salt) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &re, sizeof bits);
  const std::uint64_t h0 = 0xcbf29ce484222325ULL ^ base ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
  return fnv1a64(&bits, sizeof bits, h0);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// Rethrows with the stage and condition attached, category preserved.
template <typename Fn>
void with_stage_context(const std::string& stage, const std::string& what, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    throw Error(e.category(), "stage " + stage + (what.empty() ? "" : ", " + what) + ": " +
                                  e.what());
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const fs::path& file) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("bad_format", "malformed number '" + s + "' in " + file.string());
  }
}

long parse_long(const std::string& s, const fs::path& file) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("bad_format", "malformed integer '" + s + "' in " + file.string());
  }
}

void finalize_aggregates(ConditionMetrics& m) {
  auto agg = [](const std::vector<double>& v, double& mx, double& mean) {
    mx = 0.0;
    mean = 0.0;
    for (double x : v) {
      mx = std::max(mx, x);
      mean += x;
    }
    if (!v.empty()) mean /= static_cast<double>(v.size());
  };
  agg(m.eps_e, m.max_eps_e, m.mean_eps_e);
  agg(m.eps_ke, m.max_eps_ke, m.mean_eps_ke);
  agg(m.eps_k, m.max_eps_k, m.mean_eps_k);
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  if (!j.is_object()) throw ContractError(std::string("config section ") + where + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ContractError("unknown config key '" + item.key() + "' in " + where);
    }
  }
}

// ---- stage records ----------------------------------------------------

struct StageInputRec {
  std::string path;            // relative to the experiment root
  std::string hash;            // producer's content hash
  std::string kind;            // simulation | koopman | emulated | model | table
  std::string condition_kind;  // "", "train", "test"
  double condition = -1.0;
  bool has_condition = false;
  long t_min = 0, t_max = 0;
  bool has_trange = false;
};

nlohmann::json input_to_json(const StageInputRec& in) {
  nlohmann::json j;
  j["path"] = in.path;
  j["hash"] = in.hash;
  j["kind"] = in.kind;
  if (!in.condition_kind.empty()) j["condition_kind"] = in.condition_kind;
  if (in.has_condition) j["condition"] = in.condition;
  if (in.has_trange) {
    j["t_min"] = in.t_min;
    j["t_max"] = in.t_max;
  }
  return j;
}

std::string compute_key(const std::string& stage, const nlohmann::json& cfg,
                        const std::vector<StageInputRec>& inputs) {
  std::string s = stage + "\n" + cfg.dump() + "\n";
  for (const StageInputRec& in : inputs) s += in.path + ":" + in.hash + "\n";
  return hash_hex(fnv1a64(s.data(), s.size()));
}

std::map<std::string, std::string> hash_outputs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "stage.json" || name == "timing.json") continue;
    out[name] = hash_hex(hash_file(entry.path()));
  }
  return out;
}

std::string content_hash_of(const std::map<std::string, std::string>& outputs) {
  std::string s;
  for (const auto& [name, hash] : outputs) s += name + ":" + hash + ";";
  return hash_hex(fnv1a64(s.data(), s.size()));
}

struct StageRecord {
  std::string stage;
  std::string role;  // data | training | prediction | evaluation | report
  std::string key;
  nlohmann::json config;
  std::vector<StageInputRec> inputs;
  std::string quarantine;  // "evaluation-only" fences truth at t >= window.t
  double condition = -1.0;
  bool has_condition = false;
  std::string condition_kind;
};

// Hashes the artifact files already present in dir, then writes stage.json.
void write_stage_record(const fs::path& dir, const StageRecord& rec) {
  const std::map<std::string, std::string> outputs = hash_outputs(dir);
  nlohmann::json j;
  j["stage"] = rec.stage;
  j["role"] = rec.role;
  j["key"] = rec.key;
  j["config"] = rec.config;
  nlohmann::json ins = nlohmann::json::array();
  for (const StageInputRec& in : rec.inputs) ins.push_back(input_to_json(in));
  j["inputs"] = ins;
  if (!rec.quarantine.empty()) j["quarantine"] = rec.quarantine;
  if (rec.has_condition) {
    j["condition"] = rec.condition;
    j["condition_kind"] = rec.condition_kind;
  }
  nlohmann::json outs;
  for (const auto& [name, hash] : outputs) outs[name] = hash;
  j["outputs"] = outs;
  j["content_hash"] = content_hash_of(outputs);
  write_json_file(dir / "stage.json", j);
}

bool stage_up_to_date(const fs::path& dir, const std::string& key) {
  const fs::path record = dir / "stage.json";
  if (!fs::exists(record)) return false;
  nlohmann::json j;
  try {
    j = read_json_file(record);
  } catch (const Error&) {
    return false;
  }
  if (!j.contains("key") || j["key"] != key) return false;
  if (!j.contains("outputs") || !j["outputs"].is_object()) return false;
  std::map<std::string, std::string> want;
  for (const auto& item : j["outputs"].items()) want[item.key()] = item.value().get<std::string>();
  return hash_outputs(dir) == want;
}

std::string artifact_hash(const fs::path& dir) {
  const fs::path record = dir / "stage.json";
  if (!fs::exists(record)) {
    throw IoError("missing_input", "expected artifact at " + dir.string() +
                                       "; run the producing stage first");
  }
  const nlohmann::json j = read_json_file(record);
  if (!j.contains("content_hash")) {
    throw IoError("bad_manifest", "artifact record at " + dir.string() + " lacks a content hash");
  }
  return j["content_hash"].get<std::string>();
}

void write_timing_sidecar(const fs::path& dir, double seconds) {
  nlohmann::json j;
  j["seconds"] = seconds;
  write_json_file(dir / "timing.json", j);
}

double read_timing_sidecar(const fs::path& dir) {
  const fs::path file = dir / "timing.json";
  if (!fs::exists(file)) {
    throw IoError("missing_input", "no timing record at " + file.string());
  }
  return read_json_file(file).at("seconds").get<double>();
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

// ---- sampling and design ------------------------------------------------

std::vector<double> lhs_sample(std::size_t n, double lo, double hi, std::uint64_t seed) {
  if (n < 1) throw ContractError("lhs sample needs n >= 1");
  if (!(lo < hi)) {
    throw ContractError("lhs sample needs lo < hi, got [" + fmt_double(lo) + ", " +
                        fmt_double(hi) + "]");
  }
  Rng rng = make_rng(seed);
  const double width = (hi - lo) / static_cast<double>(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = lo + (static_cast<double>(i) + uniform(rng, 0.0, 1.0)) * width;
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

void TimeWindow::validate() const {
  if (history <= 1) {
    throw ContractError("window history must exceed 1, got " + std::to_string(history));
  }
}

void DoeConfig::validate() const {
  if (n < 1) throw ContractError("design needs at least one training condition");
  if (!(lo < hi)) throw ContractError("design range needs lo < hi");
  std::set<double> seen;
  for (double re : test) {
    if (!(re > lo && re < hi)) {
      throw ContractError("test condition " + fmt_double(re) + " outside (" + fmt_double(lo) +
                          ", " + fmt_double(hi) + ")");
    }
    if (!seen.insert(re).second) {
      throw ContractError("duplicate test condition " + fmt_double(re));
    }
  }
}

void DesignOfExperiments::validate() const {
  std::set<double> train_set;
  for (double re : train) {
    if (!(re > lo && re < hi)) {
      throw ContractError("training condition " + fmt_double(re) + " outside (" + fmt_double(lo) +
                          ", " + fmt_double(hi) + ")");
    }
    train_set.insert(re);
  }
  for (double re : test) {
    if (!(re > lo && re < hi)) {
      throw ContractError("test condition " + fmt_double(re) + " outside (" + fmt_double(lo) +
                          ", " + fmt_double(hi) + ")");
    }
    if (train_set.count(re)) {
      throw ContractError("condition " + fmt_double(re) + " appears in both train and test sets");
    }
  }
}

DesignOfExperiments make_doe(const DoeConfig& cfg) {
  cfg.validate();
  DesignOfExperiments doe;
  doe.lo = cfg.lo;
  doe.hi = cfg.hi;
  doe.seed = cfg.seed;
  doe.train = lhs_sample(cfg.n, cfg.lo, cfg.hi, cfg.seed);
  doe.test = cfg.test;
  doe.validate();
  return doe;
}

void save_doe(const DesignOfExperiments& doe, const fs::path& file) {
  nlohmann::json j;
  j["lo"] = doe.lo;
  j["hi"] = doe.hi;
  j["seed"] = doe.seed;
  j["train"] = doe.train;
  j["test"] = doe.test;
  write_json_file(file, j);
}

DesignOfExperiments load_doe(const fs::path& file) {
  if (!fs::exists(file)) throw IoError("missing_input", "no design file at " + file.string());
  const nlohmann::json j = read_json_file(file);
  DesignOfExperiments doe;
  doe.lo = j.at("lo").get<double>();
  doe.hi = j.at("hi").get<double>();
  doe.seed = j.at("seed").get<std::uint64_t>();
  doe.train = j.at("train").get<std::vector<double>>();
  doe.test = j.at("test").get<std::vector<double>>();
  doe.validate();
  return doe;
}

// ---- metrics --------------------------------------------------------------

double relative_error(const FlowFieldSequence& pred, const FlowFieldSequence& ref, long t) {
  if (pred.height() != ref.height() || pred.width() != ref.width()) {
    throw ShapeError("relative error needs matching grids, got " +
                     shape_to_string({pred.height(), pred.width()}) + " vs " +
                     shape_to_string({ref.height(), ref.width()}));
  }
  return relative_frobenius_error(pred.frame_at(t), ref.frame_at(t));
}

ConditionMetrics compute_metrics(double re, const FlowFieldSequence& truth,
                                 const FlowFieldSequence& koopman,
                                 const FlowFieldSequence& emulated, const TimeWindow& window) {
  window.validate();
  auto check_cover = [&](const FlowFieldSequence& s, const char* name) {
    if (s.t_start > window.t || s.t_end() < window.last()) {
      throw ContractError(std::string(name) + " sequence covers [" + std::to_string(s.t_start) +
                          ", " + std::to_string(s.t_end()) + "], window needs [" +
                          std::to_string(window.t) + ", " + std::to_string(window.last()) + "]");
    }
  };
  check_cover(truth, "truth");
  check_cover(koopman, "koopman");
  check_cover(emulated, "emulated");

  ConditionMetrics m;
  m.re = re;
  for (long t = window.t; t <= window.last(); ++t) {
    m.t.push_back(t);
    m.eps_e.push_back(relative_error(emulated, truth, t));
    m.eps_ke.push_back(relative_error(emulated, koopman, t));
    m.eps_k.push_back(relative_error(koopman, truth, t));
  }
  finalize_aggregates(m);
  return m;
}

std::string metrics_csv(const ErrorReport& report) {
  std::string out = "re,t,eps_E,eps_KE,eps_K\n";
  for (const ConditionMetrics& m : report.conditions) {
    for (std::size_t i = 0; i < m.t.size(); ++i) {
      out += fmt_double(m.re) + "," + std::to_string(m.t[i]) + "," + fmt_double(m.eps_e[i]) +
             "," + fmt_double(m.eps_ke[i]) + "," + fmt_double(m.eps_k[i]) + "\n";
    }
  }
  return out;
}

std::string timing_csv(const ErrorReport& report) {
  std::string out = "re,simulate_seconds,predict_seconds,speedup\n";
  for (const TimingRow& r : report.timing) {
    out += fmt_double(r.re) + "," + fmt_double(r.simulate_seconds) + "," +
           fmt_double(r.predict_seconds) + "," + fmt_double(r.speedup) + "\n";
  }
  return out;
}

ErrorReport load_metrics_csv(const fs::path& file) {
  if (!fs::exists(file)) throw IoError("missing_input", "no metrics file at " + file.string());
  const std::vector<std::string> lines = split_lines(read_text_file(file));
  if (lines.empty() || lines[0] != "re,t,eps_E,eps_KE,eps_K") {
    throw IoError("bad_format", "metrics file " + file.string() + " has an unexpected header");
  }
  ErrorReport report;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cols = split_csv_line(lines[i]);
    if (cols.size() != 5) {
      throw IoError("bad_format", "metrics row " + std::to_string(i) + " has " +
                                      std::to_string(cols.size()) + " columns");
    }
    const double re = parse_double(cols[0], file);
    if (report.conditions.empty() || report.conditions.back().re != re) {
      report.conditions.emplace_back();
      report.conditions.back().re = re;
    }
    ConditionMetrics& m = report.conditions.back();
    m.t.push_back(parse_long(cols[1], file));
    m.eps_e.push_back(parse_double(cols[2], file));
    m.eps_ke.push_back(parse_double(cols[3], file));
    m.eps_k.push_back(parse_double(cols[4], file));
  }
  for (ConditionMetrics& m : report.conditions) finalize_aggregates(m);
  return report;
}

std::vector<TimingRow> load_timing_csv(const fs::path& file) {
  if (!fs::exists(file)) throw IoError("missing_input", "no timing file at " + file.string());
  const std::vector<std::string> lines = split_lines(read_text_file(file));
  if (lines.empty() || lines[0] != "re,simulate_seconds,predict_seconds,speedup") {
    throw IoError("bad_format", "timing file " + file.string() + " has an unexpected header");
  }
  std::vector<TimingRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cols = split_csv_line(lines[i]);
    if (cols.size() != 4) {
      throw IoError("bad_format", "timing row " + std::to_string(i) + " has " +
                                      std::to_string(cols.size()) + " columns");
    }
    TimingRow r;
    r.re = parse_double(cols[0], file);
    r.simulate_seconds = parse_double(cols[1], file);
    r.predict_seconds = parse_double(cols[2], file);
    r.speedup = parse_double(cols[3], file);
    rows.push_back(r);
  }
  return rows;
}

// ---- surrogate prediction ---------------------------------------------

SurrogatePrediction predict_surrogate(const ConvAutoencoder& rom, const GPBundle& bundle,
                                      double re, const TimeWindow& window) {
  window.validate();
  if (rom.code_dim != bundle.code_dim) {
    throw ContractError("decoder code dimension " + std::to_string(rom.code_dim) +
                        " does not match the regressor bundle's " +
                        std::to_string(bundle.code_dim));
  }
  SurrogatePrediction out;
  const std::size_t frames = window.horizon + 1;
  out.sequence.fields = Tensor({frames, rom.height, rom.width});
  out.sequence.t_start = window.t;
  out.sequence.source = FieldSource::Emulated;
  for (std::size_t s = 0; s < frames; ++s) {
    const BundlePrediction p = bundle.predict(re, window.t + static_cast<long>(s));
    out.extrapolated = out.extrapolated || p.extrapolated;
    const Tensor field = rom.decode(p.mean);
    const std::size_t hw = rom.height * rom.width;
    double* dst = out.sequence.fields.data() + s * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = field[i];
  }
  out.sequence = clamp_non_negative(std::move(out.sequence));
  return out;
}

// ---- sequence persistence ----------------------------------------------

void save_sequence(const fs::path& dir, const FlowFieldSequence& seq, double re) {
  nlohmann::json meta;
  meta["kind"] = "flow-sequence";
  meta["t_start"] = seq.t_start;
  meta["source"] = to_string(seq.source);
  if (re > 0.0) meta["re"] = re;
  save_checkpoint(dir, {{"fields", &seq.fields}}, meta);
}

FlowFieldSequence load_sequence(const fs::path& dir, double* re_out) {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors = load_checkpoint(dir, &meta);
  if (!meta.contains("kind") || meta["kind"] != "flow-sequence") {
    throw IoError("bad_manifest", "checkpoint at " + dir.string() + " is not a field sequence");
  }
  auto it = tensors.find("fields");
  if (it == tensors.end()) {
    throw IoError("bad_manifest", "sequence at " + dir.string() + " lacks its frame stack");
  }
  if (it->second.ndim() != 3) {
    throw IoError("bad_manifest", "sequence frames must be [n_t, H, W], got " +
                                      shape_to_string(it->second.dims()));
  }
  FlowFieldSequence seq;
  seq.fields = std::move(it->second);
  seq.t_start = meta.at("t_start").get<long>();
  seq.source = field_source_from_string(meta.at("source").get<std::string>());
  if (re_out) *re_out = meta.contains("re") ? meta["re"].get<double>() : -1.0;
  return seq;
}

FlowFieldSequence slice_sequence(const FlowFieldSequence& seq, long t_lo, long t_hi) {
  if (t_lo > t_hi || t_lo < seq.t_start || t_hi > seq.t_end()) {
    throw ContractError("slice [" + std::to_string(t_lo) + ", " + std::to_string(t_hi) +
                        "] outside sequence range [" + std::to_string(seq.t_start) + ", " +
                        std::to_string(seq.t_end()) + "]");
  }
  const std::size_t h = seq.height(), w = seq.width();
  const std::size_t frames = static_cast<std::size_t>(t_hi - t_lo) + 1;
  const std::size_t first = static_cast<std::size_t>(t_lo - seq.t_start);
  FlowFieldSequence out;
  out.fields = Tensor({frames, h, w});
  out.t_start = t_lo;
  out.source = seq.source;
  const std::size_t hw = h * w;
  std::memcpy(out.fields.data(), seq.fields.data() + first * hw, frames * hw * sizeof(double));
  return out;
}

FlowFieldSequence clamp_non_negative(FlowFieldSequence seq) {
  for (std::size_t i = 0; i < seq.fields.size(); ++i) {
    if (seq.fields[i] < 0.0) seq.fields[i] = 0.0;
  }
  return seq;
}

// ---- rendering -----------------------------------------------------------

Tensor absolute_difference(const Tensor& a, const Tensor& b) {
  if (!a.same_dims(b)) {
    throw ShapeError("field difference needs matching dims, got " + shape_to_string(a.dims()) +
                     " vs " + shape_to_string(b.dims()));
  }
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::abs(a[i] - b[i]);
  return out;
}

std::string render_p6(const Tensor& field, double* min_out, double* max_out) {
  if (field.ndim() != 2) {
    throw ShapeError("renderer takes a single [H, W] field, got " +
                     shape_to_string(field.dims()));
  }
  field.require_finite("render");
  const std::size_t h = field.dim(0), w = field.dim(1);
  const double lo = field.min(), hi = field.max();
  if (min_out) *min_out = lo;
  if (max_out) *max_out = hi;
  const double span = hi - lo;

  static constexpr double stops[5][3] = {{0, 0, 4},
                                         {87, 16, 110},
                                         {188, 55, 84},
                                         {249, 142, 9},
                                         {252, 255, 164}};
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t y = h - 1 - r;
    for (std::size_t x = 0; x < w; ++x) {
      const double v = span > 0.0 ? (field.at(y, x) - lo) / span : 0.0;
      const double u = std::clamp(v, 0.0, 1.0) * 4.0;
      const std::size_t seg = std::min<std::size_t>(3, static_cast<std::size_t>(u));
      const double f = u - static_cast<double>(seg);
      for (int c = 0; c < 3; ++c) {
        const double ch = stops[seg][c] + f * (stops[seg + 1][c] - stops[seg][c]);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(ch))));
      }
    }
  }
  return out;
}

// ---- experiment configuration -------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  check_keys(j, {"doe", "window", "sim", "kae", "rom", "gp", "threads"}, "config");
  if (j.contains("doe")) {
    const nlohmann::json& d = j["doe"];
    check_keys(d, {"n", "lo", "hi", "test", "seed"}, "doe");
    c.doe.n = d.value("n", c.doe.n);
    c.doe.lo = d.value("lo", c.doe.lo);
    c.doe.hi = d.value("hi", c.doe.hi);
    c.doe.test = d.value("test", c.doe.test);
    c.doe.seed = d.value("seed", c.doe.seed);
  }
  if (j.contains("window")) {
    const nlohmann::json& w = j["window"];
    check_keys(w, {"t", "history", "horizon"}, "window");
    c.window.t = w.value("t", c.window.t);
    c.window.history = w.value("history", c.window.history);
    c.window.horizon = w.value("horizon", c.window.horizon);
  }
  if (j.contains("sim")) {
    const nlohmann::json& s = j["sim"];
    check_keys(s, {"height", "width", "warmup", "interval", "u_in", "seed"}, "sim");
    c.grid_height = s.value("height", c.grid_height);
    c.grid_width = s.value("width", c.grid_width);
    c.warmup = s.value("warmup", c.warmup);
    c.interval = s.value("interval", c.interval);
    c.u_in = s.value("u_in", c.u_in);
    c.sim_seed = s.value("seed", c.sim_seed);
  }
  if (j.contains("kae")) {
    const nlohmann::json& k = j["kae"];
    check_keys(k,
               {"kappa", "hidden", "lambda", "weight_id", "weight_fwd", "weight_bwd",
                "weight_con", "epochs", "batch", "learning_rate", "seed"},
               "kae");
    c.kae.kappa = k.value("kappa", c.kae.kappa);
    c.kae.hidden = k.value("hidden", c.kae.hidden);
    c.kae.lambda = k.value("lambda", c.kae.lambda);
    c.kae.weight_id = k.value("weight_id", c.kae.weight_id);
    c.kae.weight_fwd = k.value("weight_fwd", c.kae.weight_fwd);
    c.kae.weight_bwd = k.value("weight_bwd", c.kae.weight_bwd);
    c.kae.weight_con = k.value("weight_con", c.kae.weight_con);
    c.kae.epochs = k.value("epochs", c.kae.epochs);
    c.kae.batch = k.value("batch", c.kae.batch);
    c.kae.learning_rate = k.value("learning_rate", c.kae.learning_rate);
    c.kae.seed = k.value("seed", c.kae.seed);
  }
  if (j.contains("rom")) {
    const nlohmann::json& r = j["rom"];
    check_keys(r,
               {"code_dim", "channels", "epochs", "batch", "learning_rate", "seed",
                "validation_fraction"},
               "rom");
    c.rom.code_dim = r.value("code_dim", c.rom.code_dim);
    c.rom.channels = r.value("channels", c.rom.channels);
    c.rom.epochs = r.value("epochs", c.rom.epochs);
    c.rom.batch = r.value("batch", c.rom.batch);
    c.rom.learning_rate = r.value("learning_rate", c.rom.learning_rate);
    c.rom.seed = r.value("seed", c.rom.seed);
    c.rom_validation_fraction = r.value("validation_fraction", c.rom_validation_fraction);
  }
  if (j.contains("gp")) {
    const nlohmann::json& g = j["gp"];
    check_keys(g, {"starts", "iterations", "learning_rate", "seed", "time_as_input"}, "gp");
    c.gp.starts = g.value("starts", c.gp.starts);
    c.gp.iterations = g.value("iterations", c.gp.iterations);
    c.gp.learning_rate = g.value("learning_rate", c.gp.learning_rate);
    c.gp.seed = g.value("seed", c.gp.seed);
    c.gp.time_as_input = g.value("time_as_input", c.gp.time_as_input);
  }
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["doe"] = {{"n", doe.n}, {"lo", doe.lo}, {"hi", doe.hi}, {"test", doe.test},
              {"seed", doe.seed}};
  j["window"] = {{"t", window.t}, {"history", window.history}, {"horizon", window.horizon}};
  j["sim"] = {{"height", grid_height}, {"width", grid_width},   {"warmup", warmup},
              {"interval", interval},  {"u_in", u_in},          {"seed", sim_seed}};
  j["kae"] = {{"kappa", kae.kappa},
              {"hidden", kae.hidden},
              {"lambda", kae.lambda},
              {"weight_id", kae.weight_id},
              {"weight_fwd", kae.weight_fwd},
              {"weight_bwd", kae.weight_bwd},
              {"weight_con", kae.weight_con},
              {"epochs", kae.epochs},
              {"batch", kae.batch},
              {"learning_rate", kae.learning_rate},
              {"seed", kae.seed}};
  j["rom"] = {{"code_dim", rom.code_dim},
              {"channels", rom.channels},
              {"epochs", rom.epochs},
              {"batch", rom.batch},
              {"learning_rate", rom.learning_rate},
              {"seed", rom.seed},
              {"validation_fraction", rom_validation_fraction}};
  j["gp"] = {{"starts", gp.starts},
             {"iterations", gp.iterations},
             {"learning_rate", gp.learning_rate},
             {"seed", gp.seed},
             {"time_as_input", gp.time_as_input}};
  j["threads"] = threads;
  return j;
}

void ExperimentConfig::validate() const {
  doe.validate();
  window.validate();
  kae.validate();
  rom.validate();
  gp.validate();
  if (grid_height < 8 || grid_width < 8) {
    throw ContractError("simulation grid must be at least 8x8");
  }
  if (interval < 1) throw ContractError("snapshot interval must be at least 1");
  if (!(u_in > 0.0 && u_in < 0.3)) {
    throw ContractError("inflow speed must stay in the low-Mach band (0, 0.3)");
  }
  if (kae.lambda + 1 > window.history) {
    throw ContractError("kae loss horizon lambda must stay below the history length");
  }
  if (rom_validation_fraction < 0.0 || rom_validation_fraction > 0.5) {
    throw ContractError("rom validation fraction must lie in [0, 0.5]");
  }
  if (threads < 1) throw ContractError("thread count must be at least 1");
}

SimulationConfig ExperimentConfig::sim_config(double re) const {
  SimulationConfig s;
  s.height = grid_height;
  s.width = grid_width;
  s.reynolds = re;
  s.warmup = warmup;
  s.interval = interval;
  s.snapshots = window.total_frames();
  s.t_start = window.first_history();
  s.seed = mix_condition_seed(sim_seed, re, 7);
  s.u_in = u_in;
  return s;
}

SimulationConfig ExperimentConfig::timing_sim_config(double re) const {
  SimulationConfig s = sim_config(re);
  s.snapshots = window.horizon + 1;
  s.t_start = window.t;
  return s;
}

// ---- experiment ------------------------------------------------------

Experiment::Experiment(fs::path dir, const ExperimentConfig& cfg)
    : dir_(std::move(dir)), cfg_(cfg) {
  cfg_.validate();
  fs::create_directories(dir_);
  write_json_file(dir_ / "config.json", cfg_.to_json());
}

Experiment::Experiment(fs::path dir) : dir_(std::move(dir)) {}

Experiment Experiment::open(const fs::path& dir) {
  const fs::path file = dir / "config.json";
  if (!fs::exists(file)) {
    throw IoError("missing_input", "no experiment config at " + file.string());
  }
  Experiment e(dir);
  e.cfg_ = ExperimentConfig::from_json(read_json_file(file));
  return e;
}

fs::path Experiment::condition_dir(const std::string& stage, const std::string& kind,
                                   double re) const {
  return dir_ / stage / (kind + "_" + fmt_condition(re));
}

DesignOfExperiments Experiment::doe() const { return load_doe(dir_ / "doe" / "doe.json"); }

bool Experiment::stage_doe() {
  const fs::path d = dir_ / "doe";
  nlohmann::json cfgj = {{"n", cfg_.doe.n},
                         {"lo", cfg_.doe.lo},
                         {"hi", cfg_.doe.hi},
                         {"test", cfg_.doe.test},
                         {"seed", cfg_.doe.seed}};
  const std::string key = compute_key("doe", cfgj, {});
  if (stage_up_to_date(d, key)) return false;
  with_stage_context("doe", "", [&] {
    const DesignOfExperiments doe = make_doe(cfg_.doe);
    fs::create_directories(d);
    save_doe(doe, d / "doe.json");
    StageRecord rec;
    rec.stage = "doe";
    rec.role = "data";
    rec.key = key;
    rec.config = cfgj;
    write_stage_record(d, rec);
  });
  return true;
}

namespace {

struct Condition {
  double re;
  std::string kind;  // "train" | "test"
};

std::vector<Condition> all_conditions(const DesignOfExperiments& doe) {
  std::vector<Condition> out;
  for (double re : doe.train) out.push_back({re, "train"});
  for (double re : doe.test) out.push_back({re, "test"});
  return out;
}

nlohmann::json sim_config_json(const SimulationConfig& s) {
  return {{"height", s.height},   {"width", s.width},       {"reynolds", s.reynolds},
          {"warmup", s.warmup},   {"interval", s.interval}, {"snapshots", s.snapshots},
          {"t_start", s.t_start}, {"u_in", s.u_in},         {"seed", s.seed}};
}

nlohmann::json kae_config_json(const KaeConfig& k) {
  return {{"kappa", k.kappa},
          {"hidden", k.hidden},
          {"lambda", k.lambda},
          {"weight_id", k.weight_id},
          {"weight_fwd", k.weight_fwd},
          {"weight_bwd", k.weight_bwd},
          {"weight_con", k.weight_con},
          {"epochs", k.epochs},
          {"batch", k.batch},
          {"learning_rate", k.learning_rate},
          {"seed", k.seed}};
}

nlohmann::json window_json(const TimeWindow& w) {
  return {{"t", w.t}, {"history", w.history}, {"horizon", w.horizon}};
}

}  // namespace

bool Experiment::stage_simulate() {
  const DesignOfExperiments design = doe();
  const std::vector<Condition> conds = all_conditions(design);
  std::atomic<bool> any{false};
  parallel_for(conds.size(), cfg_.threads, [&](std::size_t i) {
    const Condition& c = conds[i];
    const fs::path base = condition_dir("sim", c.kind, c.re);
    const fs::path hist_dir = base / "history";
    const fs::path fut_dir = base / "future";
    const SimulationConfig sc = cfg_.sim_config(c.re);
    const nlohmann::json cfgj = sim_config_json(sc);
    const std::string key = compute_key("simulate", cfgj, {});
    if (stage_up_to_date(hist_dir, key) && stage_up_to_date(fut_dir, key)) return;
    with_stage_context("simulate", "condition " + fmt_condition(c.re), [&] {
      Timer timer;
      const FlowFieldSequence seq = run_simulation(sc);
      const double seconds = timer.seconds();

      // The pre-window frames train models; the window itself is quarantined
      // for evaluation so no training stage can consume it.
      const FlowFieldSequence history =
          slice_sequence(seq, cfg_.window.first_history(), cfg_.window.t - 1);
      const FlowFieldSequence future = slice_sequence(seq, cfg_.window.t, cfg_.window.last());
      save_sequence(hist_dir, history, c.re);
      save_sequence(fut_dir, future, c.re);

      StageRecord rec;
      rec.stage = "simulate";
      rec.role = "data";
      rec.key = key;
      rec.config = cfgj;
      rec.has_condition = true;
      rec.condition = c.re;
      rec.condition_kind = c.kind;
      write_stage_record(hist_dir, rec);
      rec.quarantine = "evaluation-only";
      write_stage_record(fut_dir, rec);
      write_timing_sidecar(base, seconds);
    });
    any = true;
  });
  return any;
}

bool Experiment::stage_train_kae() {
  const DesignOfExperiments design = doe();
  std::atomic<bool> any{false};
  parallel_for(design.train.size(), cfg_.threads, [&](std::size_t i) {
    const double re = design.train[i];
    const fs::path hist_dir = condition_dir("sim", "train", re) / "history";
    const fs::path out_dir = condition_dir("kae", "train", re);

    KaeConfig kc = cfg_.kae;
    kc.seed = mix_condition_seed(cfg_.kae.seed, re, 0);

    StageInputRec in;
    in.path = fs::relative(hist_dir, dir_).generic_string();
    in.hash = artifact_hash(hist_dir);
    in.kind = "simulation";
    in.condition_kind = "train";
    in.condition = re;
    in.has_condition = true;
    in.t_min = cfg_.window.first_history();
    in.t_max = cfg_.window.t - 1;
    in.has_trange = true;

    nlohmann::json cfgj = {{"kae", kae_config_json(kc)}, {"window", window_json(cfg_.window)}};
    const std::string key = compute_key("train-kae", cfgj, {in});
    if (stage_up_to_date(out_dir, key)) return;
    with_stage_context("train-kae", "condition " + fmt_condition(re), [&] {
      const FlowFieldSequence history = load_sequence(hist_dir);
      const KoopmanModel model = train_kae(history, kc);
      model.save(out_dir);
      StageRecord rec;
      rec.stage = "train-kae";
      rec.role = "training";
      rec.key = key;
      rec.config = cfgj;
      rec.inputs = {in};
      rec.has_condition = true;
      rec.condition = re;
      rec.condition_kind = "train";
      write_stage_record(out_dir, rec);
    });
    any = true;
  });
  return any;
}

bool Experiment::stage_forecast() {
  const DesignOfExperiments design = doe();
  std::atomic<bool> any{false};
  parallel_for(design.train.size(), cfg_.threads, [&](std::size_t i) {
    const double re = design.train[i];
    const fs::path hist_dir = condition_dir("sim", "train", re) / "history";
    const fs::path model_dir = condition_dir("kae", "train", re);
    const fs::path out_dir = condition_dir("forecast", "train", re);

    StageInputRec model_in;
    model_in.path = fs::relative(model_dir, dir_).generic_string();
    model_in.hash = artifact_hash(model_dir);
    model_in.kind = "model";
    model_in.condition_kind = "train";
    model_in.condition = re;
    model_in.has_condition = true;

    StageInputRec hist_in;
    hist_in.path = fs::relative(hist_dir, dir_).generic_string();
    hist_in.hash = artifact_hash(hist_dir);
    hist_in.kind = "simulation";
    hist_in.condition_kind = "train";
    hist_in.condition = re;
    hist_in.has_condition = true;
    hist_in.t_min = cfg_.window.t - 1;  // only the anchor frame is read
    hist_in.t_max = cfg_.window.t - 1;
    hist_in.has_trange = true;

    nlohmann::json cfgj = {{"window", window_json(cfg_.window)}};
    const std::string key = compute_key("forecast", cfgj, {model_in, hist_in});
    if (stage_up_to_date(out_dir, key)) return;
    with_stage_context("forecast", "condition " + fmt_condition(re), [&] {
      const KoopmanModel model = KoopmanModel::load(model_dir);
      const FlowFieldSequence history = load_sequence(hist_dir);
      FlowFieldSequence fc =
          model.forecast(history.frame_at(cfg_.window.t - 1),
                         static_cast<long>(cfg_.window.horizon));
      fc.t_start = cfg_.window.t;
      fc = clamp_non_negative(std::move(fc));
      save_sequence(out_dir, fc, re);
      StageRecord rec;
      rec.stage = "forecast";
      rec.role = "training";
      rec.key = key;
      rec.config = cfgj;
      rec.inputs = {model_in, hist_in};
      rec.has_condition = true;
      rec.condition = re;
      rec.condition_kind = "train";
      write_stage_record(out_dir, rec);
    });
    any = true;
  });
  return any;
}

namespace {

// Forecast artifacts sorted by condition, with their stage hashes.
struct ForecastSet {
  std::vector<std::pair<double, FlowFieldSequence>> sequences;
  std::vector<StageInputRec> inputs;
};

}  // namespace

bool Experiment::stage_train_rom() {
  const DesignOfExperiments design = doe();
  std::vector<double> order = design.train;
  std::sort(order.begin(), order.end());

  ForecastSet set;
  for (double re : order) {
    const fs::path fc_dir = condition_dir("forecast", "train", re);
    StageInputRec in;
    in.path = fs::relative(fc_dir, dir_).generic_string();
    in.hash = artifact_hash(fc_dir);
    in.kind = "koopman";
    in.condition_kind = "train";
    in.condition = re;
    in.has_condition = true;
    in.t_min = cfg_.window.t;
    in.t_max = cfg_.window.last();
    in.has_trange = true;
    set.inputs.push_back(in);
  }

  const fs::path rom_dir = dir_ / "rom";
  const fs::path lat_dir = dir_ / "latents";
  nlohmann::json rom_cfgj = {{"code_dim", cfg_.rom.code_dim},
                             {"channels", cfg_.rom.channels},
                             {"epochs", cfg_.rom.epochs},
                             {"batch", cfg_.rom.batch},
                             {"learning_rate", cfg_.rom.learning_rate},
                             {"seed", cfg_.rom.seed},
                             {"validation_fraction", cfg_.rom_validation_fraction}};
  const std::string rom_key = compute_key("train-rom", rom_cfgj, set.inputs);

  std::vector<StageInputRec> lat_inputs = set.inputs;
  const std::string lat_key_pre = "pending";  // latents key depends on the rom artifact

  const bool rom_fresh = !stage_up_to_date(rom_dir, rom_key);
  bool any = false;
  if (rom_fresh) {
    with_stage_context("train-rom", "", [&] {
      for (double re : order) {
        set.sequences.emplace_back(re, load_sequence(condition_dir("forecast", "train", re)));
      }
      const RomDataset ds =
          build_rom_dataset(set.sequences, cfg_.rom_validation_fraction, cfg_.rom.seed);
      const ConvAutoencoder rom = train_rom(ds, cfg_.rom);
      rom.save(rom_dir);
      StageRecord rec;
      rec.stage = "train-rom";
      rec.role = "training";
      rec.key = rom_key;
      rec.config = rom_cfgj;
      rec.inputs = set.inputs;
      write_stage_record(rom_dir, rec);
    });
    any = true;
  }

  StageInputRec rom_in;
  rom_in.path = fs::relative(rom_dir, dir_).generic_string();
  rom_in.hash = artifact_hash(rom_dir);
  rom_in.kind = "model";
  lat_inputs.push_back(rom_in);
  (void)lat_key_pre;
  const std::string lat_key = compute_key("latents", nlohmann::json::object(), lat_inputs);
  if (!stage_up_to_date(lat_dir, lat_key)) {
    with_stage_context("latents", "", [&] {
      if (set.sequences.empty()) {
        for (double re : order) {
          set.sequences.emplace_back(re, load_sequence(condition_dir("forecast", "train", re)));
        }
      }
      const ConvAutoencoder rom = ConvAutoencoder::load(rom_dir);
      const LatentTable table = extract_latent_table(rom, set.sequences);
      fs::create_directories(lat_dir);
      save_latent_table(table, lat_dir / "latents.csv");
      StageRecord rec;
      rec.stage = "latents";
      rec.role = "training";
      rec.key = lat_key;
      rec.config = nlohmann::json::object();
      rec.inputs = lat_inputs;
      write_stage_record(lat_dir, rec);
    });
    any = true;
  }
  return any;
}

bool Experiment::stage_train_gp() {
  const fs::path lat_dir = dir_ / "latents";
  const fs::path gp_dir = dir_ / "gp";

  StageInputRec in;
  in.path = fs::relative(lat_dir, dir_).generic_string();
  in.hash = artifact_hash(lat_dir);
  in.kind = "table";

  nlohmann::json cfgj = {{"starts", cfg_.gp.starts},
                         {"iterations", cfg_.gp.iterations},
                         {"learning_rate", cfg_.gp.learning_rate},
                         {"seed", cfg_.gp.seed},
                         {"time_as_input", cfg_.gp.time_as_input}};
  const std::string key = compute_key("train-gp", cfgj, {in});
  if (stage_up_to_date(gp_dir, key)) return false;
  with_stage_context("train-gp", "", [&] {
    const LatentTable table = load_latent_table(lat_dir / "latents.csv");
    const GPBundle bundle = fit_gp_bundle(table, cfg_.gp);
    bundle.save(gp_dir);
    StageRecord rec;
    rec.stage = "train-gp";
    rec.role = "training";
    rec.key = key;
    rec.config = cfgj;
    rec.inputs = {in};
    write_stage_record(gp_dir, rec);
  });
  return true;
}

bool Experiment::stage_predict() {
  const DesignOfExperiments design = doe();
  const fs::path rom_dir = dir_ / "rom";
  const fs::path gp_dir = dir_ / "gp";

  StageInputRec rom_in;
  rom_in.path = fs::relative(rom_dir, dir_).generic_string();
  rom_in.hash = artifact_hash(rom_dir);
  rom_in.kind = "model";
  StageInputRec gp_in;
  gp_in.path = fs::relative(gp_dir, dir_).generic_string();
  gp_in.hash = artifact_hash(gp_dir);
  gp_in.kind = "model";

  bool loaded = false;
  ConvAutoencoder rom;
  GPBundle bundle;
  std::mutex load_mu;
  auto ensure_loaded = [&] {
    std::lock_guard<std::mutex> lock(load_mu);
    if (!loaded) {
      rom = ConvAutoencoder::load(rom_dir);
      bundle = GPBundle::load(gp_dir);
      loaded = true;
    }
  };

  std::atomic<bool> any{false};
  parallel_for(design.test.size(), cfg_.threads, [&](std::size_t i) {
    const double re = design.test[i];
    const fs::path out_dir = condition_dir("predict", "test", re);
    nlohmann::json cfgj = {{"re", re}, {"window", window_json(cfg_.window)}};
    const std::string key = compute_key("predict", cfgj, {rom_in, gp_in});
    if (stage_up_to_date(out_dir, key)) return;
    with_stage_context("predict", "condition " + fmt_condition(re), [&] {
      ensure_loaded();
      Timer timer;
      const SurrogatePrediction pred = predict_surrogate(rom, bundle, re, cfg_.window);
      const double seconds = timer.seconds();
      save_sequence(out_dir, pred.sequence, re);
      StageRecord rec;
      rec.stage = "predict";
      rec.role = "prediction";
      rec.key = key;
      rec.config = cfgj;
      rec.config["extrapolated"] = pred.extrapolated;
      rec.inputs = {rom_in, gp_in};
      rec.has_condition = true;
      rec.condition = re;
      rec.condition_kind = "test";
      write_stage_record(out_dir, rec);
      write_timing_sidecar(out_dir, seconds);
    });
    any = true;
  });
  return any;
}

bool Experiment::stage_evaluate() {
  const DesignOfExperiments design = doe();
  std::atomic<bool> any{false};

  // Per-condition reference forecasters, trained on each test condition's
  // pre-window truth. Evaluation artifacts only; they never feed the
  // surrogate.
  parallel_for(design.test.size(), cfg_.threads, [&](std::size_t i) {
    const double re = design.test[i];
    const fs::path hist_dir = condition_dir("sim", "test", re) / "history";
    const fs::path model_dir = condition_dir("eval_kae", "test", re);
    const fs::path fc_dir = condition_dir("eval_forecast", "test", re);

    KaeConfig kc = cfg_.kae;
    kc.seed = mix_condition_seed(cfg_.kae.seed, re, 1);

    StageInputRec hist_in;
    hist_in.path = fs::relative(hist_dir, dir_).generic_string();
    hist_in.hash = artifact_hash(hist_dir);
    hist_in.kind = "simulation";
    hist_in.condition_kind = "test";
    hist_in.condition = re;
    hist_in.has_condition = true;
    hist_in.t_min = cfg_.window.first_history();
    hist_in.t_max = cfg_.window.t - 1;
    hist_in.has_trange = true;

    nlohmann::json cfgj = {{"kae", kae_config_json(kc)}, {"window", window_json(cfg_.window)}};
    const std::string model_key = compute_key("eval-kae", cfgj, {hist_in});
    if (!stage_up_to_date(model_dir, model_key)) {
      with_stage_context("eval-kae", "condition " + fmt_condition(re), [&] {
        const FlowFieldSequence history = load_sequence(hist_dir);
        const KoopmanModel model = train_kae(history, kc);
        model.save(model_dir);
        StageRecord rec;
        rec.stage = "eval-kae";
        rec.role = "evaluation";
        rec.key = model_key;
        rec.config = cfgj;
        rec.inputs = {hist_in};
        rec.has_condition = true;
        rec.condition = re;
        rec.condition_kind = "test";
        write_stage_record(model_dir, rec);
      });
      any = true;
    }

    StageInputRec model_in;
    model_in.path = fs::relative(model_dir, dir_).generic_string();
    model_in.hash = artifact_hash(model_dir);
    model_in.kind = "model";
    model_in.condition_kind = "test";
    model_in.condition = re;
    model_in.has_condition = true;

    const std::string fc_key = compute_key("eval-forecast", cfgj, {model_in, hist_in});
    if (!stage_up_to_date(fc_dir, fc_key)) {
      with_stage_context("eval-forecast", "condition " + fmt_condition(re), [&] {
        const KoopmanModel model = KoopmanModel::load(model_dir);
        const FlowFieldSequence history = load_sequence(hist_dir);
        FlowFieldSequence fc =
            model.forecast(history.frame_at(cfg_.window.t - 1),
                           static_cast<long>(cfg_.window.horizon));
        fc.t_start = cfg_.window.t;
        fc = clamp_non_negative(std::move(fc));
        save_sequence(fc_dir, fc, re);
        StageRecord rec;
        rec.stage = "eval-forecast";
        rec.role = "evaluation";
        rec.key = fc_key;
        rec.config = cfgj;
        rec.inputs = {model_in, hist_in};
        rec.has_condition = true;
        rec.condition = re;
        rec.condition_kind = "test";
        write_stage_record(fc_dir, rec);
      });
      any = true;
    }
  });

  // Metrics over every test condition.
  const fs::path met_dir = dir_ / "metrics";
  std::vector<StageInputRec> inputs;
  for (double re : design.test) {
    for (const auto& [stage, kind] :
         std::vector<std::pair<std::string, std::string>>{{"sim", "simulation"},
                                                          {"eval_forecast", "koopman"},
                                                          {"predict", "emulated"}}) {
      fs::path p = condition_dir(stage, "test", re);
      if (stage == "sim") p /= "future";
      StageInputRec in;
      in.path = fs::relative(p, dir_).generic_string();
      in.hash = artifact_hash(p);
      in.kind = kind;
      in.condition_kind = "test";
      in.condition = re;
      in.has_condition = true;
      if (kind == "simulation") {
        in.t_min = cfg_.window.t;
        in.t_max = cfg_.window.last();
        in.has_trange = true;
      }
      inputs.push_back(in);
    }
  }
  nlohmann::json cfgj = {{"window", window_json(cfg_.window)}, {"test", design.test}};
  const std::string key = compute_key("metrics", cfgj, inputs);
  if (!stage_up_to_date(met_dir, key)) {
    with_stage_context("metrics", "", [&] {
      ErrorReport report;
      for (double re : design.test) {
        const FlowFieldSequence truth =
            load_sequence(condition_dir("sim", "test", re) / "future");
        const FlowFieldSequence koopman =
            load_sequence(condition_dir("eval_forecast", "test", re));
        const FlowFieldSequence emulated = load_sequence(condition_dir("predict", "test", re));
        report.conditions.push_back(compute_metrics(re, truth, koopman, emulated, cfg_.window));

        // Timing comparison: simulate only the prediction window (with
        // warmup), then read the surrogate's recorded wall clock.
        Timer timer;
        run_simulation(cfg_.timing_sim_config(re));
        TimingRow row;
        row.re = re;
        row.simulate_seconds = timer.seconds();
        row.predict_seconds = read_timing_sidecar(condition_dir("predict", "test", re));
        row.speedup = row.predict_seconds > 0.0 ? row.simulate_seconds / row.predict_seconds : 0.0;
        report.timing.push_back(row);
      }
      fs::create_directories(met_dir);
      write_text_file(met_dir / "metrics.csv", metrics_csv(report));
      write_text_file(met_dir / "timing.csv", timing_csv(report));
      StageRecord rec;
      rec.stage = "metrics";
      rec.role = "report";
      rec.key = key;
      rec.config = cfgj;
      rec.inputs = inputs;
      write_stage_record(met_dir, rec);
    });
    any = true;
  }
  return any;
}

bool Experiment::run_stage(const std::string& name) {
  if (name == "doe") return stage_doe();
  if (name == "simulate") return stage_simulate();
  if (name == "train-kae") return stage_train_kae();
  if (name == "forecast") return stage_forecast();
  if (name == "train-rom") return stage_train_rom();
  if (name == "train-gp") return stage_train_gp();
  if (name == "predict") return stage_predict();
  if (name == "evaluate") return stage_evaluate();
  throw ContractError("unknown stage '" + name + "'");
}

void Experiment::run_all() {
  stage_doe();
  stage_simulate();
  stage_train_kae();
  stage_forecast();
  stage_train_rom();
  stage_train_gp();
  stage_predict();
  stage_evaluate();
}

ErrorReport Experiment::report() const {
  ErrorReport rep = load_metrics_csv(dir_ / "metrics" / "metrics.csv");
  rep.timing = load_timing_csv(dir_ / "metrics" / "timing.csv");
  return rep;
}

AuditReport Experiment::audit() const {
  AuditReport report;
  std::vector<fs::path> records;
  for (const auto& entry : fs::recursive_directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().filename() == "stage.json") {
      records.push_back(entry.path());
    }
  }
  std::sort(records.begin(), records.end());

  auto flag = [&](const fs::path& artifact, const std::string& message) {
    report.violations.push_back(
        {fs::relative(artifact, dir_).generic_string(), message});
  };

  for (const fs::path& record_path : records) {
    const fs::path artifact = record_path.parent_path();
    ++report.artifacts;
    nlohmann::json j;
    try {
      j = read_json_file(record_path);
    } catch (const Error& e) {
      flag(artifact, std::string("unreadable stage record: ") + e.what());
      continue;
    }

    // Output integrity.
    std::map<std::string, std::string> want;
    if (j.contains("outputs") && j["outputs"].is_object()) {
      for (const auto& item : j["outputs"].items()) {
        want[item.key()] = item.value().get<std::string>();
      }
    }
    if (hash_outputs(artifact) != want) {
      flag(artifact, "artifact files do not match their recorded hashes");
    }
    if (!j.contains("content_hash") || j["content_hash"] != content_hash_of(want)) {
      flag(artifact, "content hash does not cover the recorded outputs");
    }

    const std::string role = j.value("role", "");
    if (role.empty()) flag(artifact, "stage record lacks a role");

    if (!j.contains("inputs") || !j["inputs"].is_array()) continue;
    for (const nlohmann::json& in : j["inputs"]) {
      const std::string in_path = in.value("path", "");
      const std::string in_hash = in.value("hash", "");
      const fs::path producer = dir_ / in_path / "stage.json";
      nlohmann::json pj;
      if (!fs::exists(producer)) {
        flag(artifact, "input " + in_path + " has no stage record");
        continue;
      }
      try {
        pj = read_json_file(producer);
      } catch (const Error&) {
        flag(artifact, "input " + in_path + " has an unreadable stage record");
        continue;
      }
      if (pj.value("content_hash", "") != in_hash) {
        flag(artifact, "input " + in_path + " does not match the producer's content");
      }
      if (role == "training") {
        if (in.value("condition_kind", "") == "test") {
          flag(artifact, "training artifact consumes test condition data from " + in_path);
        }
        if (pj.value("quarantine", "") == "evaluation-only") {
          flag(artifact, "training artifact consumes evaluation-only data from " + in_path);
        }
        if (in.value("kind", "") == "simulation") {
          if (!in.contains("t_min") || !in.contains("t_max")) {
            flag(artifact, "training input " + in_path + " lacks a time range");
          } else if (in["t_max"].get<long>() >= cfg_.window.t) {
            flag(artifact, "training artifact reads truth at t >= " +
                               std::to_string(cfg_.window.t) + " from " + in_path);
          }
        }
      }
    }
  }
  return report;
}

}  // namespace pistm
