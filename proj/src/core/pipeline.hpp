#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "core/conv_rom.hpp"
#include "core/field_sequence.hpp"
#include "core/gp.hpp"
#include "core/kae.hpp"
#include "core/lbm.hpp"
#include "core/tensor.hpp"

namespace pistm {

// Latin hypercube draw: exactly one uniform sample inside each of n
// equal-width strata of (lo, hi), order shuffled by the seed.
std::vector<double> lhs_sample(std::size_t n, double lo, double hi, std::uint64_t seed);

// Prediction window. Training sees frames t - history .. t - 1 only; the
// surrogate emits frames t .. t + horizon.
struct TimeWindow {
  long t = 0;
  std::size_t history = 181;
  std::size_t horizon = 9;

  void validate() const;
  long first_history() const { return t - static_cast<long>(history); }
  long last() const { return t + static_cast<long>(horizon); }
  std::size_t total_frames() const { return history + horizon + 1; }
};

struct DoeConfig {
  std::size_t n = 45;
  double lo = 50.0;
  double hi = 800.0;
  std::vector<double> test = {83.0, 172.0, 218.0, 406.0, 594.0};
  std::uint64_t seed = 0;

  void validate() const;
};

struct DesignOfExperiments {
  double lo = 50.0;
  double hi = 800.0;
  std::uint64_t seed = 0;
  std::vector<double> train;
  std::vector<double> test;

  // Conditions strictly inside (lo, hi), train and test disjoint.
  void validate() const;
};

DesignOfExperiments make_doe(const DoeConfig& cfg);
void save_doe(const DesignOfExperiments& doe, const std::filesystem::path& file);
DesignOfExperiments load_doe(const std::filesystem::path& file);

// Frobenius norm of the frame difference at absolute time t, relative to the
// reference frame's norm.
double relative_error(const FlowFieldSequence& pred, const FlowFieldSequence& ref, long t);

struct ConditionMetrics {
  double re = 0.0;
  std::vector<long> t;
  std::vector<double> eps_e;    // emulated vs truth
  std::vector<double> eps_ke;   // emulated vs per-condition forecast
  std::vector<double> eps_k;    // per-condition forecast vs truth
  double max_eps_e = 0.0, mean_eps_e = 0.0;
  double max_eps_ke = 0.0, mean_eps_ke = 0.0;
  double max_eps_k = 0.0, mean_eps_k = 0.0;
};

ConditionMetrics compute_metrics(double re, const FlowFieldSequence& truth,
                                 const FlowFieldSequence& koopman,
                                 const FlowFieldSequence& emulated, const TimeWindow& window);

struct TimingRow {
  double re = 0.0;
  double simulate_seconds = 0.0;
  double predict_seconds = 0.0;
  double speedup = 0.0;
};

struct ErrorReport {
  std::vector<ConditionMetrics> conditions;
  std::vector<TimingRow> timing;
};

std::string metrics_csv(const ErrorReport& report);
std::string timing_csv(const ErrorReport& report);
ErrorReport load_metrics_csv(const std::filesystem::path& file);
std::vector<TimingRow> load_timing_csv(const std::filesystem::path& file);

struct SurrogatePrediction {
  FlowFieldSequence sequence;
  bool extrapolated = false;
};

// Decodes the GP posterior means for every step of the window. No simulation
// and no model training happens here.
SurrogatePrediction predict_surrogate(const ConvAutoencoder& rom, const GPBundle& bundle,
                                      double re, const TimeWindow& window);

// Persisted sequence artifact: checkpoint dir with the frame stack plus time
// range, source tag, and optionally the operating condition.
void save_sequence(const std::filesystem::path& dir, const FlowFieldSequence& seq,
                   double re = -1.0);
FlowFieldSequence load_sequence(const std::filesystem::path& dir, double* re_out = nullptr);

FlowFieldSequence slice_sequence(const FlowFieldSequence& seq, long t_lo, long t_hi);
FlowFieldSequence clamp_non_negative(FlowFieldSequence seq);

Tensor absolute_difference(const Tensor& a, const Tensor& b);

// Binary pixmap of a 2D field under a fixed sequential color ramp, scaled over
// the field's own min/max (equal min/max paints the low end). Row 0 of the
// field lands at the bottom of the image.
std::string render_p6(const Tensor& field, double* min_out = nullptr, double* max_out = nullptr);

struct ExperimentConfig {
  DoeConfig doe;
  TimeWindow window;
  std::size_t grid_height = 80;
  std::size_t grid_width = 80;
  std::size_t warmup = 5000;
  std::size_t interval = 25;
  double u_in = 0.08;
  std::uint64_t sim_seed = 0;
  KaeConfig kae;
  RomConfig rom;
  double rom_validation_fraction = 0.1;
  GPConfig gp;
  std::size_t threads = 1;

  // Strict parse: unknown keys are errors. Missing keys keep defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  SimulationConfig sim_config(double re) const;
  // Warmup plus only the prediction window; used for the timing comparison.
  SimulationConfig timing_sim_config(double re) const;
};

struct AuditViolation {
  std::string artifact;
  std::string message;
};

struct AuditReport {
  std::size_t artifacts = 0;
  std::vector<AuditViolation> violations;
  bool ok() const { return artifacts > 0 && violations.empty(); }
};

// Staged, resumable experiment rooted at a directory. Every stage writes its
// outputs plus a stage.json recording role, config, inputs with content
// hashes, and a key; a stage whose key and outputs are intact is skipped.
// Wall-clock measurements live in timing.json sidecars outside the keyed
// content, so resumed runs keep their manifests byte-identical.
class Experiment {
 public:
  Experiment(std::filesystem::path dir, const ExperimentConfig& cfg);
  static Experiment open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  const ExperimentConfig& config() const { return cfg_; }

  // Each returns true when work ran, false when the stage was up to date.
  bool stage_doe();
  bool stage_simulate();
  bool stage_train_kae();
  bool stage_forecast();
  bool stage_train_rom();
  bool stage_train_gp();
  bool stage_predict();
  bool stage_evaluate();
  // Dispatch by name: doe, simulate, train-kae, forecast, train-rom,
  // train-gp, predict, evaluate.
  bool run_stage(const std::string& name);
  void run_all();

  DesignOfExperiments doe() const;
  ErrorReport report() const;

  // Walks every stage.json: output files must match their recorded hashes,
  // input references must match the producing stage, and no training-role
  // artifact may consume test-condition data or truth at t >= window.t.
  AuditReport audit() const;

  std::filesystem::path condition_dir(const std::string& stage, const std::string& kind,
                                      double re) const;

 private:
  std::filesystem::path dir_;
  ExperimentConfig cfg_;

  explicit Experiment(std::filesystem::path dir);
};

}  // namespace pistm
