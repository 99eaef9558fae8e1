#include "pistm.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "core/error.hpp"
#include "core/pipeline.hpp"
#include "core/tensor_io.hpp"

namespace fs = std::filesystem;

struct pistm_experiment {
  pistm::Experiment impl;
  explicit pistm_experiment(pistm::Experiment e) : impl(std::move(e)) {}
};

namespace {

thread_local std::string g_message;
thread_local std::string g_category;

pistm_status status_for(const std::string& category) {
  if (category == "contract") return PISTM_ERR_CONTRACT;
  if (category.starts_with("shape.")) return PISTM_ERR_SHAPE;
  if (category.starts_with("io.")) return PISTM_ERR_IO;
  if (category.starts_with("linalg.")) return PISTM_ERR_NUMERIC;
  if (category.starts_with("lbm.")) return PISTM_ERR_SIMULATION;
  if (category.starts_with("train.")) return PISTM_ERR_TRAINING;
  return PISTM_ERR_INTERNAL;
}

template <typename Fn>
pistm_status guarded(Fn&& fn) {
  try {
    fn();
    g_message.clear();
    g_category.clear();
    return PISTM_OK;
  } catch (const pistm::Error& e) {
    g_message = e.what();
    g_category = e.category();
    return status_for(g_category);
  } catch (const std::exception& e) {
    g_message = e.what();
    g_category = "internal";
    return PISTM_ERR_INTERNAL;
  } catch (...) {
    g_message = "unknown failure";
    g_category = "internal";
    return PISTM_ERR_INTERNAL;
  }
}

pistm_status fail_contract(const std::string& message) {
  g_message = message;
  g_category = "contract";
  return PISTM_ERR_CONTRACT;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_config(const char* config_json) {
  if (!config_json || config_json[0] == '\0') return nlohmann::json::object();
  nlohmann::json j = nlohmann::json::parse(config_json, nullptr, false);
  if (j.is_discarded()) throw pistm::IoError("bad_format", "config is not valid JSON");
  if (!j.is_object()) throw pistm::ContractError("config must be a JSON object");
  return j;
}

// Strict section parse: wraps the fragment in the experiment schema so the
// same key checking and defaults apply everywhere.
pistm::ExperimentConfig section_config(const char* section, const nlohmann::json& j) {
  return pistm::ExperimentConfig::from_json({{section, j}});
}

pistm::SimulationConfig sim_config_from_json(const nlohmann::json& j) {
  for (const auto& item : j.items()) {
    static const char* allowed[] = {"height",    "width",   "reynolds", "warmup", "interval",
                                    "snapshots", "t_start", "u_in",     "seed"};
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw pistm::ContractError("unknown simulation config key '" + item.key() + "'");
  }
  pistm::SimulationConfig s;
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.reynolds = j.value("reynolds", s.reynolds);
  s.warmup = j.value("warmup", s.warmup);
  s.interval = j.value("interval", s.interval);
  s.snapshots = j.value("snapshots", s.snapshots);
  s.t_start = j.value("t_start", s.t_start);
  s.u_in = j.value("u_in", s.u_in);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

}  // namespace

extern "C" {

const char* pistm_version(void) { return "0.1.0"; }

const char* pistm_last_error_message(void) { return g_message.c_str(); }

const char* pistm_last_error_category(void) { return g_category.c_str(); }

void pistm_string_free(char* s) { std::free(s); }

pistm_status pistm_default_config(char** json_out) {
  if (!json_out) return fail_contract("json_out is null");
  return guarded([&] { *json_out = dup_string(pistm::ExperimentConfig().to_json().dump(2)); });
}

pistm_status pistm_lhs_sample(size_t n, double lo, double hi, uint64_t seed, double* out) {
  if (!out) return fail_contract("out is null");
  return guarded([&] {
    const std::vector<double> s = pistm::lhs_sample(n, lo, hi, seed);
    std::memcpy(out, s.data(), n * sizeof(double));
  });
}

pistm_status pistm_experiment_create(const char* dir, const char* config_json,
                                     pistm_experiment** out) {
  if (!dir || !out) return fail_contract("dir and out must be non-null");
  *out = nullptr;
  return guarded([&] {
    const pistm::ExperimentConfig cfg = pistm::ExperimentConfig::from_json(parse_config(config_json));
    *out = new pistm_experiment(pistm::Experiment(dir, cfg));
  });
}

pistm_status pistm_experiment_open(const char* dir, pistm_experiment** out) {
  if (!dir || !out) return fail_contract("dir and out must be non-null");
  *out = nullptr;
  return guarded([&] { *out = new pistm_experiment(pistm::Experiment::open(dir)); });
}

void pistm_experiment_close(pistm_experiment* exp) { delete exp; }

pistm_status pistm_experiment_run_stage(pistm_experiment* exp, const char* stage, int* did_work) {
  if (!exp || !stage) return fail_contract("exp and stage must be non-null");
  return guarded([&] {
    const bool ran = exp->impl.run_stage(stage);
    if (did_work) *did_work = ran ? 1 : 0;
  });
}

pistm_status pistm_experiment_run_all(pistm_experiment* exp) {
  if (!exp) return fail_contract("exp is null");
  return guarded([&] { exp->impl.run_all(); });
}

pistm_status pistm_experiment_report(pistm_experiment* exp, char** metrics_csv_out,
                                     char** timing_csv_out) {
  if (!exp) return fail_contract("exp is null");
  return guarded([&] {
    const pistm::ErrorReport report = exp->impl.report();
    if (metrics_csv_out) *metrics_csv_out = dup_string(pistm::metrics_csv(report));
    if (timing_csv_out) *timing_csv_out = dup_string(pistm::timing_csv(report));
  });
}

pistm_status pistm_experiment_audit(pistm_experiment* exp, char** report_json) {
  if (!exp || !report_json) return fail_contract("exp and report_json must be non-null");
  return guarded([&] {
    const pistm::AuditReport report = exp->impl.audit();
    nlohmann::json j;
    j["artifacts"] = report.artifacts;
    j["ok"] = report.ok();
    nlohmann::json vs = nlohmann::json::array();
    for (const pistm::AuditViolation& v : report.violations) {
      vs.push_back({{"artifact", v.artifact}, {"message", v.message}});
    }
    j["violations"] = vs;
    *report_json = dup_string(j.dump(2));
  });
}

pistm_status pistm_doe(const char* config_json, const char* out_file) {
  if (!out_file) return fail_contract("out_file is null");
  return guarded([&] {
    const pistm::DoeConfig cfg = section_config("doe", parse_config(config_json)).doe;
    pistm::save_doe(pistm::make_doe(cfg), out_file);
  });
}

pistm_status pistm_simulate(const char* config_json, const char* out_dir) {
  if (!out_dir) return fail_contract("out_dir is null");
  return guarded([&] {
    const pistm::SimulationConfig cfg = sim_config_from_json(parse_config(config_json));
    const pistm::FlowFieldSequence seq = pistm::run_simulation(cfg);
    pistm::save_sequence(out_dir, seq, cfg.reynolds);
  });
}

pistm_status pistm_train_kae(const char* data_dir, const char* config_json, const char* out_dir) {
  if (!data_dir || !out_dir) return fail_contract("data_dir and out_dir must be non-null");
  return guarded([&] {
    const pistm::KaeConfig cfg = section_config("kae", parse_config(config_json)).kae;
    const pistm::FlowFieldSequence history = pistm::load_sequence(data_dir);
    pistm::train_kae(history, cfg).save(out_dir);
  });
}

pistm_status pistm_forecast(const char* model_dir, const char* history_dir, long k,
                            const char* out_dir) {
  if (!model_dir || !history_dir || !out_dir) {
    return fail_contract("model_dir, history_dir, and out_dir must be non-null");
  }
  return guarded([&] {
    if (k < 0) throw pistm::ContractError("forecast horizon must be non-negative");
    const pistm::KoopmanModel model = pistm::KoopmanModel::load(model_dir);
    double re = -1.0;
    const pistm::FlowFieldSequence history = pistm::load_sequence(history_dir, &re);
    pistm::FlowFieldSequence fc = model.forecast(history.frame_at(history.t_end()), k);
    fc.t_start = history.t_end() + 1;
    fc = pistm::clamp_non_negative(std::move(fc));
    pistm::save_sequence(out_dir, fc, re);
  });
}

pistm_status pistm_train_rom(const char* data_dir, const char* config_json, const char* out_dir) {
  if (!data_dir || !out_dir) return fail_contract("data_dir and out_dir must be non-null");
  return guarded([&] {
    const pistm::ExperimentConfig wrapped = section_config("rom", parse_config(config_json));

    std::vector<std::pair<double, pistm::FlowFieldSequence>> forecasts;
    if (!fs::is_directory(data_dir)) {
      throw pistm::IoError("missing_input", std::string("no data directory at ") + data_dir);
    }
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(data_dir)) {
      if (e.is_directory()) subdirs.push_back(e.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const fs::path& sub : subdirs) {
      double re = -1.0;
      pistm::FlowFieldSequence seq = pistm::load_sequence(sub, &re);
      if (re <= 0.0) {
        throw pistm::ContractError("sequence at " + sub.string() +
                                   " does not record its condition");
      }
      forecasts.emplace_back(re, std::move(seq));
    }
    std::sort(forecasts.begin(), forecasts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const pistm::RomDataset dataset = pistm::build_rom_dataset(
        forecasts, wrapped.rom_validation_fraction, wrapped.rom.seed);
    const pistm::ConvAutoencoder rom = pistm::train_rom(dataset, wrapped.rom);
    rom.save(out_dir);
    const pistm::LatentTable table = pistm::extract_latent_table(rom, forecasts);
    pistm::save_latent_table(table, fs::path(out_dir) / "latents.csv");
  });
}

pistm_status pistm_train_gp(const char* latents_csv, const char* config_json,
                            const char* out_dir) {
  if (!latents_csv || !out_dir) return fail_contract("latents_csv and out_dir must be non-null");
  return guarded([&] {
    const pistm::GPConfig cfg = section_config("gp", parse_config(config_json)).gp;
    const pistm::LatentTable table = pistm::load_latent_table(latents_csv);
    pistm::fit_gp_bundle(table, cfg).save(out_dir);
  });
}

pistm_status pistm_predict(const char* rom_dir, const char* gp_dir, double re, long t,
                           size_t horizon, const char* out_dir, int* extrapolated) {
  if (!rom_dir || !gp_dir || !out_dir) {
    return fail_contract("rom_dir, gp_dir, and out_dir must be non-null");
  }
  return guarded([&] {
    const pistm::ConvAutoencoder rom = pistm::ConvAutoencoder::load(rom_dir);
    const pistm::GPBundle bundle = pistm::GPBundle::load(gp_dir);
    pistm::TimeWindow window;
    window.t = t;
    window.history = 2;  // unused by prediction; satisfies the window contract
    window.horizon = horizon;
    const pistm::SurrogatePrediction pred = pistm::predict_surrogate(rom, bundle, re, window);
    pistm::save_sequence(out_dir, pred.sequence, re);
    if (extrapolated) *extrapolated = pred.extrapolated ? 1 : 0;
  });
}

pistm_status pistm_evaluate_condition(const char* truth_dir, const char* koopman_dir,
                                      const char* emulated_dir, double re, long t, size_t horizon,
                                      const char* out_csv) {
  if (!truth_dir || !koopman_dir || !emulated_dir || !out_csv) {
    return fail_contract("truth_dir, koopman_dir, emulated_dir, and out_csv must be non-null");
  }
  return guarded([&] {
    const pistm::FlowFieldSequence truth = pistm::load_sequence(truth_dir);
    const pistm::FlowFieldSequence koopman = pistm::load_sequence(koopman_dir);
    const pistm::FlowFieldSequence emulated = pistm::load_sequence(emulated_dir);
    pistm::TimeWindow window;
    window.t = t;
    window.history = 2;
    window.horizon = horizon;
    pistm::ErrorReport report;
    report.conditions.push_back(pistm::compute_metrics(re, truth, koopman, emulated, window));
    pistm::write_text_file(out_csv, pistm::metrics_csv(report));
  });
}

pistm_status pistm_render(const char* seq_dir, long t, const char* diff_seq_dir,
                          const char* out_path, double* min_out, double* max_out) {
  if (!seq_dir || !out_path) return fail_contract("seq_dir and out_path must be non-null");
  return guarded([&] {
    const pistm::FlowFieldSequence seq = pistm::load_sequence(seq_dir);
    pistm::Tensor frame = seq.frame_at(t);
    if (diff_seq_dir) {
      const pistm::FlowFieldSequence other = pistm::load_sequence(diff_seq_dir);
      frame = pistm::absolute_difference(frame, other.frame_at(t));
    }
    double lo = 0.0, hi = 0.0;
    const std::string img = pistm::render_p6(frame, &lo, &hi);
    pistm::write_text_file(out_path, img);
    if (min_out) *min_out = lo;
    if (max_out) *max_out = hi;
  });
}

}  // extern "C"
