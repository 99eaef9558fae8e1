// Thin dispatcher over the C library surface. Flags beat config-file values,
// which beat library defaults; every flag's displayed default is the library
// default so `--help` doubles as schema documentation.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pistm.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { pistm_string_free(s); }
};

int fail_from_library() {
  std::fprintf(stderr, "error: %s: %s\n", pistm_last_error_category(),
               pistm_last_error_message());
  return 1;
}

int fail(const char* category, const std::string& message) {
  std::fprintf(stderr, "error: %s: %s\n", category, message.c_str());
  return 1;
}

json library_defaults() {
  OwnedString s;
  if (pistm_default_config(&s.s) != PISTM_OK) return json::object();
  return json::parse(s.s);
}

bool read_json_file(const fs::path& path, json* out, std::string* error) {
  std::ifstream in(path);
  if (!in) {
    *error = "cannot read " + path.string();
    return false;
  }
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  *out = json::parse(text, nullptr, false);
  if (out->is_discarded()) {
    *error = path.string() + " is not valid JSON";
    return false;
  }
  return true;
}

// One config key bound to one flag; assemble() resolves the precedence.
struct BoundKey {
  std::string key;
  CLI::Option* opt;
  std::function<json()> value;
};

struct Section {
  std::string name;
  std::vector<BoundKey> keys;

  json assemble(const json& defaults, const json* file_cfg, const CLI::Option* global_seed,
                long long global_seed_value) const {
    json section = defaults.contains(name) ? defaults[name] : json::object();
    if (file_cfg && file_cfg->contains(name)) {
      for (const auto& item : (*file_cfg)[name].items()) section[item.key()] = item.value();
    }
    const BoundKey* local_seed = nullptr;
    for (const BoundKey& k : keys) {
      if (k.key == "seed") local_seed = &k;
      if (k.opt != nullptr && k.opt->count() > 0) section[k.key] = k.value();
    }
    if (global_seed != nullptr && global_seed->count() > 0 &&
        (local_seed == nullptr || local_seed->opt->count() == 0) && section.contains("seed")) {
      section["seed"] = global_seed_value;
    }
    return section;
  }
};

bool parse_grid(const std::string& text, std::size_t* h, std::size_t* w) {
  unsigned long long hh = 0, ww = 0;
  char extra = 0;
  if (std::sscanf(text.c_str(), "%llux%llu%c", &hh, &ww, &extra) != 2 || hh == 0 || ww == 0) {
    return false;
  }
  *h = static_cast<std::size_t>(hh);
  *w = static_cast<std::size_t>(ww);
  return true;
}

const char* kStages[] = {"doe",       "simulate", "train-kae", "forecast",
                         "train-rom", "train-gp", "predict",   "evaluate"};

}  // namespace

int main(int argc, char** argv) {
  const json def = library_defaults();

  CLI::App app{"flow field surrogate toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  long long global_seed = 0;
  std::size_t threads = def.value("threads", std::size_t{1});
  bool verbose = false;
  app.add_option("--config", config_path, "experiment config JSON file")
      ->check(CLI::ExistingFile);
  CLI::Option* global_seed_opt =
      app.add_option("--seed", global_seed, "override every seed in the effective config");
  app.add_option("--threads", threads, "worker threads for experiment stages")
      ->capture_default_str();
  app.add_flag("--verbose", verbose, "report per-stage progress");

  // ---- doe ------------------------------------------------------------
  auto* doe_cmd = app.add_subcommand("doe", "draw a stratified condition design");
  std::size_t doe_n = def["doe"]["n"].get<std::size_t>();
  double doe_lo = def["doe"]["lo"].get<double>();
  double doe_hi = def["doe"]["hi"].get<double>();
  std::vector<double> doe_test = def["doe"]["test"].get<std::vector<double>>();
  std::uint64_t doe_seed = def["doe"]["seed"].get<std::uint64_t>();
  std::string doe_out;
  Section doe_sec{"doe", {}};
  doe_sec.keys.push_back(
      {"n", doe_cmd->add_option("--n", doe_n, "training conditions")->capture_default_str(),
       [&] { return json(doe_n); }});
  doe_sec.keys.push_back(
      {"lo", doe_cmd->add_option("--min", doe_lo, "range lower bound")->capture_default_str(),
       [&] { return json(doe_lo); }});
  doe_sec.keys.push_back(
      {"hi", doe_cmd->add_option("--max", doe_hi, "range upper bound")->capture_default_str(),
       [&] { return json(doe_hi); }});
  doe_sec.keys.push_back({"test",
                          doe_cmd->add_option("--test", doe_test, "held-out conditions")
                              ->expected(-1)
                              ->capture_default_str(),
                          [&] { return json(doe_test); }});
  doe_sec.keys.push_back(
      {"seed", doe_cmd->add_option("--seed", doe_seed, "sampler seed")->capture_default_str(),
       [&] { return json(doe_seed); }});
  doe_cmd->add_option("--out", doe_out, "output design file")->required();

  // ---- simulate ---------------------------------------------------------
  auto* sim_cmd = app.add_subcommand("simulate", "run the lattice flow solver");
  double sim_re = 100.0;
  std::string sim_grid = std::to_string(def["sim"]["height"].get<std::size_t>()) + "x" +
                         std::to_string(def["sim"]["width"].get<std::size_t>());
  std::size_t sim_warmup = def["sim"]["warmup"].get<std::size_t>();
  std::size_t sim_interval = def["sim"]["interval"].get<std::size_t>();
  std::size_t sim_snapshots = 191;
  long long sim_t_start = -181;
  double sim_u_in = def["sim"]["u_in"].get<double>();
  std::uint64_t sim_seed = def["sim"]["seed"].get<std::uint64_t>();
  std::string sim_out;
  sim_cmd->add_option("--re", sim_re, "Reynolds number")->required();
  CLI::Option* grid_opt =
      sim_cmd->add_option("--grid", sim_grid, "grid as HxW (height, width)")
          ->capture_default_str();
  Section sim_sec{"sim", {}};
  sim_sec.keys.push_back({"warmup",
                          sim_cmd->add_option("--warmup", sim_warmup, "steps before recording")
                              ->capture_default_str(),
                          [&] { return json(sim_warmup); }});
  sim_sec.keys.push_back({"interval",
                          sim_cmd->add_option("--interval", sim_interval, "steps per snapshot")
                              ->capture_default_str(),
                          [&] { return json(sim_interval); }});
  CLI::Option* snap_opt = sim_cmd->add_option("--snapshots", sim_snapshots, "frames to record")
                              ->capture_default_str();
  CLI::Option* tstart_opt =
      sim_cmd->add_option("--t-start", sim_t_start, "time index of the first frame")
          ->capture_default_str();
  sim_sec.keys.push_back(
      {"u_in",
       sim_cmd->add_option("--u-in", sim_u_in, "inflow speed (lattice units)")
           ->capture_default_str(),
       [&] { return json(sim_u_in); }});
  sim_sec.keys.push_back(
      {"seed",
       sim_cmd->add_option("--seed", sim_seed, "perturbation seed")->capture_default_str(),
       [&] { return json(sim_seed); }});
  sim_cmd->add_option("--out", sim_out, "output sequence directory")->required();

  // ---- train-kae --------------------------------------------------------
  auto* kae_cmd = app.add_subcommand("train-kae", "train the per-condition forecaster");
  std::string kae_data, kae_out;
  std::size_t kae_latent = def["kae"]["kappa"].get<std::size_t>();
  std::size_t kae_hidden = def["kae"]["hidden"].get<std::size_t>();
  std::size_t kae_lambda = def["kae"]["lambda"].get<std::size_t>();
  double kae_wid = def["kae"]["weight_id"].get<double>();
  double kae_wfwd = def["kae"]["weight_fwd"].get<double>();
  double kae_wbwd = def["kae"]["weight_bwd"].get<double>();
  double kae_wcon = def["kae"]["weight_con"].get<double>();
  std::size_t kae_epochs = def["kae"]["epochs"].get<std::size_t>();
  std::size_t kae_batch = def["kae"]["batch"].get<std::size_t>();
  double kae_lr = def["kae"]["learning_rate"].get<double>();
  std::uint64_t kae_seed = def["kae"]["seed"].get<std::uint64_t>();
  kae_cmd->add_option("--data", kae_data, "history sequence directory")->required();
  kae_cmd->add_option("--out", kae_out, "output model directory")->required();
  Section kae_sec{"kae", {}};
  kae_sec.keys.push_back({"kappa",
                          kae_cmd->add_option("--latent", kae_latent, "latent dimension")
                              ->capture_default_str(),
                          [&] { return json(kae_latent); }});
  kae_sec.keys.push_back({"hidden",
                          kae_cmd->add_option("--hidden", kae_hidden, "hidden layer width")
                              ->capture_default_str(),
                          [&] { return json(kae_hidden); }});
  kae_sec.keys.push_back(
      {"lambda",
       kae_cmd->add_option("--lambda", kae_lambda, "loss rollout horizon")->capture_default_str(),
       [&] { return json(kae_lambda); }});
  kae_sec.keys.push_back({"weight_id",
                          kae_cmd->add_option("--weight-id", kae_wid, "reconstruction weight")
                              ->capture_default_str(),
                          [&] { return json(kae_wid); }});
  kae_sec.keys.push_back({"weight_fwd",
                          kae_cmd->add_option("--weight-fwd", kae_wfwd, "forward rollout weight")
                              ->capture_default_str(),
                          [&] { return json(kae_wfwd); }});
  kae_sec.keys.push_back({"weight_bwd",
                          kae_cmd->add_option("--weight-bwd", kae_wbwd, "backward rollout weight")
                              ->capture_default_str(),
                          [&] { return json(kae_wbwd); }});
  kae_sec.keys.push_back({"weight_con",
                          kae_cmd->add_option("--weight-con", kae_wcon, "consistency weight")
                              ->capture_default_str(),
                          [&] { return json(kae_wcon); }});
  kae_sec.keys.push_back(
      {"epochs",
       kae_cmd->add_option("--epochs", kae_epochs, "training epochs")->capture_default_str(),
       [&] { return json(kae_epochs); }});
  kae_sec.keys.push_back(
      {"batch", kae_cmd->add_option("--batch", kae_batch, "batch size")->capture_default_str(),
       [&] { return json(kae_batch); }});
  kae_sec.keys.push_back({"learning_rate",
                          kae_cmd->add_option("--learning-rate", kae_lr, "optimizer step size")
                              ->capture_default_str(),
                          [&] { return json(kae_lr); }});
  kae_sec.keys.push_back(
      {"seed",
       kae_cmd->add_option("--seed", kae_seed, "initialization seed")->capture_default_str(),
       [&] { return json(kae_seed); }});

  // ---- forecast -----------------------------------------------------------
  auto* fc_cmd = app.add_subcommand("forecast", "roll a trained forecaster forward");
  std::string fc_model, fc_history, fc_out;
  long long fc_k = 9;
  fc_cmd->add_option("--model", fc_model, "trained forecaster directory")->required();
  fc_cmd->add_option("--history", fc_history, "history sequence directory")->required();
  fc_cmd->add_option("--k", fc_k, "steps beyond the history")->capture_default_str();
  fc_cmd->add_option("--out", fc_out, "output sequence directory")->required();

  // ---- train-rom ---------------------------------------------------------
  auto* rom_cmd = app.add_subcommand("train-rom", "train the shared field compressor");
  std::string rom_data, rom_out;
  std::size_t rom_code = def["rom"]["code_dim"].get<std::size_t>();
  std::vector<std::size_t> rom_channels = def["rom"]["channels"].get<std::vector<std::size_t>>();
  std::size_t rom_epochs = def["rom"]["epochs"].get<std::size_t>();
  std::size_t rom_batch = def["rom"]["batch"].get<std::size_t>();
  double rom_lr = def["rom"]["learning_rate"].get<double>();
  std::uint64_t rom_seed = def["rom"]["seed"].get<std::uint64_t>();
  double rom_vf = def["rom"]["validation_fraction"].get<double>();
  rom_cmd->add_option("--data", rom_data, "directory of labelled sequence artifacts")
      ->required();
  rom_cmd->add_option("--out", rom_out, "output model directory")->required();
  Section rom_sec{"rom", {}};
  rom_sec.keys.push_back({"code_dim",
                          rom_cmd->add_option("--code-dim", rom_code, "latent code dimension")
                              ->capture_default_str(),
                          [&] { return json(rom_code); }});
  rom_sec.keys.push_back({"channels",
                          rom_cmd->add_option("--channels", rom_channels, "conv channel widths")
                              ->expected(-1)
                              ->capture_default_str(),
                          [&] { return json(rom_channels); }});
  rom_sec.keys.push_back(
      {"epochs",
       rom_cmd->add_option("--epochs", rom_epochs, "training epochs")->capture_default_str(),
       [&] { return json(rom_epochs); }});
  rom_sec.keys.push_back(
      {"batch", rom_cmd->add_option("--batch", rom_batch, "batch size")->capture_default_str(),
       [&] { return json(rom_batch); }});
  rom_sec.keys.push_back({"learning_rate",
                          rom_cmd->add_option("--learning-rate", rom_lr, "optimizer step size")
                              ->capture_default_str(),
                          [&] { return json(rom_lr); }});
  rom_sec.keys.push_back(
      {"seed",
       rom_cmd->add_option("--seed", rom_seed, "initialization seed")->capture_default_str(),
       [&] { return json(rom_seed); }});
  rom_sec.keys.push_back(
      {"validation_fraction",
       rom_cmd->add_option("--validation-fraction", rom_vf, "held-out row fraction")
           ->capture_default_str(),
       [&] { return json(rom_vf); }});

  // ---- train-gp ----------------------------------------------------------
  auto* gp_cmd = app.add_subcommand("train-gp", "fit the latent regressors");
  std::string gp_latents, gp_out;
  std::size_t gp_starts = def["gp"]["starts"].get<std::size_t>();
  std::size_t gp_iters = def["gp"]["iterations"].get<std::size_t>();
  double gp_lr = def["gp"]["learning_rate"].get<double>();
  std::uint64_t gp_seed = def["gp"]["seed"].get<std::uint64_t>();
  bool gp_time = def["gp"]["time_as_input"].get<bool>();
  gp_cmd->add_option("--latents", gp_latents, "latent table CSV")->required();
  gp_cmd->add_option("--out", gp_out, "output regressor directory")->required();
  Section gp_sec{"gp", {}};
  gp_sec.keys.push_back({"starts",
                         gp_cmd->add_option("--starts", gp_starts, "optimizer multi-starts")
                             ->capture_default_str(),
                         [&] { return json(gp_starts); }});
  gp_sec.keys.push_back(
      {"iterations",
       gp_cmd->add_option("--iterations", gp_iters, "ascent iterations per start")
           ->capture_default_str(),
       [&] { return json(gp_iters); }});
  gp_sec.keys.push_back({"learning_rate",
                         gp_cmd->add_option("--learning-rate", gp_lr, "optimizer step size")
                             ->capture_default_str(),
                         [&] { return json(gp_lr); }});
  gp_sec.keys.push_back(
      {"seed", gp_cmd->add_option("--seed", gp_seed, "restart seed")->capture_default_str(),
       [&] { return json(gp_seed); }});
  gp_sec.keys.push_back(
      {"time_as_input",
       gp_cmd->add_option("--time-as-input", gp_time, "regress on (condition, time) jointly")
           ->capture_default_str(),
       [&] { return json(gp_time); }});

  // ---- predict -------------------------------------------------------------
  auto* pred_cmd = app.add_subcommand("predict", "emulate a window at an unseen condition");
  std::string pred_rom, pred_gp, pred_out;
  double pred_re = 0.0;
  long long pred_t = def["window"]["t"].get<long long>();
  std::size_t pred_k = def["window"]["horizon"].get<std::size_t>();
  pred_cmd->add_option("--rom", pred_rom, "trained compressor directory")->required();
  pred_cmd->add_option("--gp", pred_gp, "trained regressor directory")->required();
  pred_cmd->add_option("--re", pred_re, "Reynolds number")->required();
  pred_cmd->add_option("--t", pred_t, "window start time")->capture_default_str();
  pred_cmd->add_option("--k", pred_k, "steps beyond the window start")->capture_default_str();
  pred_cmd->add_option("--out", pred_out, "output sequence directory")->required();

  // ---- evaluate ------------------------------------------------------------
  auto* eval_cmd =
      app.add_subcommand("evaluate", "run the evaluation stage and print the metrics CSV");
  std::string eval_dir;
  bool eval_timing = false;
  eval_cmd->add_option("--dir", eval_dir, "experiment directory")->required();
  eval_cmd->add_flag("--timing", eval_timing, "print the timing CSV instead");

  // ---- render ---------------------------------------------------------------
  auto* render_cmd = app.add_subcommand("render", "draw one frame as a binary P6 pixmap");
  std::string render_in, render_diff, render_out;
  long long render_frame = 0;
  render_cmd->add_option("--in", render_in, "sequence directory")->required();
  render_cmd->add_option("--frame", render_frame, "time index of the frame")->required();
  render_cmd->add_option("--diff", render_diff,
                         "second sequence; render the absolute difference");
  render_cmd->add_option("--out", render_out, "output file (omit to stream to stdout)");

  // ---- audit ------------------------------------------------------------------
  auto* audit_cmd = app.add_subcommand("audit", "verify artifact integrity and data hygiene");
  std::string audit_dir;
  audit_cmd->add_option("--dir", audit_dir, "experiment directory")->required();

  // ---- run-all ----------------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run-all", "run every stage of an experiment");
  std::string run_dir;
  run_cmd->add_option("--dir", run_dir, "experiment directory")->required();

  // ---- schema -----------------------------------------------------------------
  auto* schema_cmd =
      app.add_subcommand("schema", "print the default experiment config as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  json file_cfg;
  const json* file_cfg_ptr = nullptr;
  if (!config_path.empty()) {
    std::string error;
    if (!read_json_file(config_path, &file_cfg, &error)) return fail("io.bad_format", error);
    file_cfg_ptr = &file_cfg;
  }
  auto section_json = [&](const Section& s) {
    return s.assemble(def, file_cfg_ptr, global_seed_opt, global_seed);
  };

  if (schema_cmd->parsed()) {
    std::printf("%s\n", def.dump(2).c_str());
    return 0;
  }

  if (doe_cmd->parsed()) {
    const std::string cfg = section_json(doe_sec).dump();
    if (pistm_doe(cfg.c_str(), doe_out.c_str()) != PISTM_OK) return fail_from_library();
    if (verbose) std::printf("wrote %s\n", doe_out.c_str());
    return 0;
  }

  if (sim_cmd->parsed()) {
    json cfg = section_json(sim_sec);
    std::size_t h = 0, w = 0;
    if (!parse_grid(sim_grid, &h, &w)) {
      std::fprintf(stderr, "error: --grid must look like 80x80, got '%s'\n", sim_grid.c_str());
      return 2;
    }
    if (grid_opt->count() > 0 || !cfg.contains("height")) cfg["height"] = h;
    if (grid_opt->count() > 0 || !cfg.contains("width")) cfg["width"] = w;
    cfg["reynolds"] = sim_re;
    if (snap_opt->count() > 0 || !cfg.contains("snapshots")) cfg["snapshots"] = sim_snapshots;
    if (tstart_opt->count() > 0 || !cfg.contains("t_start")) cfg["t_start"] = sim_t_start;
    const std::string text = cfg.dump();
    if (pistm_simulate(text.c_str(), sim_out.c_str()) != PISTM_OK) return fail_from_library();
    if (verbose) std::printf("wrote %s\n", sim_out.c_str());
    return 0;
  }

  if (kae_cmd->parsed()) {
    const std::string cfg = section_json(kae_sec).dump();
    if (pistm_train_kae(kae_data.c_str(), cfg.c_str(), kae_out.c_str()) != PISTM_OK) {
      return fail_from_library();
    }
    if (verbose) std::printf("wrote %s\n", kae_out.c_str());
    return 0;
  }

  if (fc_cmd->parsed()) {
    if (pistm_forecast(fc_model.c_str(), fc_history.c_str(), fc_k, fc_out.c_str()) != PISTM_OK) {
      return fail_from_library();
    }
    if (verbose) std::printf("wrote %s\n", fc_out.c_str());
    return 0;
  }

  if (rom_cmd->parsed()) {
    const std::string cfg = section_json(rom_sec).dump();
    if (pistm_train_rom(rom_data.c_str(), cfg.c_str(), rom_out.c_str()) != PISTM_OK) {
      return fail_from_library();
    }
    if (verbose) std::printf("wrote %s\n", rom_out.c_str());
    return 0;
  }

  if (gp_cmd->parsed()) {
    const std::string cfg = section_json(gp_sec).dump();
    if (pistm_train_gp(gp_latents.c_str(), cfg.c_str(), gp_out.c_str()) != PISTM_OK) {
      return fail_from_library();
    }
    if (verbose) std::printf("wrote %s\n", gp_out.c_str());
    return 0;
  }

  if (pred_cmd->parsed()) {
    int extrapolated = 0;
    if (pistm_predict(pred_rom.c_str(), pred_gp.c_str(), pred_re, pred_t, pred_k,
                      pred_out.c_str(), &extrapolated) != PISTM_OK) {
      return fail_from_library();
    }
    if (extrapolated) {
      std::fprintf(stderr, "warning: condition %g lies outside the training range\n", pred_re);
    }
    if (verbose) std::printf("wrote %s\n", pred_out.c_str());
    return 0;
  }

  if (eval_cmd->parsed()) {
    pistm_experiment* exp = nullptr;
    if (pistm_experiment_open(eval_dir.c_str(), &exp) != PISTM_OK) return fail_from_library();
    if (pistm_experiment_run_stage(exp, "evaluate", nullptr) != PISTM_OK) {
      pistm_experiment_close(exp);
      return fail_from_library();
    }
    OwnedString metrics, timing;
    const pistm_status st = pistm_experiment_report(exp, &metrics.s, &timing.s);
    pistm_experiment_close(exp);
    if (st != PISTM_OK) return fail_from_library();
    std::fputs(eval_timing ? timing.s : metrics.s, stdout);
    return 0;
  }

  if (render_cmd->parsed()) {
    const char* diff = render_diff.empty() ? nullptr : render_diff.c_str();
    double lo = 0.0, hi = 0.0;
    if (!render_out.empty()) {
      if (pistm_render(render_in.c_str(), render_frame, diff, render_out.c_str(), &lo, &hi) !=
          PISTM_OK) {
        return fail_from_library();
      }
      std::printf("min=%.17g max=%.17g\n", lo, hi);
      return 0;
    }
    std::random_device rd;
    const fs::path tmp =
        fs::temp_directory_path() / ("pistm_render_" + std::to_string(rd()) + ".ppm");
    if (pistm_render(render_in.c_str(), render_frame, diff, tmp.string().c_str(), &lo, &hi) !=
        PISTM_OK) {
      return fail_from_library();
    }
    std::ifstream in(tmp, std::ios::binary);
    const std::string img((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    in.close();
    fs::remove(tmp);
    std::fwrite(img.data(), 1, img.size(), stdout);
    std::fprintf(stderr, "min=%.17g max=%.17g\n", lo, hi);
    return 0;
  }

  if (audit_cmd->parsed()) {
    pistm_experiment* exp = nullptr;
    if (pistm_experiment_open(audit_dir.c_str(), &exp) != PISTM_OK) return fail_from_library();
    OwnedString report;
    const pistm_status st = pistm_experiment_audit(exp, &report.s);
    pistm_experiment_close(exp);
    if (st != PISTM_OK) return fail_from_library();
    std::printf("%s\n", report.s);
    const json r = json::parse(report.s);
    if (!r.value("ok", false)) {
      return fail("audit.failed",
                  std::to_string(r["violations"].size()) + " violation(s) found");
    }
    return 0;
  }

  if (run_cmd->parsed()) {
    pistm_experiment* exp = nullptr;
    const bool reuse = config_path.empty() && fs::exists(fs::path(run_dir) / "config.json");
    if (reuse) {
      if (pistm_experiment_open(run_dir.c_str(), &exp) != PISTM_OK) return fail_from_library();
    } else {
      json cfg = file_cfg_ptr ? *file_cfg_ptr : json::object();
      if (app.count("--threads") > 0) cfg["threads"] = threads;
      if (global_seed_opt->count() > 0) {
        for (const char* section : {"doe", "sim", "kae", "rom", "gp"}) {
          if (!cfg.contains(section)) cfg[section] = json::object();
          cfg[section]["seed"] = global_seed;
        }
      }
      const std::string text = cfg.dump();
      if (pistm_experiment_create(run_dir.c_str(), text.c_str(), &exp) != PISTM_OK) {
        return fail_from_library();
      }
    }
    for (const char* stage : kStages) {
      int did_work = 0;
      if (pistm_experiment_run_stage(exp, stage, &did_work) != PISTM_OK) {
        pistm_experiment_close(exp);
        return fail_from_library();
      }
      if (verbose) std::printf("stage %-10s %s\n", stage, did_work ? "ran" : "up to date");
    }
    pistm_experiment_close(exp);
    return 0;
  }

  std::fprintf(stderr, "error: contract: no subcommand selected\n");
  return 2;
}
