// Drives the installed binary as a subprocess; the library is covered
// elsewhere, so these tests pin the command surface: flags, exit codes,
// stream contracts.
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("pistm_cli_test_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path err_file =
      fs::temp_directory_path() / ("pistm_cli_err_" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(PISTM_CLI_PATH) + " " + args + " 2>" + err_file.string();
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_file, std::ios::binary);
  r.err.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  in.close();
  std::error_code ec;
  fs::remove(err_file, ec);
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::size_t count_lines(const std::string& text) {
  std::size_t lines = 0;
  for (char c : text) lines += (c == '\n');
  return lines;
}

const char* kTinyConfig = R"({
  "doe": {"n": 3, "lo": 8.0, "hi": 28.0, "test": [18.0], "seed": 11},
  "window": {"t": 0, "history": 12, "horizon": 3},
  "sim": {"height": 48, "width": 48, "warmup": 400, "interval": 4, "u_in": 0.08},
  "kae": {"kappa": 4, "hidden": 32, "lambda": 3, "epochs": 25, "batch": 4,
          "learning_rate": 1e-3},
  "rom": {"code_dim": 3, "channels": [4, 8], "epochs": 40, "batch": 4,
          "learning_rate": 1e-3, "validation_fraction": 0.2},
  "gp": {"starts": 2, "iterations": 30},
  "threads": 1
})";

}  // namespace

TEST_CASE("help and exit codes") {
  const CliResult help = run_cli("--help");
  CHECK(help.code == 0);
  for (const char* sub : {"doe", "simulate", "train-kae", "forecast", "train-rom",
                          "train-gp", "predict", "evaluate", "render", "audit",
                          "run-all", "schema"}) {
    CAPTURE(sub);
    CHECK(help.out.find(sub) != std::string::npos);
  }

  CHECK(run_cli("doe --no-such-flag").code == 2);
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
}

TEST_CASE("schema prints the full default config") {
  const CliResult r = run_cli("schema");
  REQUIRE(r.code == 0);
  const json cfg = json::parse(r.out);
  for (const char* key : {"doe", "window", "sim", "kae", "rom", "gp", "threads"}) {
    CAPTURE(key);
    CHECK(cfg.contains(key));
  }
  CHECK(cfg["doe"]["n"] == 45);
  CHECK(cfg["window"]["history"] == 181);
}

TEST_CASE("every config key is reachable from a flag") {
  const json cfg = json::parse(run_cli("schema").out);

  // Key spellings that differ from their flag: everything else is key with
  // underscores dashed.
  const std::map<std::string, std::string> renamed = {
      {"kappa", "latent"}, {"lo", "min"},     {"hi", "max"},
      {"height", "grid"},  {"width", "grid"},
  };
  const std::map<std::string, std::string> owner = {
      {"doe", "doe"}, {"sim", "simulate"}, {"kae", "train-kae"},
      {"rom", "train-rom"}, {"gp", "train-gp"},
  };

  for (const auto& [section, sub] : owner) {
    const CliResult help = run_cli(sub + " --help");
    REQUIRE(help.code == 0);
    for (const auto& item : cfg[section].items()) {
      std::string flag = item.key();
      if (auto it = renamed.find(flag); it != renamed.end()) {
        flag = it->second;
      } else {
        for (char& c : flag) {
          if (c == '_') c = '-';
        }
      }
      CAPTURE(section);
      CAPTURE(item.key());
      CHECK(help.out.find("--" + flag) != std::string::npos);
    }
  }

  // Window start and horizon surface on predict; the history length only
  // matters inside a full experiment, where the config file carries it.
  const CliResult predict_help = run_cli("predict --help");
  CHECK(predict_help.out.find("--t") != std::string::npos);
  CHECK(predict_help.out.find("--k") != std::string::npos);
  CHECK(run_cli("--help").out.find("--threads") != std::string::npos);
}

TEST_CASE("doe writes a deterministic design") {
  TempDir dir;
  const std::string out = (dir.path / "doe.json").string();
  const CliResult r =
      run_cli("doe --n 4 --min 10 --max 40 --test 25 --seed 3 --out " + out);
  REQUIRE(r.code == 0);
  const json doe = json::parse(read_file(out));
  CHECK(doe["train"].size() == 4);
  CHECK(doe["test"] == json::array({25.0}));
  CHECK(doe["lo"] == 10.0);
  CHECK(doe["hi"] == 40.0);

  const std::string again = (dir.path / "doe2.json").string();
  REQUIRE(run_cli("doe --n 4 --min 10 --max 40 --test 25 --seed 3 --out " + again).code == 0);
  CHECK(read_file(out) == read_file(again));

  SUBCASE("config file fills in what flags omit") {
    const fs::path cfg_path = dir.path / "cfg.json";
    std::ofstream(cfg_path) << R"({"doe":{"n":6,"lo":100.0,"hi":200.0,"test":[150.0]}})";
    const std::string merged = (dir.path / "doe3.json").string();
    REQUIRE(run_cli("--config " + cfg_path.string() + " doe --n 3 --out " + merged).code == 0);
    const json d = json::parse(read_file(merged));
    CHECK(d["train"].size() == 3);
    CHECK(d["lo"] == 100.0);
    CHECK(d["hi"] == 200.0);
  }

  SUBCASE("global seed reaches the sampler") {
    const std::string a = (dir.path / "a.json").string();
    const std::string b = (dir.path / "b.json").string();
    REQUIRE(run_cli("--seed 7 doe --n 3 --min 1 --max 2 --test 1.5 --out " + a).code == 0);
    REQUIRE(run_cli("doe --n 3 --min 1 --max 2 --test 1.5 --seed 7 --out " + b).code == 0);
    CHECK(json::parse(read_file(a))["seed"] == 7);
    CHECK(read_file(a) == read_file(b));
  }
}

TEST_CASE("library failures map to exit 1 with a category") {
  TempDir dir;
  const CliResult kae = run_cli("train-kae --data " + (dir.path / "nowhere").string() +
                                " --out " + (dir.path / "model").string());
  CHECK(kae.code == 1);
  CHECK(kae.err.find("io.missing_input") != std::string::npos);

  const CliResult pred =
      run_cli("predict --rom " + (dir.path / "rom").string() + " --gp " +
              (dir.path / "gp").string() + " --re 100 --out " + (dir.path / "p").string());
  CHECK(pred.code == 1);
  CHECK(pred.err.rfind("error: io.", 0) == 0);

  const fs::path bad_cfg = dir.path / "bad.json";
  std::ofstream(bad_cfg) << "{not json";
  const CliResult bad = run_cli("--config " + bad_cfg.string() + " doe --out " +
                                (dir.path / "d.json").string());
  CHECK(bad.code == 1);
  CHECK(bad.err.find("io.bad_format") != std::string::npos);
}

TEST_CASE("simulate then render") {
  TempDir dir;
  const std::string sim = (dir.path / "sim").string();
  REQUIRE(run_cli("simulate --re 12 --grid 16x16 --warmup 50 --interval 2 --snapshots 8 "
                  "--t-start -8 --seed 1 --out " + sim)
              .code == 0);
  CHECK(fs::exists(fs::path(sim) / "manifest.json"));

  const std::string img = (dir.path / "frame.ppm").string();
  const CliResult file_render = run_cli("render --in " + sim + " --frame -4 --out " + img);
  REQUIRE(file_render.code == 0);
  CHECK(file_render.out.rfind("min=", 0) == 0);
  CHECK(file_render.out.find("max=") != std::string::npos);
  const std::string pixmap = read_file(img);
  CHECK(pixmap.rfind("P6\n16 16\n255\n", 0) == 0);
  CHECK(pixmap.size() == std::string("P6\n16 16\n255\n").size() + 16 * 16 * 3);

  SUBCASE("without --out the pixmap streams to stdout") {
    const CliResult stream = run_cli("render --in " + sim + " --frame -4");
    REQUIRE(stream.code == 0);
    CHECK(stream.out == pixmap);
    CHECK(stream.err.rfind("min=", 0) == 0);
  }

  SUBCASE("difference against itself is flat") {
    const CliResult diff =
        run_cli("render --in " + sim + " --frame -4 --diff " + sim + " --out " + img);
    REQUIRE(diff.code == 0);
    CHECK(diff.out.rfind("min=0 max=0", 0) == 0);
  }

  SUBCASE("malformed grid exits 2") {
    CHECK(run_cli("simulate --re 12 --grid 16by16 --out " + (dir.path / "x").string()).code ==
          2);
  }

  SUBCASE("missing frame fails through the library") {
    const CliResult r = run_cli("render --in " + sim + " --frame 99 --out " + img);
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: contract", 0) == 0);
  }
}

TEST_CASE("run-all, evaluate, audit on a small experiment") {
  TempDir dir;
  const fs::path cfg_path = dir.path / "experiment.json";
  std::ofstream(cfg_path) << kTinyConfig;
  const std::string exp = (dir.path / "exp").string();

  const CliResult run =
      run_cli("--config " + cfg_path.string() + " --verbose run-all --dir " + exp);
  REQUIRE(run.code == 0);
  for (const char* stage : {"doe", "simulate", "train-kae", "forecast", "train-rom",
                            "train-gp", "predict", "evaluate"}) {
    CAPTURE(stage);
    CHECK(run.out.find(std::string("stage ") + stage) != std::string::npos);
    CHECK(run.out.find("ran") != std::string::npos);
  }

  SUBCASE("a second pass is entirely up to date") {
    const CliResult again = run_cli("--verbose run-all --dir " + exp);
    REQUIRE(again.code == 0);
    CHECK(again.out.find("up to date") != std::string::npos);
    CHECK(again.out.find(" ran\n") == std::string::npos);
  }

  SUBCASE("evaluate prints the metrics table") {
    const CliResult metrics = run_cli("evaluate --dir " + exp);
    REQUIRE(metrics.code == 0);
    CHECK(metrics.out.rfind("re,t,eps_E,eps_KE,eps_K\n", 0) == 0);
    CHECK(count_lines(metrics.out) == 5);

    const CliResult timing = run_cli("evaluate --dir " + exp + " --timing");
    REQUIRE(timing.code == 0);
    CHECK(timing.out.rfind("re,simulate_seconds,predict_seconds,speedup\n", 0) == 0);
    CHECK(count_lines(timing.out) == 2);
  }

  SUBCASE("audit passes and reports artifact counts") {
    const CliResult audit = run_cli("audit --dir " + exp);
    REQUIRE(audit.code == 0);
    const json report = json::parse(audit.out);
    CHECK(report["ok"] == true);
    CHECK(report["artifacts"].get<int>() > 0);
    CHECK(report["violations"].empty());
  }

  SUBCASE("tampering turns the audit exit code") {
    std::ofstream((fs::path(exp) / "latents" / "latents.csv"), std::ios::app) << "tampered\n";
    const CliResult audit = run_cli("audit --dir " + exp);
    CHECK(audit.code == 1);
    CHECK(audit.err.find("audit.failed") != std::string::npos);
    CHECK(json::parse(audit.out)["ok"] == false);
  }
}
