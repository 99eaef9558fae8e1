#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <vector>

#include "doctest.h"

#include "core/conv_rom.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "core/tensor_io.hpp"

using namespace pistm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pistm_rom_test_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Three fixed spatial modes with condition- and time-varying amplitudes,
// the low-rank shape compressed flow snapshots actually take.
FlowFieldSequence mode_family(double re, std::size_t frames, std::size_t h, std::size_t w) {
  FlowFieldSequence seq;
  seq.fields = Tensor({frames, h, w});
  seq.t_start = 0;
  seq.source = FieldSource::Koopman;
  for (std::size_t t = 0; t < frames; ++t) {
    const double a1 = (re / 100.0) * std::sin(0.4 * static_cast<double>(t));
    const double a2 = 0.6 * std::cos(0.4 * static_cast<double>(t) + re / 80.0);
    const double a3 = 0.3 + re / 400.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double u = 2.0 * std::numbers::pi * static_cast<double>(x) / static_cast<double>(w);
        const double v = 2.0 * std::numbers::pi * static_cast<double>(y) / static_cast<double>(h);
        const double cx = (static_cast<double>(x) - static_cast<double>(w) / 2.0) /
                          (static_cast<double>(w) / 4.0);
        const double cy = (static_cast<double>(y) - static_cast<double>(h) / 2.0) /
                          (static_cast<double>(h) / 4.0);
        seq.fields.at(t, y, x) = a1 * std::sin(u) * std::cos(v) +
                                 a2 * std::cos(2.0 * u) * std::sin(v) +
                                 a3 * std::exp(-(cx * cx + cy * cy));
      }
  }
  return seq;
}

FlowFieldSequence constant_forecast(double value, std::size_t frames, std::size_t h,
                                    std::size_t w) {
  FlowFieldSequence seq;
  seq.fields = Tensor::full({frames, h, w}, value);
  seq.t_start = 0;
  seq.source = FieldSource::Koopman;
  return seq;
}

}  // namespace

TEST_CASE("config validation rejects bad values") {
  RomConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto reject = [](RomConfig c) { CHECK_THROWS_AS(c.validate(), ContractError); };
  RomConfig c = cfg;
  c.code_dim = 0;
  reject(c);
  c = cfg;
  c.channels = {};
  reject(c);
  c = cfg;
  c.channels = {8, 0};
  reject(c);
  c = cfg;
  c.epochs = 0;
  reject(c);
  c = cfg;
  c.batch = 0;
  reject(c);
  c = cfg;
  c.learning_rate = -1.0;
  reject(c);
}

TEST_CASE("encoder and decoder compose to the identity shape map on supported grids") {
  RomConfig cfg;  // four layers, each halving the grid
  for (std::size_t g : {32, 48, 64, 80}) {
    CAPTURE(g);
    ConvAutoencoder m = ConvAutoencoder::create(g, g, cfg);
    Rng rng = make_rng(g);
    Tensor field = random_normal({g, g}, rng);
    Tensor z = m.encode(field);
    CHECK(z.dims() == Shape{cfg.code_dim});
    CHECK(z.all_finite());
    Tensor back = m.decode(z);
    CHECK(back.dims() == Shape{g, g});
    CHECK(back.all_finite());
  }
}

TEST_CASE("grids that do not halve cleanly are rejected") {
  RomConfig cfg;
  CHECK_THROWS_AS(ConvAutoencoder::create(20, 20, cfg), ShapeError);  // 20 -> 10 -> 5 -> odd
  CHECK_THROWS_AS(ConvAutoencoder::create(24, 40, cfg), ShapeError);  // 24 halves out at depth 3

  RomConfig wide;  // latent must stay a compression
  wide.channels = {4};
  wide.code_dim = 16;
  CHECK_THROWS_AS(ConvAutoencoder::create(4, 4, wide), ContractError);
}

TEST_CASE("creation is seeded and encoding is deterministic") {
  RomConfig cfg;
  cfg.channels = {4, 8};
  cfg.code_dim = 3;
  cfg.seed = 12;
  ConvAutoencoder a = ConvAutoencoder::create(16, 16, cfg);
  ConvAutoencoder b = ConvAutoencoder::create(16, 16, cfg);
  CHECK(hash_tensor(a.enc_kernels[0]) == hash_tensor(b.enc_kernels[0]));
  CHECK(hash_tensor(a.dec_w) == hash_tensor(b.dec_w));
  cfg.seed = 13;
  ConvAutoencoder c = ConvAutoencoder::create(16, 16, cfg);
  CHECK(hash_tensor(a.enc_kernels[0]) != hash_tensor(c.enc_kernels[0]));

  Rng rng = make_rng(5);
  Tensor field = random_normal({16, 16}, rng);
  Tensor z1 = a.encode(field);
  Tensor z2 = a.encode(field);
  CHECK(hash_tensor(z1) == hash_tensor(z2));

  CHECK_THROWS_AS(a.encode(Tensor({16, 8})), ShapeError);
  CHECK_THROWS_AS(a.decode(Tensor({4})), ShapeError);
  CHECK_THROWS_AS(a.encode_batch(Tensor({2, 100})), ShapeError);
  CHECK_THROWS_AS(a.decode_batch(Tensor({2, 2})), ShapeError);
}

TEST_CASE("dataset construction labels, deduplicates and splits rows") {
  std::vector<std::pair<double, FlowFieldSequence>> fc;
  fc.emplace_back(60.0, constant_forecast(1.0, 5, 8, 8));
  fc.emplace_back(90.0, constant_forecast(2.0, 5, 8, 8));
  fc.emplace_back(120.0, constant_forecast(3.0, 5, 8, 8));

  RomDataset ds = build_rom_dataset(fc, 0.2, 4);
  CHECK(ds.rows() == 15);
  CHECK(ds.height() == 8);
  CHECK(ds.re[0] == 60.0);
  CHECK(ds.t[0] == 0);
  CHECK(ds.re[7] == 90.0);
  CHECK(ds.t[7] == 2);
  CHECK(ds.row_field(7).at(0, 0) == 2.0);

  CHECK(ds.validation_rows.size() == 3);
  CHECK(ds.train_rows.size() == 12);
  std::set<std::size_t> all(ds.train_rows.begin(), ds.train_rows.end());
  all.insert(ds.validation_rows.begin(), ds.validation_rows.end());
  CHECK(all.size() == 15);  // disjoint and exhaustive
  CHECK(*all.rbegin() == 14);

  RomDataset same = build_rom_dataset(fc, 0.2, 4);
  CHECK(same.validation_rows == ds.validation_rows);
  RomDataset other = build_rom_dataset(fc, 0.2, 5);
  CHECK(other.validation_rows != ds.validation_rows);

  SUBCASE("duplicate (condition, timestep) rows are rejected") {
    fc.emplace_back(60.0, constant_forecast(9.0, 2, 8, 8));
    CHECK_THROWS_AS(build_rom_dataset(fc, 0.2, 4), ContractError);
  }
  SUBCASE("raw simulation frames are rejected") {
    FlowFieldSequence sim = constant_forecast(1.0, 3, 8, 8);
    sim.source = FieldSource::Simulation;
    CHECK_THROWS_AS(build_rom_dataset({{200.0, sim}}, 0.0, 4), ContractError);
  }
  SUBCASE("grid mismatch is rejected") {
    fc.emplace_back(150.0, constant_forecast(1.0, 3, 8, 10));
    CHECK_THROWS_AS(build_rom_dataset(fc, 0.2, 4), ShapeError);
  }
  SUBCASE("fraction outside [0, 0.5] is rejected") {
    CHECK_THROWS_AS(build_rom_dataset(fc, 0.7, 4), ContractError);
    CHECK_THROWS_AS(build_rom_dataset(fc, -0.1, 4), ContractError);
  }
}

TEST_CASE("training requires at least two conditions") {
  RomConfig cfg;
  cfg.channels = {4};
  cfg.code_dim = 3;
  RomDataset ds = build_rom_dataset({{100.0, constant_forecast(1.0, 6, 8, 8)}}, 0.0, 0);
  CHECK_THROWS_AS(train_rom(ds, cfg), ContractError);
}

TEST_CASE("identical constant fields are reproduced almost exactly") {
  std::vector<std::pair<double, FlowFieldSequence>> fc;
  fc.emplace_back(60.0, constant_forecast(2.5, 6, 16, 16));
  fc.emplace_back(120.0, constant_forecast(2.5, 6, 16, 16));

  RomDataset ds = build_rom_dataset(fc, 0.25, 3);
  RomConfig cfg;
  cfg.channels = {4, 8};
  cfg.code_dim = 3;
  cfg.epochs = 5;
  cfg.batch = 4;
  cfg.learning_rate = 1e-5;
  ConvAutoencoder m = train_rom(ds, cfg);

  CHECK(m.scale == 1.0);  // constant dataset has zero variance
  CHECK(m.validation_error <= 1e-3);
  CHECK(m.train_error <= 1e-3);
  Tensor rec = m.decode(m.encode(ds.row_field(0)));
  for (std::size_t i = 0; i < rec.size(); ++i) CHECK(std::abs(rec[i] - 2.5) < 5e-3);
}

TEST_CASE("training compresses a smooth field family and generalizes to held-out rows") {
  std::vector<std::pair<double, FlowFieldSequence>> fc;
  for (double re : {60.0, 100.0, 140.0, 180.0}) fc.emplace_back(re, mode_family(re, 8, 24, 24));
  RomDataset ds = build_rom_dataset(fc, 0.1, 9);
  CHECK(ds.rows() == 32);
  CHECK(ds.validation_rows.size() == 3);

  RomConfig cfg;
  cfg.code_dim = 5;
  cfg.channels = {6, 12};
  cfg.epochs = 400;
  cfg.batch = 8;
  cfg.learning_rate = 2e-3;
  cfg.seed = 0;
  ConvAutoencoder m = train_rom(ds, cfg);

  CHECK(m.final_train_loss < 0.5 * m.initial_train_loss);
  CHECK(m.train_error <= 0.05);
  CHECK(m.validation_error <= 0.05);
  CHECK(m.validation_error <= 2.0 * m.train_error);

  for (std::size_t r : ds.validation_rows) {
    Tensor f = ds.row_field(r);
    CHECK(relative_frobenius_error(m.decode(m.encode(f)), f) <= 0.075);
  }

  SUBCASE("training is deterministic per seed") {
    ConvAutoencoder again = train_rom(ds, cfg);
    CHECK(hash_tensor(again.enc_w) == hash_tensor(m.enc_w));
    CHECK(hash_tensor(again.dec_kernels[1]) == hash_tensor(m.dec_kernels[1]));
    CHECK(again.final_train_loss == m.final_train_loss);
  }

  SUBCASE("checkpoint round trip preserves the model exactly") {
    TempDir tmp;
    m.save(tmp.path);
    ConvAutoencoder r = ConvAutoencoder::load(tmp.path);
    CHECK(r.height == 24);
    CHECK(r.code_dim == 5);
    CHECK(r.config.channels == std::vector<std::size_t>{6, 12});
    CHECK(r.scale == m.scale);
    CHECK(r.validation_error == m.validation_error);
    CHECK(hash_tensor(r.enc_kernels[0]) == hash_tensor(m.enc_kernels[0]));
    CHECK(hash_tensor(r.enc_biases[1]) == hash_tensor(m.enc_biases[1]));
    CHECK(hash_tensor(r.dec_w) == hash_tensor(m.dec_w));
    CHECK(hash_tensor(r.mean_field) == hash_tensor(m.mean_field));
    Tensor f = ds.row_field(4);
    CHECK(hash_tensor(r.encode(f)) == hash_tensor(m.encode(f)));
  }

  SUBCASE("latent table covers every condition and timestep") {
    LatentTable table = extract_latent_table(m, fc);
    REQUIRE(table.rows() == 32);
    CHECK(table.code_dim == 5);
    CHECK(table.re[0] == 60.0);
    CHECK(table.t[7] == 7);
    CHECK(table.re[31] == 180.0);

    // row 12 is condition 100 at timestep 4
    Tensor z = m.encode(fc[1].second.frame_at(4));
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(table.z.at(12, j) == doctest::Approx(z[j]).epsilon(1e-12));
    }

    TempDir tmp;
    save_latent_table(table, tmp.path / "latents.csv");
    LatentTable r = load_latent_table(tmp.path / "latents.csv");
    CHECK(r.code_dim == 5);
    CHECK(r.re == table.re);
    CHECK(r.t == table.t);
    CHECK(hash_tensor(r.z) == hash_tensor(table.z));  // bit-exact round trip
  }
}

TEST_CASE("latent table files reject malformed input") {
  TempDir tmp;
  CHECK_THROWS_AS(load_latent_table(tmp.path / "missing.csv"), IoError);

  write_text_file(tmp.path / "bad_header.csv", "re,z0\n100,1\n");
  CHECK_THROWS_AS(load_latent_table(tmp.path / "bad_header.csv"), IoError);

  write_text_file(tmp.path / "bad_row.csv", "re,t,z0\n100,0\n");
  CHECK_THROWS_AS(load_latent_table(tmp.path / "bad_row.csv"), IoError);

  write_text_file(tmp.path / "bad_cell.csv", "re,t,z0\n100,0,abc\n");
  CHECK_THROWS_AS(load_latent_table(tmp.path / "bad_cell.csv"), IoError);
}

TEST_CASE("a foreign checkpoint kind is rejected") {
  TempDir tmp;
  Tensor w = Tensor::identity(2);
  save_checkpoint(tmp.path, {{"w", &w}}, {{"kind", "something-else"}});
  CHECK_THROWS_AS(ConvAutoencoder::load(tmp.path), IoError);
}
