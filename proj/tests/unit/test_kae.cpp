#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <vector>

#include "doctest.h"

#include "core/error.hpp"
#include "core/graph.hpp"
#include "core/kae.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "core/tensor_io.hpp"

using namespace pistm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pistm_kae_test_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Orthogonal matrix built from plane rotations conjugated by a seeded
// Householder reflection. The rotation angles are harmonics of one base
// frequency, so every orbit closes after `period` steps the way a shedding
// cycle does; powers of the matrix neither decay nor blow up.
Tensor seeded_orthogonal(std::size_t n, std::uint64_t seed, std::size_t period = 50) {
  REQUIRE(n % 2 == 0);
  Rng rng = make_rng(seed);
  const std::size_t harmonics[] = {1, 2, 3, 7};
  Tensor r = Tensor::zeros({n, n});
  for (std::size_t b = 0; b < n / 2; ++b) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(harmonics[b % 4]) /
                         static_cast<double>(period);
    const std::size_t i = 2 * b;
    r.at(i, i) = std::cos(theta);
    r.at(i, i + 1) = -std::sin(theta);
    r.at(i + 1, i) = std::sin(theta);
    r.at(i + 1, i + 1) = std::cos(theta);
  }
  Tensor v = random_normal({n}, rng);
  double vv = 0.0;
  for (std::size_t i = 0; i < n; ++i) vv += v[i] * v[i];
  Tensor h = Tensor::identity(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h.at(i, j) -= 2.0 * v[i] * v[j] / vv;
  return matmul(matmul(h, r), h);
}

// States x_{t+1} = A x_t laid out as [frames, height, width] fields.
FlowFieldSequence linear_sequence(const Tensor& a, const Tensor& x0, std::size_t frames,
                                  std::size_t height, std::size_t width) {
  const std::size_t n = x0.dim(0);
  REQUIRE(n == height * width);
  FlowFieldSequence seq;
  seq.fields = Tensor({frames, height, width});
  seq.t_start = 0;
  Tensor x = x0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < n; ++j) seq.fields[t * n + j] = x[j];
    Tensor next = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a.at(i, j) * x[j];
      next[i] = s;
    }
    x = next;
  }
  return seq;
}

FlowFieldSequence constant_sequence(std::size_t frames, std::size_t height, std::size_t width,
                                    double value) {
  FlowFieldSequence seq;
  seq.fields = Tensor::full({frames, height, width}, value);
  return seq;
}

}  // namespace

TEST_CASE("config validation rejects bad values") {
  KaeConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto reject = [](KaeConfig c) { CHECK_THROWS_AS(c.validate(), ContractError); };
  KaeConfig c = cfg;
  c.kappa = 0;
  reject(c);
  c = cfg;
  c.hidden = 0;
  reject(c);
  c = cfg;
  c.lambda = 0;
  reject(c);
  c = cfg;
  c.weight_bwd = -1.0;
  reject(c);
  c = cfg;
  c.epochs = 0;
  reject(c);
  c = cfg;
  c.batch = 0;
  reject(c);
  c = cfg;
  c.learning_rate = 0.0;
  reject(c);
}

TEST_CASE("seeded creation is deterministic and starts near identity operators") {
  KaeConfig cfg;
  cfg.kappa = 6;
  cfg.hidden = 12;
  cfg.seed = 42;
  KoopmanModel a = KoopmanModel::create(4, 8, cfg);
  KoopmanModel b = KoopmanModel::create(4, 8, cfg);
  CHECK(hash_tensor(a.enc_w1) == hash_tensor(b.enc_w1));
  CHECK(hash_tensor(a.dec_w2) == hash_tensor(b.dec_w2));
  CHECK(hash_tensor(a.forward_op) == hash_tensor(b.forward_op));

  cfg.seed = 43;
  KoopmanModel c = KoopmanModel::create(4, 8, cfg);
  CHECK(hash_tensor(a.enc_w1) != hash_tensor(c.enc_w1));

  CHECK(a.d_in == 32);
  CHECK(a.enc_b1.max() == 0.0);
  CHECK(a.enc_b1.min() == 0.0);
  for (std::size_t i = 0; i < cfg.kappa; ++i) {
    for (std::size_t j = 0; j < cfg.kappa; ++j) {
      const double want = i == j ? 1.0 : 0.0;
      CHECK(std::abs(a.forward_op.at(i, j) - want) < 0.15);
      CHECK(std::abs(a.backward_op.at(i, j) - want) < 0.15);
    }
  }
}

TEST_CASE("encode and decode check shapes") {
  KaeConfig cfg;
  cfg.kappa = 3;
  cfg.hidden = 8;
  KoopmanModel m = KoopmanModel::create(4, 6, cfg);

  Tensor field({4, 6});
  Tensor z = m.encode(field);
  CHECK(z.dims() == Shape{3});
  Tensor flat({24});
  CHECK(m.encode(flat).dims() == Shape{3});
  Tensor back = m.decode(z);
  CHECK(back.dims() == Shape{4, 6});

  Tensor rows({5, 24});
  CHECK(m.encode_batch(rows).dims() == Shape{5, 3});
  CHECK(m.decode_batch(Tensor({5, 3})).dims() == Shape{5, 24});

  CHECK_THROWS_AS(m.encode(Tensor({6, 4})), ShapeError);
  CHECK_THROWS_AS(m.decode(Tensor({4})), ShapeError);
  CHECK_THROWS_AS(m.encode_batch(Tensor({5, 23})), ShapeError);
  CHECK_THROWS_AS(m.decode_batch(Tensor({5, 4})), ShapeError);
}

TEST_CASE("latent evolution applies operator powers") {
  KaeConfig cfg;
  cfg.kappa = 2;
  cfg.hidden = 4;
  KoopmanModel m = KoopmanModel::create(1, 2, cfg);

  SUBCASE("zero steps is the identity") {
    Tensor z({2}, {0.3, -1.7});
    Tensor out = m.evolve_forward(z, 0);
    CHECK(out[0] == 0.3);
    CHECK(out[1] == -1.7);
  }

  SUBCASE("doubling operator gives powers of two") {
    m.forward_op = Tensor({2, 2}, {2.0, 0.0, 0.0, 2.0});
    Tensor z({2}, {1.0, 0.0});
    Tensor out = m.evolve_forward(z, 3);
    CHECK(out[0] == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-14));
  }

  SUBCASE("rotation preserves norm and the transpose undoes it") {
    const double c = std::cos(0.37), s = std::sin(0.37);
    m.forward_op = Tensor({2, 2}, {c, -s, s, c});
    m.backward_op = Tensor({2, 2}, {c, s, -s, c});
    Tensor z({2}, {0.6, 0.8});
    Tensor fwd = m.evolve_forward(z, 25);
    CHECK(std::sqrt(fwd[0] * fwd[0] + fwd[1] * fwd[1]) == doctest::Approx(1.0).epsilon(1e-12));
    Tensor round = m.evolve_backward(fwd, 25);
    CHECK(round[0] == doctest::Approx(0.6).epsilon(1e-10));
    CHECK(round[1] == doctest::Approx(0.8).epsilon(1e-10));
    CHECK(m.consistency_defect() < 1e-12);
  }

  SUBCASE("split application composes exactly") {
    Tensor z({2}, {0.9, -0.2});
    Tensor whole = m.evolve_forward(z, 5);
    Tensor split = m.evolve_forward(m.evolve_forward(z, 2), 3);
    CHECK(whole[0] == split[0]);
    CHECK(whole[1] == split[1]);
  }

  SUBCASE("negative step counts are rejected") {
    Tensor z({2}, {1.0, 0.0});
    CHECK_THROWS_AS(m.evolve_forward(z, -1), ContractError);
    CHECK_THROWS_AS(m.evolve_backward(z, -2), ContractError);
  }
}

TEST_CASE("consistency defect measures the inverse pairing") {
  KaeConfig cfg;
  cfg.kappa = 4;
  cfg.hidden = 4;
  KoopmanModel m = KoopmanModel::create(1, 4, cfg);

  m.forward_op = Tensor::identity(4);
  m.backward_op = Tensor::identity(4);
  CHECK(m.consistency_defect() == doctest::Approx(0.0).epsilon(1e-15));

  m.backward_op = Tensor::zeros({4, 4});
  // composite is zero, deviation is -I, norm sqrt(4), scaled by 1/sqrt(4)
  CHECK(m.consistency_defect() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("loss vanishes on a perfectly reproduced constant sequence") {
  KaeConfig cfg;
  cfg.kappa = 2;
  cfg.hidden = 3;
  cfg.lambda = 2;
  cfg.weight_con = 0.5;
  KoopmanModel m = KoopmanModel::create(2, 3, cfg);
  m.mean_field = Tensor::full({6}, 3.7);
  m.scale = 1.0;
  m.forward_op = Tensor::identity(2);
  m.backward_op = Tensor::identity(2);

  FlowFieldSequence seq = constant_sequence(3, 2, 3, 3.7);
  KaeLoss l = kae_loss(m, seq, {0});
  CHECK(l.reconstruction == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(l.forward == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(l.backward == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(l.consistency == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(l.total == doctest::Approx(0.0).epsilon(1e-15));

  // Zero forward operator: composite deviates from I by exactly -I, so the
  // scaled consistency term is 1 and everything else stays 0.
  m.forward_op = Tensor::zeros({2, 2});
  l = kae_loss(m, seq, {0});
  CHECK(l.reconstruction == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(l.consistency == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(l.total == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("loss windows must fit the sequence") {
  KaeConfig cfg;
  cfg.kappa = 2;
  cfg.hidden = 3;
  cfg.lambda = 2;
  KoopmanModel m = KoopmanModel::create(2, 3, cfg);
  FlowFieldSequence seq = constant_sequence(5, 2, 3, 1.0);

  CHECK_NOTHROW(kae_loss(m, seq, {0, 1, 2}));
  CHECK_THROWS_AS(kae_loss(m, seq, {3}), ContractError);
  CHECK_THROWS_AS(kae_loss(m, seq, std::vector<std::size_t>{}), ContractError);

  cfg.lambda = 8;
  KoopmanModel wide = KoopmanModel::create(2, 3, cfg);
  CHECK_THROWS_AS(kae_loss(wide, seq, {0}), ContractError);
}

TEST_CASE("loss total is the weighted component sum and components are non-negative") {
  KaeConfig cfg;
  cfg.kappa = 3;
  cfg.hidden = 6;
  cfg.lambda = 3;
  cfg.weight_id = 0.7;
  cfg.weight_fwd = 1.3;
  cfg.weight_bwd = 0.4;
  cfg.weight_con = 0.9;
  cfg.seed = 5;
  KoopmanModel m = KoopmanModel::create(3, 4, cfg);

  Rng rng = make_rng(77);
  FlowFieldSequence seq;
  seq.fields = random_normal({7, 3, 4}, rng);
  KaeLoss l = kae_loss(m, seq, {0, 1, 3});
  CHECK(l.reconstruction >= 0.0);
  CHECK(l.forward >= 0.0);
  CHECK(l.backward >= 0.0);
  CHECK(l.consistency >= 0.0);
  const double want =
      0.7 * l.reconstruction + 1.3 * l.forward + 0.4 * l.backward + 0.9 * l.consistency;
  CHECK(l.total == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("training is deterministic per seed and records the loss trajectory") {
  Tensor a = seeded_orthogonal(6, 9);
  Rng rng = make_rng(10);
  Tensor x0 = random_normal({6}, rng);
  FlowFieldSequence seq = linear_sequence(a, x0, 24, 2, 3);

  KaeConfig cfg;
  cfg.kappa = 6;
  cfg.hidden = 12;
  cfg.lambda = 3;
  cfg.epochs = 5;
  cfg.batch = 8;
  cfg.seed = 21;

  KoopmanModel m1 = train_kae(seq, cfg);
  KoopmanModel m2 = train_kae(seq, cfg);
  CHECK(hash_tensor(m1.enc_w1) == hash_tensor(m2.enc_w1));
  CHECK(hash_tensor(m1.forward_op) == hash_tensor(m2.forward_op));
  CHECK(hash_tensor(m1.dec_b2) == hash_tensor(m2.dec_b2));
  CHECK(m1.final_loss.total == m2.final_loss.total);

  cfg.seed = 22;
  KoopmanModel m3 = train_kae(seq, cfg);
  CHECK(hash_tensor(m1.enc_w1) != hash_tensor(m3.enc_w1));

  CHECK(m1.initial_loss.total > 0.0);
  CHECK(m1.final_loss.total < m1.initial_loss.total);
  CHECK(std::isfinite(m1.final_loss.total));
}

TEST_CASE("training rejects sequences shorter than one window") {
  KaeConfig cfg;
  cfg.lambda = 8;
  FlowFieldSequence seq = constant_sequence(8, 2, 3, 1.0);
  CHECK_THROWS_AS(train_kae(seq, cfg), ContractError);
}

TEST_CASE("a constant sequence forecasts itself") {
  FlowFieldSequence seq = constant_sequence(12, 3, 4, 3.7);
  KaeConfig cfg;
  cfg.kappa = 4;
  cfg.hidden = 8;
  cfg.lambda = 3;
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.learning_rate = 1e-4;
  KoopmanModel m = train_kae(seq, cfg);

  CHECK(m.scale == 1.0);  // zero variance falls back to unit scale
  CHECK(m.mean_field[0] == doctest::Approx(3.7).epsilon(1e-15));

  // The optimizer never settles exactly on the fixed point (its steps are
  // gradient-scale invariant), so the band is the training noise floor, a
  // few multiples of the learning rate, not machine precision.
  FlowFieldSequence fc = m.forecast(seq.frame_at(11), 5);
  CHECK(fc.frames() == 6);
  CHECK(fc.t_start == 0);
  CHECK(fc.source == FieldSource::Koopman);
  for (std::size_t i = 0; i < fc.fields.size(); ++i) {
    CHECK(std::abs(fc.fields[i] - 3.7) < 1e-2);
  }
}

TEST_CASE("trained forecast tracks the matrix-power oracle on a linear system") {
  const std::size_t n = 8, height = 2, width = 4;
  const std::size_t history = 200;
  const long horizon = 9;  // ten predicted steps
  Tensor a = seeded_orthogonal(n, 2024);
  Rng rng = make_rng(3);
  Tensor x0 = random_normal({n}, rng);
  FlowFieldSequence full = linear_sequence(a, x0, history + horizon + 1, height, width);

  FlowFieldSequence train;
  train.fields = Tensor({history, height, width});
  for (std::size_t i = 0; i < train.fields.size(); ++i) train.fields[i] = full.fields[i];

  KaeConfig cfg;
  cfg.kappa = 8;
  cfg.hidden = 64;
  cfg.lambda = 10;
  cfg.epochs = 1000;
  cfg.batch = 16;
  cfg.learning_rate = 2e-3;
  cfg.seed = 7;
  KoopmanModel m = train_kae(train, cfg);

  CHECK(m.final_loss.total < 0.5 * m.initial_loss.total);
  CHECK(m.consistency_defect() <= 0.1);

  FlowFieldSequence fc = m.forecast(train.frame_at(history - 1), horizon);
  REQUIRE(fc.frames() == static_cast<std::size_t>(horizon) + 1);
  double first_step = 0.0, last_step = 0.0;
  for (long s = 0; s <= horizon; ++s) {
    Tensor got = fc.frame_at(s);
    Tensor want = full.frame_at(static_cast<long>(history) + s);
    const double rel = relative_frobenius_error(got, want);
    if (s == 0) first_step = rel;
    if (s == horizon) last_step = rel;
    INFO("step ", s, " relative error ", rel);
    CHECK(rel <= 1e-2);
  }
  // error stays flat over the horizon instead of compounding
  CHECK(last_step <= 5.0 * first_step);
}

TEST_CASE("checkpoint round trip preserves the model exactly") {
  Tensor a = seeded_orthogonal(6, 4);
  Rng rng = make_rng(11);
  Tensor x0 = random_normal({6}, rng);
  FlowFieldSequence seq = linear_sequence(a, x0, 20, 2, 3);

  KaeConfig cfg;
  cfg.kappa = 5;
  cfg.hidden = 9;
  cfg.lambda = 4;
  cfg.epochs = 4;
  cfg.batch = 4;
  cfg.weight_con = 0.3;
  cfg.seed = 31;
  KoopmanModel m = train_kae(seq, cfg);

  TempDir tmp;
  m.save(tmp.path);
  KoopmanModel r = KoopmanModel::load(tmp.path);

  CHECK(r.height == 2);
  CHECK(r.width == 3);
  CHECK(r.kappa == 5);
  CHECK(r.hidden == 9);
  CHECK(r.config.lambda == 4);
  CHECK(r.config.weight_con == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(r.scale == m.scale);
  CHECK(hash_tensor(r.enc_w1) == hash_tensor(m.enc_w1));
  CHECK(hash_tensor(r.enc_b2) == hash_tensor(m.enc_b2));
  CHECK(hash_tensor(r.dec_w2) == hash_tensor(m.dec_w2));
  CHECK(hash_tensor(r.forward_op) == hash_tensor(m.forward_op));
  CHECK(hash_tensor(r.backward_op) == hash_tensor(m.backward_op));
  CHECK(hash_tensor(r.mean_field) == hash_tensor(m.mean_field));
  CHECK(r.final_loss.total == m.final_loss.total);
  CHECK(r.consistency_defect() == m.consistency_defect());

  FlowFieldSequence f1 = m.forecast(seq.frame_at(19), 3);
  FlowFieldSequence f2 = r.forecast(seq.frame_at(19), 3);
  CHECK(hash_tensor(f1.fields) == hash_tensor(f2.fields));

  SUBCASE("a foreign checkpoint kind is rejected") {
    TempDir other;
    Tensor w = Tensor::identity(2);
    save_checkpoint(other.path, {{"w", &w}}, {{"kind", "something-else"}});
    CHECK_THROWS_AS(KoopmanModel::load(other.path), IoError);
  }
}
