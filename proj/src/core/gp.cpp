#include "core/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "json.hpp"

#include "core/adam.hpp"
#include "core/error.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"
#include "core/tensor_io.hpp"

namespace pistm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Jitter ladder walked when the plain matrix is not positive definite.
constexpr double kJitterLadder[] = {1e-10, 1e-9, 1e-8, 1e-7, 1e-6};

void check_inputs(const Tensor& x, const Tensor& y, const char* where) {
  if (x.ndim() != 2 || x.dim(1) != 2) {
    throw ShapeError(std::string(where) + ": inputs must be [n, 2], got " + shape_to_string(x.dims()));
  }
  if (y.ndim() != 1 || y.dim(0) != x.dim(0)) {
    throw ShapeError(std::string(where) + ": targets must be [n] matching inputs, got " +
                     shape_to_string(y.dims()));
  }
  x.require_finite(where);
  y.require_finite(where);
}

// Kernel matrix without the noise diagonal.
Tensor kernel_matrix(const Tensor& x, const GPHyper& h) {
  const std::size_t n = x.dim(0);
  const double inv_re2 = 1.0 / (h.lengthscale_re * h.lengthscale_re);
  const double inv_t2 = 1.0 / (h.lengthscale_t * h.lengthscale_t);
  Tensor k({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    k.at(i, i) = h.signal_variance;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dre = x.at(i, 0) - x.at(j, 0);
      const double dt = x.at(i, 1) - x.at(j, 1);
      const double v =
          h.signal_variance * std::exp(-0.5 * (dre * dre * inv_re2 + dt * dt * inv_t2));
      k.at(i, j) = v;
      k.at(j, i) = v;
    }
  }
  return k;
}

struct Factorization {
  Tensor chol{Shape{1, 1}};
  Tensor alpha{Shape{1}};
  double lml = 0.0;
};

Factorization factorize(const Tensor& x, const Tensor& y, const GPHyper& h, double jitter) {
  const std::size_t n = x.dim(0);
  Tensor k = kernel_matrix(x, h);
  const double diag = h.noise_variance + jitter;
  for (std::size_t i = 0; i < n; ++i) k.at(i, i) += diag;
  Factorization f;
  f.chol = cholesky(k);
  f.alpha = cholesky_solve(f.chol, y);
  double fit = 0.0;
  double logdet = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    fit += y[i] * f.alpha[i];
    logdet += std::log(f.chol.at(i, i));
  }
  f.lml = -0.5 * fit - logdet - 0.5 * static_cast<double>(n) * kLog2Pi;
  return f;
}

// Factorization at the smallest workable jitter, starting from none.
std::pair<Factorization, double> factorize_ladder(const Tensor& x, const Tensor& y,
                                                  const GPHyper& h) {
  try {
    return {factorize(x, y, h, 0.0), 0.0};
  } catch (const NotPositiveDefiniteError&) {
  }
  for (double jitter : kJitterLadder) {
    try {
      return {factorize(x, y, h, jitter), jitter};
    } catch (const NotPositiveDefiniteError&) {
      if (jitter == kJitterLadder[std::size(kJitterLadder) - 1]) throw;
    }
  }
  throw NotPositiveDefiniteError(0, "jitter ladder exhausted");  // unreachable
}

double clamp_log(double v, double lo, double hi) {
  return std::min(std::max(v, std::log(lo)), std::log(hi));
}

void clamp_log_hypers(Tensor& lh) {
  lh[0] = clamp_log(lh[0], kMinSignalVariance, kMaxSignalVariance);
  lh[1] = clamp_log(lh[1], kMinLengthscale, kMaxLengthscale);
  lh[2] = clamp_log(lh[2], kMinLengthscale, kMaxLengthscale);
  lh[3] = clamp_log(lh[3], kMinNoiseVariance, kMaxNoiseVariance);
}

GPHyper hyper_from_log(const Tensor& lh) {
  GPHyper h;
  h.signal_variance = std::exp(lh[0]);
  h.lengthscale_re = std::exp(lh[1]);
  h.lengthscale_t = std::exp(lh[2]);
  h.noise_variance = std::exp(lh[3]);
  return h;
}

}  // namespace

void GPHyper::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ContractError(std::string("gp hyperparameter ") + name + " must be positive, got " +
                          std::to_string(v));
    }
  };
  positive(signal_variance, "signal_variance");
  positive(lengthscale_re, "lengthscale_re");
  positive(lengthscale_t, "lengthscale_t");
  positive(noise_variance, "noise_variance");
}

void GPConfig::validate() const {
  if (starts == 0) throw ContractError("gp config: starts must be at least 1");
  if (iterations == 0) throw ContractError("gp config: iterations must be at least 1");
  if (!(learning_rate > 0.0)) throw ContractError("gp config: learning rate must be positive");
}

double gp_kernel(const Tensor& x1, const Tensor& x2, const GPHyper& hyper) {
  hyper.validate();
  if (x1.size() != 2 || x2.size() != 2) {
    throw ShapeError("gp kernel inputs must be 2-vectors, got " + shape_to_string(x1.dims()) + " and " +
                     shape_to_string(x2.dims()));
  }
  const double dre = x1[0] - x2[0];
  const double dt = x1[1] - x2[1];
  return hyper.signal_variance *
         std::exp(-0.5 * (dre * dre / (hyper.lengthscale_re * hyper.lengthscale_re) +
                          dt * dt / (hyper.lengthscale_t * hyper.lengthscale_t)));
}

GPLogMarginal gp_log_marginal(const Tensor& x, const Tensor& y, const GPHyper& hyper,
                              double jitter) {
  hyper.validate();
  check_inputs(x, y, "gp log marginal");
  const std::size_t n = x.dim(0);
  Factorization f = factorize(x, y, hyper, jitter);

  // d(lml)/dtheta = 1/2 tr((alpha alpha^T - K^-1) dK/dtheta), taken per entry
  // so the squared distances never need to be stored.
  Tensor kinv = cholesky_solve(f.chol, Tensor::identity(n));
  Tensor kf = kernel_matrix(x, hyper);
  const double inv_re2 = 1.0 / (hyper.lengthscale_re * hyper.lengthscale_re);
  const double inv_t2 = 1.0 / (hyper.lengthscale_t * hyper.lengthscale_t);

  GPLogMarginal out;
  out.value = f.lml;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double m = f.alpha[i] * f.alpha[j] - kinv.at(i, j);
      const double dre = x.at(i, 0) - x.at(j, 0);
      const double dt = x.at(i, 1) - x.at(j, 1);
      const double kv = kf.at(i, j);
      out.grad_log[0] += 0.5 * m * kv;
      out.grad_log[1] += 0.5 * m * kv * dre * dre * inv_re2;
      out.grad_log[2] += 0.5 * m * kv * dt * dt * inv_t2;
      if (i == j) out.grad_log[3] += 0.5 * m * hyper.noise_variance;
    }
  }
  return out;
}

GPRegressor GPRegressor::build(const Tensor& x, const Tensor& y, const GPHyper& hyper) {
  hyper.validate();
  check_inputs(x, y, "gp build");
  auto [f, jitter] = factorize_ladder(x, y, hyper);
  GPRegressor gp;
  gp.x = x;
  gp.y = y;
  gp.hyper = hyper;
  gp.chol = std::move(f.chol);
  gp.alpha = std::move(f.alpha);
  gp.jitter = jitter;
  gp.log_marginal = f.lml;
  return gp;
}

GPPrediction GPRegressor::predict(const Tensor& xstar) const {
  if (xstar.size() != 2) {
    throw ShapeError("gp predict input must be a 2-vector, got " + shape_to_string(xstar.dims()));
  }
  const std::size_t n = x.dim(0);
  const double inv_re2 = 1.0 / (hyper.lengthscale_re * hyper.lengthscale_re);
  const double inv_t2 = 1.0 / (hyper.lengthscale_t * hyper.lengthscale_t);
  Tensor kstar({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double dre = x.at(i, 0) - xstar[0];
    const double dt = x.at(i, 1) - xstar[1];
    kstar[i] =
        hyper.signal_variance * std::exp(-0.5 * (dre * dre * inv_re2 + dt * dt * inv_t2));
  }
  GPPrediction p;
  for (std::size_t i = 0; i < n; ++i) p.mean += kstar[i] * alpha[i];
  Tensor v = lower_solve(chol, kstar);
  double var = hyper.signal_variance;
  for (std::size_t i = 0; i < n; ++i) var -= v[i] * v[i];
  if (var < 0.0) {
    p.clamped = true;
    var = 0.0;
  }
  p.variance = var;
  return p;
}

GPRegressor fit_gp(const Tensor& x, const Tensor& y, const GPConfig& config) {
  config.validate();
  check_inputs(x, y, "gp fit");
  const std::size_t n = x.dim(0);
  if (n < 2) throw ContractError("gp fit needs at least 2 training rows, got " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (x.at(i, 0) == x.at(j, 0) && x.at(i, 1) == x.at(j, 1) &&
          std::abs(y[i] - y[j]) > 1e-12) {
        throw ContractError("gp fit: duplicate input rows " + std::to_string(i) + " and " +
                            std::to_string(j) + " with conflicting targets");
      }
    }
  }

  double mean_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_y += y[i];
  mean_y /= static_cast<double>(n);
  double var_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) var_y += (y[i] - mean_y) * (y[i] - mean_y);
  var_y /= static_cast<double>(n);

  bool have_best = false;
  Tensor best_log({4});
  double best_lml = 0.0;
  std::string failures;

  for (std::size_t s = 0; s < config.starts; ++s) {
    Tensor lh({4});
    if (s == 0) {
      lh[0] = std::log(std::clamp(var_y, kMinSignalVariance, kMaxSignalVariance));
      lh[1] = std::log(0.3);
      lh[2] = std::log(0.3);
      lh[3] = std::log(std::clamp(1e-4 * std::max(var_y, kMinSignalVariance), kMinNoiseVariance,
                                  kMaxNoiseVariance));
    } else {
      // Random restarts sample an interior box, narrower than the hard bounds.
      Rng rng = make_rng(config.seed, s);
      lh[0] = uniform(rng, std::log(1e-4), std::log(1e2));
      lh[1] = uniform(rng, std::log(5e-3), std::log(5.0));
      lh[2] = uniform(rng, std::log(5e-3), std::log(5.0));
      lh[3] = uniform(rng, std::log(1e-8), std::log(1e-1));
    }
    clamp_log_hypers(lh);

    Tensor grad({4});
    Adam opt({&lh}, {.learning_rate = config.learning_rate});
    bool start_ok = false;
    Tensor start_best({4});
    double start_lml = 0.0;
    try {
      for (std::size_t it = 0; it < config.iterations; ++it) {
        const GPHyper h = hyper_from_log(lh);
        auto [f, jitter] = factorize_ladder(x, y, h);
        GPLogMarginal lm = gp_log_marginal(x, y, h, jitter);
        if (!std::isfinite(lm.value)) {
          throw TrainingDivergedError("non-finite log marginal likelihood");
        }
        if (!start_ok || lm.value > start_lml) {
          start_ok = true;
          start_lml = lm.value;
          start_best = lh;
        }
        for (std::size_t p = 0; p < 4; ++p) grad[p] = -lm.grad_log[p];
        opt.step({&grad});
        clamp_log_hypers(lh);
      }
    } catch (const Error& e) {
      if (!failures.empty()) failures += "; ";
      failures += "start " + std::to_string(s) + ": " + e.what();
    }
    if (start_ok && (!have_best || start_lml > best_lml)) {
      have_best = true;
      best_lml = start_lml;
      best_log = start_best;
    }
  }

  if (!have_best) {
    throw TrainingDivergedError("gp fit: all " + std::to_string(config.starts) +
                                " starts failed: " + failures);
  }
  return GPRegressor::build(x, y, hyper_from_log(best_log));
}

std::pair<double, double> GPBundle::normalize_input(double re, long t) const {
  const double re_span = re_max - re_min;
  const double t_span = static_cast<double>(t_max - t_min);
  const double nre = re_span > 1e-12 ? (re - re_min) / re_span : 0.0;
  const double nt = t_span > 0.0 ? static_cast<double>(t - t_min) / t_span : 0.0;
  return {nre, nt};
}

BundlePrediction GPBundle::predict(double re, long t) const {
  if (t < t_min || t > t_max) {
    throw ContractError("gp bundle: time index " + std::to_string(t) + " outside trained range [" +
                        std::to_string(t_min) + ", " + std::to_string(t_max) + "]");
  }
  const auto [nre, nt] = normalize_input(re, t);
  Tensor xstar({2});
  xstar[0] = nre;
  xstar[1] = nt;

  BundlePrediction out;
  out.mean = Tensor({code_dim});
  out.variance = Tensor({code_dim});
  out.extrapolated = re < re_min || re > re_max;
  const std::size_t nt_steps = n_timesteps();
  for (std::size_t d = 0; d < code_dim; ++d) {
    const std::size_t idx = config.time_as_input
                                ? d
                                : d * nt_steps + static_cast<std::size_t>(t - t_min);
    const GPPrediction p = regressors[idx].predict(xstar);
    out.mean[d] = p.mean;
    out.variance[d] = p.variance;
  }
  return out;
}

GPBundle fit_gp_bundle(const LatentTable& table, const GPConfig& config) {
  config.validate();
  const std::size_t rows = table.rows();
  if (rows < 2) throw ContractError("gp bundle needs at least 2 latent rows");
  if (table.code_dim == 0) throw ContractError("gp bundle needs a positive code dimension");

  GPBundle b;
  b.code_dim = table.code_dim;
  b.config = config;
  b.re_min = *std::min_element(table.re.begin(), table.re.end());
  b.re_max = *std::max_element(table.re.begin(), table.re.end());
  b.t_min = *std::min_element(table.t.begin(), table.t.end());
  b.t_max = *std::max_element(table.t.begin(), table.t.end());

  Tensor x({rows, 2});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto [nre, nt] = b.normalize_input(table.re[r], table.t[r]);
    x.at(r, 0) = nre;
    x.at(r, 1) = nt;
  }

  if (config.time_as_input) {
    b.regressors.reserve(table.code_dim);
    for (std::size_t d = 0; d < table.code_dim; ++d) {
      Tensor y({rows});
      for (std::size_t r = 0; r < rows; ++r) y[r] = table.z.at(r, d);
      b.regressors.push_back(fit_gp(x, y, config));
    }
    return b;
  }

  // One regressor per timestep: rows restricted to that step, the time column
  // constant so only the condition varies.
  const std::size_t nt_steps = b.n_timesteps();
  std::vector<std::vector<std::size_t>> step_rows(nt_steps);
  for (std::size_t r = 0; r < rows; ++r) {
    step_rows[static_cast<std::size_t>(table.t[r] - b.t_min)].push_back(r);
  }
  for (std::size_t i = 0; i < nt_steps; ++i) {
    if (step_rows[i].size() < 2) {
      throw ContractError("gp bundle: timestep " + std::to_string(b.t_min + static_cast<long>(i)) +
                          " has fewer than 2 training rows");
    }
  }
  b.regressors.reserve(table.code_dim * nt_steps);
  for (std::size_t d = 0; d < table.code_dim; ++d) {
    for (std::size_t i = 0; i < nt_steps; ++i) {
      const auto& rs = step_rows[i];
      Tensor xs({rs.size(), 2});
      Tensor ys({rs.size()});
      for (std::size_t k = 0; k < rs.size(); ++k) {
        xs.at(k, 0) = x.at(rs[k], 0);
        xs.at(k, 1) = x.at(rs[k], 1);
        ys[k] = table.z.at(rs[k], d);
      }
      b.regressors.push_back(fit_gp(xs, ys, config));
    }
  }
  return b;
}

void GPBundle::save(const std::filesystem::path& dir) const {
  nlohmann::json meta;
  meta["kind"] = "gp-bundle";
  meta["code_dim"] = code_dim;
  meta["re_min"] = re_min;
  meta["re_max"] = re_max;
  meta["t_min"] = t_min;
  meta["t_max"] = t_max;
  meta["config"] = {{"starts", config.starts},
                    {"iterations", config.iterations},
                    {"learning_rate", config.learning_rate},
                    {"seed", config.seed},
                    {"time_as_input", config.time_as_input}};
  meta["n_regressors"] = regressors.size();
  nlohmann::json jitters = nlohmann::json::array();
  nlohmann::json lmls = nlohmann::json::array();
  for (const GPRegressor& r : regressors) {
    jitters.push_back(r.jitter);
    lmls.push_back(r.log_marginal);
  }
  meta["jitter"] = jitters;
  meta["log_marginal"] = lmls;

  std::map<std::string, const Tensor*> params;
  std::vector<Tensor> hypers;
  hypers.reserve(regressors.size());
  for (std::size_t i = 0; i < regressors.size(); ++i) {
    const GPRegressor& r = regressors[i];
    Tensor h({4});
    h[0] = r.hyper.signal_variance;
    h[1] = r.hyper.lengthscale_re;
    h[2] = r.hyper.lengthscale_t;
    h[3] = r.hyper.noise_variance;
    hypers.push_back(std::move(h));
  }
  for (std::size_t i = 0; i < regressors.size(); ++i) {
    const std::string tag = std::to_string(i);
    params["x" + tag] = &regressors[i].x;
    params["y" + tag] = &regressors[i].y;
    params["hyper" + tag] = &hypers[i];
    params["chol" + tag] = &regressors[i].chol;
    params["alpha" + tag] = &regressors[i].alpha;
  }
  save_checkpoint(dir, params, meta);
}

GPBundle GPBundle::load(const std::filesystem::path& dir) {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors = load_checkpoint(dir, &meta);
  if (!meta.contains("kind") || meta["kind"] != "gp-bundle") {
    throw IoError("bad_manifest", "checkpoint at " + dir.string() + " is not a gp bundle");
  }
  GPBundle b;
  b.code_dim = meta.at("code_dim").get<std::size_t>();
  b.re_min = meta.at("re_min").get<double>();
  b.re_max = meta.at("re_max").get<double>();
  b.t_min = meta.at("t_min").get<long>();
  b.t_max = meta.at("t_max").get<long>();
  const nlohmann::json& jc = meta.at("config");
  b.config.starts = jc.at("starts").get<std::size_t>();
  b.config.iterations = jc.at("iterations").get<std::size_t>();
  b.config.learning_rate = jc.at("learning_rate").get<double>();
  b.config.seed = jc.at("seed").get<std::uint64_t>();
  b.config.time_as_input = jc.at("time_as_input").get<bool>();

  const std::size_t n = meta.at("n_regressors").get<std::size_t>();
  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw IoError("bad_manifest", "gp bundle checkpoint missing tensor " + name);
    }
    return std::move(it->second);
  };
  b.regressors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string tag = std::to_string(i);
    GPRegressor r;
    r.x = take("x" + tag);
    r.y = take("y" + tag);
    Tensor h = take("hyper" + tag);
    if (h.size() != 4) throw IoError("bad_manifest", "gp hyperparameter block must hold 4 values");
    r.hyper.signal_variance = h[0];
    r.hyper.lengthscale_re = h[1];
    r.hyper.lengthscale_t = h[2];
    r.hyper.noise_variance = h[3];
    r.hyper.validate();
    r.chol = take("chol" + tag);
    r.alpha = take("alpha" + tag);
    r.jitter = meta.at("jitter").at(i).get<double>();
    r.log_marginal = meta.at("log_marginal").at(i).get<double>();
    b.regressors.push_back(std::move(r));
  }
  return b;
}

}  // namespace pistm
