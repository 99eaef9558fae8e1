#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "core/conv_rom.hpp"
#include "core/tensor.hpp"

namespace pistm {

// Squared-exponential kernel hyperparameters with one lengthscale per input
// dimension. All four must be strictly positive.
struct GPHyper {
  double signal_variance = 1.0;
  double lengthscale_re = 0.3;
  double lengthscale_t = 0.3;
  double noise_variance = 1e-4;

  void validate() const;
};

// Box constraints for hyperparameter optimization, applied in log space.
inline constexpr double kMinSignalVariance = 1e-8;
inline constexpr double kMaxSignalVariance = 1e4;
inline constexpr double kMinLengthscale = 1e-3;
inline constexpr double kMaxLengthscale = 1e3;
inline constexpr double kMinNoiseVariance = 1e-10;
inline constexpr double kMaxNoiseVariance = 1e2;

struct GPConfig {
  std::size_t starts = 8;         // multi-start count; start 0 is the default init
  std::size_t iterations = 200;   // gradient-ascent steps per start
  double learning_rate = 0.1;     // Adam step size on log-hyperparameters
  std::uint64_t seed = 0;
  bool time_as_input = true;      // false: one regressor per timestep, conditions only

  void validate() const;
};

// k(x1, x2) = signal_variance * exp(-1/2 * sum_d (x1_d - x2_d)^2 / l_d^2)
// for 2-vectors (normalized condition, normalized time).
double gp_kernel(const Tensor& x1, const Tensor& x2, const GPHyper& hyper);

struct GPLogMarginal {
  double value = 0.0;
  // d(value)/d(log hyper), ordered signal_variance, lengthscale_re,
  // lengthscale_t, noise_variance.
  double grad_log[4] = {0.0, 0.0, 0.0, 0.0};
};

// Log marginal likelihood of y under the kernel with noise on the diagonal,
// plus its analytic gradient in log-hyperparameter space. jitter is an extra
// diagonal term that is held fixed (not differentiated).
GPLogMarginal gp_log_marginal(const Tensor& x, const Tensor& y, const GPHyper& hyper,
                              double jitter = 0.0);

struct GPPrediction {
  double mean = 0.0;
  double variance = 0.0;   // posterior variance of the latent function, >= 0
  bool clamped = false;    // variance was negative by round-off and clamped
};

// One scalar-output regressor over normalized (condition, time) inputs.
struct GPRegressor {
  Tensor x{Shape{1, 2}};   // [n, 2] training inputs
  Tensor y{Shape{1}};      // [n] training targets
  GPHyper hyper;
  Tensor chol{Shape{1, 1}};   // lower Cholesky factor of K + noise*I + jitter*I
  Tensor alpha{Shape{1}};     // (K + noise*I + jitter*I)^-1 y
  double jitter = 0.0;        // diagonal boost needed for the factorization
  double log_marginal = 0.0;  // at the cached hyperparameters

  // Factorizes at the given hyperparameters, walking the jitter ladder
  // 1e-10 .. 1e-6 if the plain matrix fails. No optimization.
  static GPRegressor build(const Tensor& x, const Tensor& y, const GPHyper& hyper);

  GPPrediction predict(const Tensor& xstar) const;
};

// Maximizes log marginal likelihood over seeded multi-starts of Adam ascent
// on log-hyperparameters. Throws TrainingDivergedError if every start fails.
GPRegressor fit_gp(const Tensor& x, const Tensor& y, const GPConfig& config);

struct BundlePrediction {
  Tensor mean{Shape{1}};       // [code_dim]
  Tensor variance{Shape{1}};   // [code_dim], each >= 0
  bool extrapolated = false;   // condition fell outside the training range
};

// Independent regressor per latent dimension over a shared input matrix.
// Inputs are normalized to [0,1] over the training ranges before fitting.
struct GPBundle {
  std::size_t code_dim = 0;
  double re_min = 0.0, re_max = 1.0;
  long t_min = 0, t_max = 1;
  GPConfig config;
  // time_as_input: code_dim entries. Otherwise code_dim * n_timesteps,
  // regressor for (dim d, step i) at index d * n_timesteps + i.
  std::vector<GPRegressor> regressors;

  std::size_t n_timesteps() const { return static_cast<std::size_t>(t_max - t_min) + 1; }
  std::pair<double, double> normalize_input(double re, long t) const;

  // t must lie inside [t_min, t_max]; a condition outside its training range
  // is still predicted but flagged.
  BundlePrediction predict(double re, long t) const;

  void save(const std::filesystem::path& dir) const;
  static GPBundle load(const std::filesystem::path& dir);
};

GPBundle fit_gp_bundle(const LatentTable& table, const GPConfig& config);

}  // namespace pistm
