#include "core/lbm.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace pistm {

namespace {

constexpr double kMaxSpeedSq = 0.09;  // |u| < 0.3 low-Mach band
// A mildly negative distribution shows up transiently near sharp obstacles at
// low tau while the run stays perfectly usable; only a clear undershoot is
// treated as blowup. Non-finite values are always fatal.
constexpr double kMinDistribution = -0.02;

}  // namespace

std::array<double, kQ> equilibrium(double rho, double ux, double uy) {
  const double usq = ux * ux + uy * uy;
  if (!(usq < kMaxSpeedSq)) {
    throw LowMachError("equilibrium requested at |u| = " + std::to_string(std::sqrt(usq)) +
                       ", outside the low-Mach band |u| < 0.3");
  }
  std::array<double, kQ> f;
  for (int i = 0; i < kQ; ++i) {
    const double cu = kCx[i] * ux + kCy[i] * uy;
    f[i] = kWeight[i] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq);
  }
  return f;
}

double SimulationConfig::resolved_center_x() const {
  return center_x > 0.0 ? center_x : static_cast<double>(width) / 4.0;
}

double SimulationConfig::resolved_center_y() const {
  return center_y > 0.0 ? center_y : static_cast<double>(height) / 2.0;
}

double SimulationConfig::resolved_radius() const {
  return radius > 0.0 ? radius : static_cast<double>(height) / 16.0;
}

double SimulationConfig::viscosity() const {
  if (tau_override > 0.0) return (tau_override - 0.5) / 3.0;
  const double diameter = 2.0 * resolved_radius();
  return u_in * diameter / reynolds;
}

double SimulationConfig::tau() const {
  return tau_override > 0.0 ? tau_override : 3.0 * viscosity() + 0.5;
}

void SimulationConfig::validate() const {
  if (height < 8 || width < 8) {
    throw ContractError("grid too small: " + std::to_string(height) + "x" +
                        std::to_string(width));
  }
  if (!(reynolds > 0.0) || reynolds > 1000.0) {
    throw ContractError("Reynolds number " + std::to_string(reynolds) +
                        " outside (0, 1000]");
  }
  if (snapshots < 1) throw ContractError("snapshot count must be at least 1");
  if (interval < 1) throw ContractError("sampling interval must be at least 1");
  if (!(std::abs(u_in) < 0.3)) {
    throw LowMachError("inflow speed " + std::to_string(u_in) +
                       " outside the low-Mach band |u| < 0.3");
  }
  const double t = tau();
  if (!(t > 0.5) || t > 2.0) {
    throw ContractError("relaxation time " + std::to_string(t) +
                        " outside (0.5, 2.0]; adjust Re, grid, or inflow");
  }
  if (mode == BoundaryMode::CylinderChannel) {
    const double cx = resolved_center_x();
    const double r = resolved_radius();
    if (!(r >= 1.0)) throw ContractError("disk radius must be at least 1 lattice unit");
    if (cx - r <= 1.0) {
      throw ContractError("disk touches the inflow boundary (center_x - radius <= 1)");
    }
    if (cx + r >= static_cast<double>(width) - 1.0) {
      throw ContractError("disk touches the outflow boundary");
    }
  }
}

Lattice::Lattice(const SimulationConfig& cfg)
    : cfg_(cfg), h_(cfg.height), w_(cfg.width), cells_(cfg.height * cfg.width), tau_(0.0) {
  cfg_.validate();
  tau_ = cfg_.tau();
  f_.assign(kQ * cells_, 0.0);
  post_.assign(kQ * cells_, 0.0);
  next_.assign(kQ * cells_, 0.0);
  solid_.assign(cells_, 0);

  if (cfg_.mode == BoundaryMode::CylinderChannel) {
    const double cx = cfg_.resolved_center_x();
    const double cy = cfg_.resolved_center_y();
    const double r = cfg_.resolved_radius();
    for (std::size_t y = 0; y < h_; ++y) {
      for (std::size_t x = 0; x < w_; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        if (dx * dx + dy * dy <= r * r) solid_[idx(y, x)] = 1;
      }
    }
  } else if (cfg_.mode == BoundaryMode::ForcedChannel) {
    for (std::size_t x = 0; x < w_; ++x) {
      solid_[idx(0, x)] = 1;
      solid_[idx(h_ - 1, x)] = 1;
    }
  }

  inflow_eq_ = equilibrium(1.0, cfg_.u_in, 0.0);

  // Seeded 1% transverse perturbation on the uniform inflow; deterministic
  // symmetry breaking for vortex shedding.
  Rng rng = make_rng(cfg_.seed);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const std::array<double, kQ> rest = equilibrium(1.0, 0.0, 0.0);
  for (std::size_t y = 0; y < h_; ++y) {
    for (std::size_t x = 0; x < w_; ++x) {
      const std::size_t c = idx(y, x);
      std::array<double, kQ> f0;
      if (solid_[c] || cfg_.mode == BoundaryMode::ForcedChannel) {
        f0 = rest;
      } else {
        const double ux = cfg_.u_in;
        const double uy =
            0.01 * cfg_.u_in *
            std::sin(2.0 * std::numbers::pi * static_cast<double>(x) /
                         static_cast<double>(w_) +
                     phase);
        f0 = equilibrium(1.0, ux, uy);
      }
      for (int i = 0; i < kQ; ++i) f_[i * cells_ + c] = f0[i];
    }
  }
}

void Lattice::step() {
  const long this_step = steps_ + 1;
  const double omega = 1.0 / tau_;
  const bool forced = cfg_.mode == BoundaryMode::ForcedChannel;
  const double fx = forced ? cfg_.force_x : 0.0;
  const double guo = 1.0 - 0.5 * omega;

  double max_usq = 0.0;
  double min_f = 0.0;
  bool finite = true;

  // Collide. Macroscopic moments, stability accounting, and BGK relaxation in
  // one sweep; solid cells are skipped and their distributions never read.
  for (std::size_t c = 0; c < cells_; ++c) {
    if (solid_[c]) continue;
    double rho = 0.0, mx = 0.0, my = 0.0;
    for (int i = 0; i < kQ; ++i) {
      const double fi = f_[i * cells_ + c];
      rho += fi;
      mx += fi * kCx[i];
      my += fi * kCy[i];
      if (fi < min_f) min_f = fi;
    }
    if (!std::isfinite(rho)) finite = false;
    const double inv_rho = 1.0 / rho;
    const double ux = (mx + 0.5 * fx) * inv_rho;
    const double uy = my * inv_rho;
    const double usq = ux * ux + uy * uy;
    if (usq > max_usq) max_usq = usq;

    for (int i = 0; i < kQ; ++i) {
      const double cu = kCx[i] * ux + kCy[i] * uy;
      const double feq =
          kWeight[i] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq);
      double v = f_[i * cells_ + c] - omega * (f_[i * cells_ + c] - feq);
      if (forced) {
        v += guo * kWeight[i] * (3.0 * (kCx[i] - ux) + 9.0 * cu * kCx[i]) * fx;
      }
      post_[i * cells_ + c] = v;
    }
  }

  if (!finite || min_f < kMinDistribution || !(max_usq < kMaxSpeedSq)) {
    throw InstabilityError(
        this_step, "lattice unstable at step " + std::to_string(this_step) +
                       " (max |u| = " + std::to_string(std::sqrt(max_usq)) +
                       ", min f = " + std::to_string(min_f) +
                       (finite ? "" : ", non-finite values") + ")");
  }

  // Stream. Gather formulation: each fluid cell pulls from its upwind
  // neighbor; a solid upwind cell reflects the opposite post-collision
  // distribution of the cell itself (half-way bounce-back).
  const bool wrap_x = cfg_.mode != BoundaryMode::CylinderChannel;
  for (int i = 0; i < kQ; ++i) {
    const int cx = kCx[i];
    const int cy = kCy[i];
    const double* src_plane = post_.data() + static_cast<std::size_t>(i) * cells_;
    const double* opp_plane =
        post_.data() + static_cast<std::size_t>(kOpposite[i]) * cells_;
    double* dst_plane = next_.data() + static_cast<std::size_t>(i) * cells_;
    for (std::size_t y = 0; y < h_; ++y) {
      const std::size_t sy = static_cast<std::size_t>(
          (static_cast<long>(y) - cy + static_cast<long>(h_)) % static_cast<long>(h_));
      for (std::size_t x = 0; x < w_; ++x) {
        const std::size_t c = y * w_ + x;
        if (solid_[c]) {
          dst_plane[c] = src_plane[c];
          continue;
        }
        long sx = static_cast<long>(x) - cx;
        if (wrap_x) {
          sx = (sx + static_cast<long>(w_)) % static_cast<long>(w_);
        } else if (sx < 0 || sx >= static_cast<long>(w_)) {
          // Overwritten by the inflow/outflow update below.
          dst_plane[c] = src_plane[c];
          continue;
        }
        const std::size_t s = sy * w_ + static_cast<std::size_t>(sx);
        dst_plane[c] = solid_[s] ? opp_plane[c] : src_plane[s];
      }
    }
  }

  apply_boundaries(next_);
  f_.swap(next_);
  ++steps_;
}

void Lattice::apply_boundaries(std::vector<double>& f) {
  if (cfg_.mode != BoundaryMode::CylinderChannel) return;
  for (std::size_t y = 0; y < h_; ++y) {
    const std::size_t cin = idx(y, 0);
    const std::size_t cout = idx(y, w_ - 1);
    const std::size_t cprev = idx(y, w_ - 2);
    for (int i = 0; i < kQ; ++i) {
      f[i * cells_ + cin] = inflow_eq_[i];
      f[i * cells_ + cout] = f[i * cells_ + cprev];
    }
  }
}

double Lattice::total_mass() const {
  double m = 0.0;
  for (std::size_t c = 0; c < cells_; ++c) {
    if (solid_[c]) continue;
    for (int i = 0; i < kQ; ++i) m += f_[i * cells_ + c];
  }
  return m;
}

void Lattice::macroscopic_at(std::size_t y, std::size_t x, double* rho, double* ux,
                             double* uy) const {
  const std::size_t c = idx(y, x);
  double r = 0.0, mx = 0.0, my = 0.0;
  for (int i = 0; i < kQ; ++i) {
    const double fi = f_[i * cells_ + c];
    r += fi;
    mx += fi * kCx[i];
    my += fi * kCy[i];
  }
  const double fx = cfg_.mode == BoundaryMode::ForcedChannel ? cfg_.force_x : 0.0;
  if (rho) *rho = r;
  if (ux) *ux = (mx + 0.5 * fx) / r;
  if (uy) *uy = my / r;
}

Tensor Lattice::velocity_magnitude() const {
  Tensor out({h_, w_});
  for (std::size_t y = 0; y < h_; ++y) {
    for (std::size_t x = 0; x < w_; ++x) {
      if (solid_[idx(y, x)]) {
        out.at(y, x) = 0.0;
        continue;
      }
      double rho, ux, uy;
      macroscopic_at(y, x, &rho, &ux, &uy);
      out.at(y, x) = std::sqrt(ux * ux + uy * uy);
    }
  }
  return out;
}

Tensor Lattice::density() const {
  Tensor out({h_, w_});
  for (std::size_t y = 0; y < h_; ++y) {
    for (std::size_t x = 0; x < w_; ++x) {
      double rho;
      macroscopic_at(y, x, &rho, nullptr, nullptr);
      out.at(y, x) = solid_[idx(y, x)] ? 1.0 : rho;
    }
  }
  return out;
}

double Lattice::f_at(int dir, std::size_t y, std::size_t x) const {
  if (dir < 0 || dir >= kQ || y >= h_ || x >= w_) {
    throw ContractError("lattice access out of range");
  }
  return f_[static_cast<std::size_t>(dir) * cells_ + idx(y, x)];
}

void Lattice::set_f(int dir, std::size_t y, std::size_t x, double v) {
  if (dir < 0 || dir >= kQ || y >= h_ || x >= w_) {
    throw ContractError("lattice access out of range");
  }
  f_[static_cast<std::size_t>(dir) * cells_ + idx(y, x)] = v;
}

FlowFieldSequence run_simulation(const SimulationConfig& cfg) {
  cfg.validate();
  Lattice lat(cfg);
  for (std::size_t s = 0; s < cfg.warmup; ++s) lat.step();

  FlowFieldSequence seq;
  seq.fields = Tensor({cfg.snapshots, cfg.height, cfg.width});
  seq.t_start = cfg.t_start;
  seq.source = FieldSource::Simulation;
  const std::size_t hw = cfg.height * cfg.width;
  for (std::size_t n = 0; n < cfg.snapshots; ++n) {
    for (std::size_t s = 0; s < cfg.interval; ++s) lat.step();
    Tensor mag = lat.velocity_magnitude();
    double* dst = seq.fields.data() + n * hw;
    for (std::size_t j = 0; j < hw; ++j) dst[j] = mag[j];
  }
  return seq;
}

double probe_dominant_frequency(const FlowFieldSequence& seq, std::size_t x,
                                std::size_t y) {
  const std::size_t n = seq.frames();
  if (n < 64) {
    throw ContractError("probe needs at least 64 frames, got " + std::to_string(n));
  }
  if (y >= seq.height() || x >= seq.width()) {
    throw ContractError("probe point outside the grid");
  }
  const std::size_t hw = seq.height() * seq.width();
  std::vector<double> s(n);
  double mean = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    s[t] = seq.fields[t * hw + y * seq.width() + x];
    mean += s[t];
  }
  mean /= static_cast<double>(n);
  double scale = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    s[t] -= mean;
    scale = std::max(scale, std::abs(s[t]));
  }

  double best_mag = 0.0;
  std::size_t best_k = 0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) *
                         static_cast<double>(t) / static_cast<double>(n);
      re += s[t] * std::cos(ang);
      im += s[t] * std::sin(ang);
    }
    const double mag = std::sqrt(re * re + im * im);
    if (mag > best_mag) {
      best_mag = mag;
      best_k = k;
    }
  }
  if (best_mag <= 1e-12 * std::max(1.0, scale) * static_cast<double>(n)) return 0.0;
  return static_cast<double>(best_k) / static_cast<double>(n);
}

}  // namespace pistm
