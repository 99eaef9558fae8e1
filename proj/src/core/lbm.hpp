#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/field_sequence.hpp"
#include "core/tensor.hpp"

namespace pistm {

// D2Q9 lattice: direction 0 is rest; 1..4 axis-aligned; 5..8 diagonal.
inline constexpr int kQ = 9;
inline constexpr std::array<int, kQ> kCx = {0, 1, 0, -1, 0, 1, -1, -1, 1};
inline constexpr std::array<int, kQ> kCy = {0, 0, 1, 0, -1, 1, 1, -1, -1};
inline constexpr std::array<int, kQ> kOpposite = {0, 3, 4, 1, 2, 7, 8, 5, 6};
inline constexpr std::array<double, kQ> kWeight = {
    4.0 / 9.0,  1.0 / 9.0,  1.0 / 9.0,  1.0 / 9.0,  1.0 / 9.0,
    1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0};

// BGK equilibrium. Valid only in the low-Mach regime; |u| >= 0.3 is rejected.
std::array<double, kQ> equilibrium(double rho, double ux, double uy);

enum class BoundaryMode {
  // Inflow left, zero-gradient outflow right, periodic top/bottom, bounce-back disk.
  CylinderChannel,
  // Periodic left/right, bounce-back walls top/bottom, constant body force. No disk.
  ForcedChannel,
  // Periodic everywhere, no walls, no disk, no force.
  FullyPeriodic,
};

struct SimulationConfig {
  std::size_t height = 80;
  std::size_t width = 80;
  double reynolds = 100.0;
  // Disk center / radius in lattice units; non-positive values derive the
  // defaults center (W/4, H/2), radius H/16 (diameter H/8).
  double center_x = -1.0;
  double center_y = -1.0;
  double radius = -1.0;
  std::size_t warmup = 5000;
  std::size_t interval = 25;
  std::size_t snapshots = 191;
  long t_start = -181;
  std::uint64_t seed = 0;
  double u_in = 0.08;
  BoundaryMode mode = BoundaryMode::CylinderChannel;
  double force_x = 0.0;
  // Positive value bypasses the Re mapping; used by the non-disk modes.
  double tau_override = 0.0;

  double resolved_center_x() const;
  double resolved_center_y() const;
  double resolved_radius() const;
  // Re = u_in * diameter / nu with nu = (tau - 1/2)/3.
  double viscosity() const;
  double tau() const;
  void validate() const;
};

class Lattice {
 public:
  explicit Lattice(const SimulationConfig& cfg);

  // One collide + stream + boundary update. Raises the instability error if a
  // distribution goes non-finite or clearly negative, or |u| leaves the
  // low-Mach band.
  void step();

  long steps_done() const { return steps_; }
  double tau() const { return tau_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  bool is_solid(std::size_t y, std::size_t x) const { return solid_[y * w_ + x] != 0; }
  double total_mass() const;
  // Macroscopic fields of the current state; solid cells report zero velocity.
  Tensor velocity_magnitude() const;
  Tensor density() const;
  void macroscopic_at(std::size_t y, std::size_t x, double* rho, double* ux, double* uy) const;

  double f_at(int dir, std::size_t y, std::size_t x) const;
  void set_f(int dir, std::size_t y, std::size_t x, double v);

 private:
  void apply_boundaries(std::vector<double>& f);
  std::size_t idx(std::size_t y, std::size_t x) const { return y * w_ + x; }

  SimulationConfig cfg_;
  std::size_t h_, w_, cells_;
  double tau_;
  std::vector<double> f_;       // [9 * H * W], plane-major
  std::vector<double> post_;    // post-collision scratch
  std::vector<double> next_;    // streamed scratch
  std::vector<std::uint8_t> solid_;
  std::array<double, kQ> inflow_eq_{};
  long steps_ = 0;
};

// Runs warmup + snapshots*interval steps, recording |u| every interval steps
// after warmup. A seeded 1% sinusoidal transverse velocity perturbation breaks
// the initial symmetry.
FlowFieldSequence run_simulation(const SimulationConfig& cfg);

// Argmax of the magnitude spectrum of the mean-removed probe signal, in cycles
// per snapshot. A flat signal reports 0. Needs at least 64 frames.
double probe_dominant_frequency(const FlowFieldSequence& seq, std::size_t x, std::size_t y);

}  // namespace pistm
