#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "core/field_sequence.hpp"
#include "core/tensor.hpp"

namespace pistm {

struct KaeConfig {
  std::size_t kappa = 16;
  std::size_t hidden = 256;
  std::size_t lambda = 8;  // in-loss prediction horizon, must stay below h
  double weight_id = 1.0;
  double weight_fwd = 1.0;
  double weight_bwd = 1.0;
  double weight_con = 0.2;
  std::size_t epochs = 150;
  std::size_t batch = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct KaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double forward = 0.0;
  double backward = 0.0;
  double consistency = 0.0;
};

// Latents are row vectors: z' = z * forward_op. Stored operators are the
// transposes of the column-convention matrices; all norms and powers agree.
struct KoopmanModel {
  std::size_t d_in = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kappa = 0;
  std::size_t hidden = 0;
  KaeConfig config;

  Tensor enc_w1{Shape{1, 1}}, enc_b1{Shape{1}};
  Tensor enc_w2{Shape{1, 1}}, enc_b2{Shape{1}};
  Tensor dec_w1{Shape{1, 1}}, dec_b1{Shape{1}};
  Tensor dec_w2{Shape{1, 1}}, dec_b2{Shape{1}};
  Tensor forward_op{Shape{1, 1}};
  Tensor backward_op{Shape{1, 1}};
  Tensor mean_field{Shape{1}};
  double scale = 1.0;

  KaeLoss initial_loss;
  KaeLoss final_loss;

  // Builds an untrained model with seeded weights and identity-plus-noise
  // operators; normalization stats start neutral.
  static KoopmanModel create(std::size_t height, std::size_t width, const KaeConfig& cfg);

  Tensor encode(const Tensor& field) const;          // [H,W] or [D_in] -> [kappa]
  Tensor decode(const Tensor& z) const;              // [kappa] -> [H,W]
  Tensor encode_batch(const Tensor& rows) const;     // [B,D_in] -> [B,kappa]
  Tensor decode_batch(const Tensor& z) const;        // [B,kappa] -> [B,D_in]
  Tensor evolve_forward(const Tensor& z, long steps) const;
  Tensor evolve_backward(const Tensor& z, long steps) const;

  // Snapshot at horizon s is decode(forward^(s+1) of encode(last_history)),
  // s = 0..k; time indices run T..T+k with T = 0.
  FlowFieldSequence forecast(const Tensor& last_history_field, long k) const;

  // Forward then backward should be the identity; returns the Frobenius
  // norm of the composite's deviation from I, divided by sqrt(kappa).
  double consistency_defect() const;

  void save(const std::filesystem::path& dir) const;
  static KoopmanModel load(const std::filesystem::path& dir);
};

// Loss over explicit window anchors: window a covers frames [a, a+lambda];
// the forward terms anchor frame a, the backward terms anchor frame a+lambda.
KaeLoss kae_loss(const KoopmanModel& model, const FlowFieldSequence& seq,
                 const std::vector<std::size_t>& window_starts);

// Mini-batch Adam on the full loss; history must hold at least lambda+1
// frames. Deterministic for a fixed config seed.
KoopmanModel train_kae(const FlowFieldSequence& history, const KaeConfig& cfg);

}  // namespace pistm
