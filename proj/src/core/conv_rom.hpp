#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "core/field_sequence.hpp"
#include "core/tensor.hpp"

namespace pistm {

struct RomConfig {
  std::size_t code_dim = 10;
  // Channel widths of the strided conv stack; the decoder mirrors them.
  // Every layer halves the spatial extents (4x4 kernels, stride 2, pad 1),
  // so the grid must divide by 2^depth with an even size at each step.
  std::vector<std::size_t> channels = {8, 16, 32, 64};
  std::size_t epochs = 200;
  std::size_t batch = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

// One labelled field per row: the operating condition it came from and the
// absolute timestep of the frame. Rows are unique per (re, t).
struct RomDataset {
  std::vector<double> re;
  std::vector<long> t;
  Tensor fields{Shape{1, 1, 1}};  // [rows, H, W]
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> validation_rows;

  std::size_t rows() const { return re.size(); }
  std::size_t height() const { return fields.dim(1); }
  std::size_t width() const { return fields.dim(2); }
  Tensor row_field(std::size_t r) const;
};

// Flattens per-condition forecast sequences into labelled rows and holds out
// the given fraction by seeded shuffle. Inputs must be forecast outputs, not
// raw simulation frames.
RomDataset build_rom_dataset(const std::vector<std::pair<double, FlowFieldSequence>>& forecasts,
                             double validation_fraction, std::uint64_t seed);

struct ConvAutoencoder {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t code_dim = 0;
  RomConfig config;

  std::vector<Tensor> enc_kernels;  // [C_out, C_in, 4, 4] per layer
  std::vector<Tensor> enc_biases;   // [C_out]
  Tensor enc_w{Shape{1, 1}};        // [flat, code_dim]
  Tensor enc_b{Shape{1}};
  Tensor dec_w{Shape{1, 1}};        // [code_dim, flat]
  Tensor dec_b{Shape{1}};
  std::vector<Tensor> dec_kernels;  // [C_in, C_out, 4, 4], applied transposed
  std::vector<Tensor> dec_biases;   // [C_out]

  Tensor mean_field{Shape{1}};
  double scale = 1.0;

  double initial_train_loss = 0.0;  // normalized-space mean square
  double final_train_loss = 0.0;
  double train_error = 0.0;  // mean relative reconstruction error per split
  double validation_error = 0.0;

  static ConvAutoencoder create(std::size_t height, std::size_t width, const RomConfig& cfg);

  std::size_t depth() const { return enc_kernels.size(); }
  std::size_t code_height() const { return height >> depth(); }
  std::size_t code_width() const { return width >> depth(); }

  Tensor encode(const Tensor& field) const;        // [H,W] -> [code_dim]
  Tensor decode(const Tensor& z) const;            // [code_dim] -> [H,W]
  Tensor encode_batch(const Tensor& rows) const;   // [B,H*W] -> [B,code_dim]
  Tensor decode_batch(const Tensor& codes) const;  // [B,code_dim] -> [B,H*W]

  void save(const std::filesystem::path& dir) const;
  static ConvAutoencoder load(const std::filesystem::path& dir);
};

// Mini-batch Adam on mean-square reconstruction over the training rows;
// records train/validation relative errors. Needs rows from at least two
// distinct conditions.
ConvAutoencoder train_rom(const RomDataset& dataset, const RomConfig& cfg);

// Latent codes for every condition and timestep, one row per (re, t).
struct LatentTable {
  std::size_t code_dim = 0;
  std::vector<double> re;
  std::vector<long> t;
  Tensor z{Shape{1, 1}};  // [rows, code_dim]

  std::size_t rows() const { return re.size(); }
};

LatentTable extract_latent_table(
    const ConvAutoencoder& model,
    const std::vector<std::pair<double, FlowFieldSequence>>& forecasts);

// CSV with header re,t,z0,...,z{code_dim-1}; 17 significant digits so the
// table round-trips bit-exactly.
void save_latent_table(const LatentTable& table, const std::filesystem::path& path);
LatentTable load_latent_table(const std::filesystem::path& path);

}  // namespace pistm
