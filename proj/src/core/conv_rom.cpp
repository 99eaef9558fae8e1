#include "core/conv_rom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "core/adam.hpp"
#include "core/error.hpp"
#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor_io.hpp"

namespace pistm {

namespace {

constexpr std::size_t kKernel = 4;
constexpr std::size_t kStride = 2;
constexpr std::size_t kPad = 1;

void add_channel_bias(Tensor& x, const Tensor& b) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double* p = x.data() + (i * c + j) * hw;
      for (std::size_t q = 0; q < hw; ++q) p[q] += b[j];
    }
}

void tanh_inplace(Tensor& x) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::tanh(x[i]);
}

struct RomGraph {
  Graph g;
  std::vector<NodeId> params;
  NodeId input;
  NodeId loss;
};

RomGraph build_rom_graph(const ConvAutoencoder& m, std::size_t batch) {
  RomGraph rg;
  Graph& g = rg.g;
  const std::size_t depth = m.depth();

  std::vector<NodeId> ek(depth), eb(depth), dk(depth), db(depth);
  for (std::size_t i = 0; i < depth; ++i) {
    ek[i] = g.add_param(m.enc_kernels[i]);
    eb[i] = g.add_param(m.enc_biases[i]);
    dk[i] = g.add_param(m.dec_kernels[i]);
    db[i] = g.add_param(m.dec_biases[i]);
  }
  NodeId ew = g.add_param(m.enc_w), ebd = g.add_param(m.enc_b);
  NodeId dw = g.add_param(m.dec_w), dbd = g.add_param(m.dec_b);
  for (std::size_t i = 0; i < depth; ++i) rg.params.push_back(ek[i]);
  for (std::size_t i = 0; i < depth; ++i) rg.params.push_back(eb[i]);
  rg.params.push_back(ew);
  rg.params.push_back(ebd);
  rg.params.push_back(dw);
  rg.params.push_back(dbd);
  for (std::size_t i = 0; i < depth; ++i) rg.params.push_back(dk[i]);
  for (std::size_t i = 0; i < depth; ++i) rg.params.push_back(db[i]);

  rg.input = g.add_input(Tensor({batch, 1, m.height, m.width}));

  NodeId x = rg.input;
  for (std::size_t i = 0; i < depth; ++i) {
    x = g.tanh(g.add_bias(g.conv2d(x, ek[i], kStride, kPad), eb[i]));
  }
  const std::size_t flat = m.config.channels.back() * m.code_height() * m.code_width();
  x = g.reshape(x, {batch, flat});
  NodeId z = g.add_bias(g.matmul(x, ew), ebd);

  NodeId y = g.tanh(g.add_bias(g.matmul(z, dw), dbd));
  y = g.reshape(y, {batch, m.config.channels.back(), m.code_height(), m.code_width()});
  std::size_t oh = m.code_height(), ow = m.code_width();
  for (std::size_t i = 0; i < depth; ++i) {
    oh *= 2;
    ow *= 2;
    y = g.add_bias(g.conv2d_transpose(y, dk[i], kStride, kPad, oh, ow), db[i]);
    if (i + 1 < depth) y = g.tanh(y);
  }

  rg.loss = g.mean_square(g.sub(y, rg.input));
  g.validate(rg.loss);
  return rg;
}

// rows[i] <- normalized dataset row indices[i], shaped for the conv stack
Tensor normalized_batch(const RomDataset& ds, const std::vector<std::size_t>& indices,
                        const Tensor& mean_field, double scale) {
  const std::size_t d = ds.height() * ds.width();
  Tensor out({indices.size(), 1, ds.height(), ds.width()});
  const double inv = 1.0 / scale;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const double* src = ds.fields.data() + indices[r] * d;
    double* dst = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = (src[j] - mean_field[j]) * inv;
  }
  return out;
}

double split_loss(const ConvAutoencoder& m, const RomDataset& ds,
                  const std::vector<std::size_t>& rows) {
  RomGraph rg = build_rom_graph(m, rows.size());
  rg.g.set_input(rg.input, normalized_batch(ds, rows, m.mean_field, m.scale));
  rg.g.forward();
  return rg.g.value(rg.loss)[0];
}

// Mean relative reconstruction error in physical units over the given rows.
double split_error(const ConvAutoencoder& m, const RomDataset& ds,
                   const std::vector<std::size_t>& rows) {
  if (rows.empty()) return 0.0;
  const std::size_t d = ds.height() * ds.width();
  Tensor batch({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = ds.fields.data() + rows[r] * d;
    std::copy(src, src + d, batch.data() + r * d);
  }
  Tensor rec = m.decode_batch(m.encode_batch(batch));
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = rec.at(r, j) - batch.at(r, j);
      num += diff * diff;
      den += batch.at(r, j) * batch.at(r, j);
    }
    total += den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  }
  return total / static_cast<double>(rows.size());
}

}  // namespace

void RomConfig::validate() const {
  if (code_dim < 1) throw ContractError("latent width must be positive");
  if (channels.empty()) throw ContractError("conv stack needs at least one layer");
  for (std::size_t c : channels) {
    if (c < 1) throw ContractError("channel widths must be positive");
  }
  if (epochs < 1) throw ContractError("epoch count must be positive");
  if (batch < 1) throw ContractError("batch size must be positive");
  if (!(learning_rate > 0)) throw ContractError("learning rate must be positive");
}

Tensor RomDataset::row_field(std::size_t r) const {
  if (r >= rows()) throw ContractError("dataset row " + std::to_string(r) + " out of range");
  const std::size_t d = height() * width();
  Tensor out({height(), width()});
  std::copy(fields.data() + r * d, fields.data() + (r + 1) * d, out.data());
  return out;
}

RomDataset build_rom_dataset(const std::vector<std::pair<double, FlowFieldSequence>>& forecasts,
                             double validation_fraction, std::uint64_t seed) {
  if (forecasts.empty()) throw ContractError("dataset needs at least one condition");
  if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5)) {
    throw ContractError("validation fraction must lie in [0, 0.5]");
  }
  const std::size_t h = forecasts.front().second.height();
  const std::size_t w = forecasts.front().second.width();
  std::size_t n = 0;
  for (const auto& [re, seq] : forecasts) {
    if (seq.source != FieldSource::Koopman) {
      throw ContractError("dataset fields must be forecast outputs, got " +
                          to_string(seq.source) + " for condition " + std::to_string(re));
    }
    if (seq.height() != h || seq.width() != w) {
      throw ShapeError("conditions disagree on the grid: " + shape_to_string(seq.fields.dims()));
    }
    n += seq.frames();
  }

  RomDataset ds;
  ds.re.reserve(n);
  ds.t.reserve(n);
  ds.fields = Tensor({n, h, w});
  std::set<std::pair<double, long>> seen;
  const std::size_t d = h * w;
  std::size_t row = 0;
  for (const auto& [re, seq] : forecasts) {
    for (long t = seq.t_start; t <= seq.t_end(); ++t) {
      if (!seen.insert({re, t}).second) {
        throw ContractError("duplicate sample for condition " + std::to_string(re) +
                            " at timestep " + std::to_string(t));
      }
      ds.re.push_back(re);
      ds.t.push_back(t);
      const Tensor frame = seq.frame_at(t);
      std::copy(frame.data(), frame.data() + d, ds.fields.data() + row * d);
      ++row;
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_val =
      static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  ds.validation_rows.assign(order.begin(), order.begin() + n_val);
  ds.train_rows.assign(order.begin() + n_val, order.end());
  std::sort(ds.validation_rows.begin(), ds.validation_rows.end());
  std::sort(ds.train_rows.begin(), ds.train_rows.end());
  return ds;
}

ConvAutoencoder ConvAutoencoder::create(std::size_t height, std::size_t width,
                                        const RomConfig& cfg) {
  cfg.validate();
  const std::size_t depth = cfg.channels.size();
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < depth; ++i) {
    if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) {
      throw ShapeError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                       " does not halve cleanly through " + std::to_string(depth) +
                       " conv layers");
    }
    h /= 2;
    w /= 2;
  }
  if (cfg.code_dim >= height * width) {
    throw ContractError("latent width " + std::to_string(cfg.code_dim) +
                        " must be smaller than the field size " + std::to_string(height * width));
  }

  ConvAutoencoder m;
  m.height = height;
  m.width = width;
  m.code_dim = cfg.code_dim;
  m.config = cfg;

  Rng rng = make_rng(cfg.seed);
  const std::size_t flat = cfg.channels.back() * h * w;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t ci = i == 0 ? 1 : cfg.channels[i - 1];
    const std::size_t co = cfg.channels[i];
    const double s = 1.0 / std::sqrt(static_cast<double>(ci * kKernel * kKernel));
    m.enc_kernels.push_back(random_normal({co, ci, kKernel, kKernel}, rng, s));
    m.enc_biases.push_back(Tensor::zeros({co}));
  }
  m.enc_w = random_normal({flat, cfg.code_dim}, rng, 1.0 / std::sqrt(static_cast<double>(flat)));
  m.enc_b = Tensor::zeros({cfg.code_dim});
  m.dec_w = random_normal({cfg.code_dim, flat},
                          rng, 1.0 / std::sqrt(static_cast<double>(cfg.code_dim)));
  m.dec_b = Tensor::zeros({flat});
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t from = cfg.channels[depth - 1 - i];
    const std::size_t to = i + 1 == depth ? 1 : cfg.channels[depth - 2 - i];
    const double s = 1.0 / std::sqrt(static_cast<double>(from * kKernel * kKernel));
    m.dec_kernels.push_back(random_normal({from, to, kKernel, kKernel}, rng, s));
    m.dec_biases.push_back(Tensor::zeros({to}));
  }

  m.mean_field = Tensor::zeros({height * width});
  m.scale = 1.0;
  return m;
}

Tensor ConvAutoencoder::encode_batch(const Tensor& rows) const {
  const std::size_t d = height * width;
  if (rows.ndim() != 2 || rows.dim(1) != d) {
    throw ShapeError("encode expects [batch, " + std::to_string(d) + "], got " +
                     shape_to_string(rows.dims()));
  }
  const std::size_t b = rows.dim(0);
  Tensor x({b, 1, height, width});
  const double inv = 1.0 / scale;
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < d; ++j)
      x[r * d + j] = (rows.at(r, j) - mean_field[j]) * inv;

  for (std::size_t i = 0; i < depth(); ++i) {
    x = conv2d(x, enc_kernels[i], kStride, kPad);
    add_channel_bias(x, enc_biases[i]);
    tanh_inplace(x);
  }
  x = x.reshaped({b, config.channels.back() * code_height() * code_width()});
  Tensor z = matmul(x, enc_w);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < code_dim; ++j) z.at(r, j) += enc_b[j];
  return z;
}

Tensor ConvAutoencoder::decode_batch(const Tensor& codes) const {
  if (codes.ndim() != 2 || codes.dim(1) != code_dim) {
    throw ShapeError("decode expects [batch, " + std::to_string(code_dim) + "], got " +
                     shape_to_string(codes.dims()));
  }
  const std::size_t b = codes.dim(0);
  Tensor y = matmul(codes, dec_w);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < dec_b.size(); ++j) y.at(r, j) += dec_b[j];
  tanh_inplace(y);
  y = y.reshaped({b, config.channels.back(), code_height(), code_width()});
  std::size_t oh = code_height(), ow = code_width();
  for (std::size_t i = 0; i < depth(); ++i) {
    oh *= 2;
    ow *= 2;
    y = conv2d_adjoint(y, dec_kernels[i], kStride, kPad, oh, ow);
    add_channel_bias(y, dec_biases[i]);
    if (i + 1 < depth()) tanh_inplace(y);
  }
  const std::size_t d = height * width;
  Tensor out({b, d});
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = y[r * d + j] * scale + mean_field[j];
  return out;
}

Tensor ConvAutoencoder::encode(const Tensor& field) const {
  if (field.ndim() != 2 || field.dim(0) != height || field.dim(1) != width) {
    throw ShapeError("field shape " + shape_to_string(field.dims()) + " does not match " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  return encode_batch(field.reshaped({1, height * width})).reshaped({code_dim});
}

Tensor ConvAutoencoder::decode(const Tensor& z) const {
  if (z.ndim() != 1 || z.dim(0) != code_dim) {
    throw ShapeError("latent shape " + shape_to_string(z.dims()) + " does not match width " +
                     std::to_string(code_dim));
  }
  return decode_batch(z.reshaped({1, code_dim})).reshaped({height, width});
}

ConvAutoencoder train_rom(const RomDataset& dataset, const RomConfig& cfg) {
  cfg.validate();
  if (dataset.train_rows.empty()) throw ContractError("training split is empty");
  {
    std::set<double> conditions(dataset.re.begin(), dataset.re.end());
    if (conditions.size() < 2) {
      throw ContractError("training needs rows from at least two conditions, got " +
                          std::to_string(conditions.size()));
    }
  }
  dataset.fields.require_finite("training dataset");

  ConvAutoencoder model = ConvAutoencoder::create(dataset.height(), dataset.width(), cfg);

  const std::size_t d = dataset.height() * dataset.width();
  model.mean_field = Tensor::zeros({d});
  for (std::size_t r : dataset.train_rows) {
    const double* src = dataset.fields.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) model.mean_field[j] += src[j];
  }
  const double n_train = static_cast<double>(dataset.train_rows.size());
  for (std::size_t j = 0; j < d; ++j) model.mean_field[j] /= n_train;
  double ss = 0.0;
  for (std::size_t r : dataset.train_rows) {
    const double* src = dataset.fields.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = src[j] - model.mean_field[j];
      ss += diff * diff;
    }
  }
  const double rms = std::sqrt(ss / (n_train * static_cast<double>(d)));
  model.scale = rms > 1e-12 ? rms : 1.0;

  model.initial_train_loss = split_loss(model, dataset, dataset.train_rows);

  RomGraph rg = build_rom_graph(model, cfg.batch);
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  for (NodeId pid : rg.params) {
    params.push_back(&rg.g.param_value(pid));
    grads.push_back(&rg.g.grad(pid));
  }
  Adam opt(params, {.learning_rate = cfg.learning_rate});

  Rng shuffle_rng = make_rng(cfg.seed, 1);
  std::vector<std::size_t> order = dataset.train_rows;
  std::vector<std::size_t> batch_rows(cfg.batch);
  const std::size_t n_batches = (order.size() + cfg.batch - 1) / cfg.batch;
  const double lr_floor = 0.01 * cfg.learning_rate;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double phase = cfg.epochs > 1
                             ? static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1)
                             : 1.0;
    opt.config().learning_rate =
        lr_floor +
        0.5 * (cfg.learning_rate - lr_floor) * (1.0 + std::cos(phase * std::numbers::pi));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b = 0; b < n_batches; ++b) {
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        batch_rows[i] = order[(b * cfg.batch + i) % order.size()];
      }
      rg.g.set_input(rg.input, normalized_batch(dataset, batch_rows, model.mean_field,
                                                model.scale));
      rg.g.forward();
      if (!std::isfinite(rg.g.value(rg.loss)[0])) {
        throw TrainingDivergedError("loss became non-finite in epoch " + std::to_string(epoch));
      }
      rg.g.backward(rg.loss);
      opt.step(grads);
    }
  }

  std::size_t p = 0;
  const std::size_t depth = model.depth();
  for (std::size_t i = 0; i < depth; ++i) model.enc_kernels[i] = rg.g.param_value(rg.params[p++]);
  for (std::size_t i = 0; i < depth; ++i) model.enc_biases[i] = rg.g.param_value(rg.params[p++]);
  model.enc_w = rg.g.param_value(rg.params[p++]);
  model.enc_b = rg.g.param_value(rg.params[p++]);
  model.dec_w = rg.g.param_value(rg.params[p++]);
  model.dec_b = rg.g.param_value(rg.params[p++]);
  for (std::size_t i = 0; i < depth; ++i) model.dec_kernels[i] = rg.g.param_value(rg.params[p++]);
  for (std::size_t i = 0; i < depth; ++i) model.dec_biases[i] = rg.g.param_value(rg.params[p++]);

  model.final_train_loss = split_loss(model, dataset, dataset.train_rows);
  model.train_error = split_error(model, dataset, dataset.train_rows);
  model.validation_error = split_error(model, dataset, dataset.validation_rows);
  return model;
}

LatentTable extract_latent_table(
    const ConvAutoencoder& model,
    const std::vector<std::pair<double, FlowFieldSequence>>& forecasts) {
  if (forecasts.empty()) throw ContractError("latent table needs at least one condition");
  const std::size_t d = model.height * model.width;
  std::size_t n = 0;
  for (const auto& [re, seq] : forecasts) n += seq.frames();

  LatentTable table;
  table.code_dim = model.code_dim;
  table.re.reserve(n);
  table.t.reserve(n);
  Tensor batch({n, d});
  std::size_t row = 0;
  for (const auto& [re, seq] : forecasts) {
    if (seq.height() != model.height || seq.width() != model.width) {
      throw ShapeError("forecast grid " + shape_to_string(seq.fields.dims()) +
                       " does not match the model");
    }
    for (long t = seq.t_start; t <= seq.t_end(); ++t) {
      table.re.push_back(re);
      table.t.push_back(t);
      const Tensor frame = seq.frame_at(t);
      std::copy(frame.data(), frame.data() + d, batch.data() + row * d);
      ++row;
    }
  }
  table.z = model.encode_batch(batch);
  return table;
}

void save_latent_table(const LatentTable& table, const std::filesystem::path& path) {
  std::string out = "re,t";
  for (std::size_t j = 0; j < table.code_dim; ++j) out += ",z" + std::to_string(j);
  out += "\n";
  char buf[64];
  for (std::size_t r = 0; r < table.rows(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", table.re[r]);
    out += buf;
    out += ',';
    out += std::to_string(table.t[r]);
    for (std::size_t j = 0; j < table.code_dim; ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", table.z.at(r, j));
      out += buf;
    }
    out += '\n';
  }
  write_text_file(path, out);
}

LatentTable load_latent_table(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("bad_format", "latent table is empty");
  std::size_t code_dim = 0;
  {
    std::istringstream header(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(header, col, ',')) cols.push_back(col);
    if (cols.size() < 3 || cols[0] != "re" || cols[1] != "t") {
      throw IoError("bad_format", "latent table header mismatch: " + line);
    }
    code_dim = cols.size() - 2;
    for (std::size_t j = 0; j < code_dim; ++j) {
      if (cols[2 + j] != "z" + std::to_string(j)) {
        throw IoError("bad_format", "latent table header mismatch: " + line);
      }
    }
  }

  std::vector<double> re, z;
  std::vector<long> t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != code_dim + 2) {
      throw IoError("bad_format", "latent table row has " + std::to_string(cells.size()) +
                                      " columns, expected " + std::to_string(code_dim + 2));
    }
    try {
      re.push_back(std::stod(cells[0]));
      t.push_back(std::stol(cells[1]));
      for (std::size_t j = 0; j < code_dim; ++j) z.push_back(std::stod(cells[2 + j]));
    } catch (const std::exception&) {
      throw IoError("bad_format", "latent table cell is not numeric: " + line);
    }
  }

  LatentTable table;
  table.code_dim = code_dim;
  table.re = std::move(re);
  table.t = std::move(t);
  table.z = Tensor({table.re.size(), code_dim}, std::move(z));
  return table;
}

void ConvAutoencoder::save(const std::filesystem::path& dir) const {
  std::map<std::string, const Tensor*> params;
  for (std::size_t i = 0; i < depth(); ++i) {
    params["enc_kernel" + std::to_string(i)] = &enc_kernels[i];
    params["enc_bias" + std::to_string(i)] = &enc_biases[i];
    params["dec_kernel" + std::to_string(i)] = &dec_kernels[i];
    params["dec_bias" + std::to_string(i)] = &dec_biases[i];
  }
  params["enc_w"] = &enc_w;
  params["enc_b"] = &enc_b;
  params["dec_w"] = &dec_w;
  params["dec_b"] = &dec_b;
  params["mean_field"] = &mean_field;

  nlohmann::json meta;
  meta["kind"] = "conv-autoencoder";
  meta["height"] = height;
  meta["width"] = width;
  meta["code_dim"] = code_dim;
  meta["channels"] = config.channels;
  meta["epochs"] = config.epochs;
  meta["batch"] = config.batch;
  meta["learning_rate"] = config.learning_rate;
  meta["seed"] = config.seed;
  meta["scale"] = scale;
  meta["initial_train_loss"] = initial_train_loss;
  meta["final_train_loss"] = final_train_loss;
  meta["train_error"] = train_error;
  meta["validation_error"] = validation_error;
  save_checkpoint(dir, params, meta);
}

ConvAutoencoder ConvAutoencoder::load(const std::filesystem::path& dir) {
  nlohmann::json meta;
  auto params = load_checkpoint(dir, &meta);
  if (meta.value("kind", "") != "conv-autoencoder") {
    throw IoError("bad_manifest", "checkpoint at " + dir.string() + " is not a field compressor");
  }
  ConvAutoencoder m;
  m.height = meta.at("height").get<std::size_t>();
  m.width = meta.at("width").get<std::size_t>();
  m.code_dim = meta.at("code_dim").get<std::size_t>();
  m.config.code_dim = m.code_dim;
  m.config.channels = meta.at("channels").get<std::vector<std::size_t>>();
  m.config.epochs = meta.value("epochs", m.config.epochs);
  m.config.batch = meta.value("batch", m.config.batch);
  m.config.learning_rate = meta.value("learning_rate", m.config.learning_rate);
  m.config.seed = meta.value("seed", 0ULL);
  m.scale = meta.at("scale").get<double>();
  m.initial_train_loss = meta.value("initial_train_loss", 0.0);
  m.final_train_loss = meta.value("final_train_loss", 0.0);
  m.train_error = meta.value("train_error", 0.0);
  m.validation_error = meta.value("validation_error", 0.0);

  auto take = [&params](const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw IoError("bad_manifest", "checkpoint is missing parameter " + name);
    }
    return std::move(it->second);
  };
  const std::size_t depth = m.config.channels.size();
  for (std::size_t i = 0; i < depth; ++i) {
    m.enc_kernels.push_back(take("enc_kernel" + std::to_string(i)));
    m.enc_biases.push_back(take("enc_bias" + std::to_string(i)));
    m.dec_kernels.push_back(take("dec_kernel" + std::to_string(i)));
    m.dec_biases.push_back(take("dec_bias" + std::to_string(i)));
  }
  m.enc_w = take("enc_w");
  m.enc_b = take("enc_b");
  m.dec_w = take("dec_w");
  m.dec_b = take("dec_b");
  m.mean_field = take("mean_field");

  if (m.mean_field.size() != m.height * m.width) {
    throw ShapeError("loaded normalization stats do not match the grid");
  }
  return m;
}

}  // namespace pistm
