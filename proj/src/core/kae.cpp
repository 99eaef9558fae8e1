#include "core/kae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "core/adam.hpp"
#include "core/error.hpp"
#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor_io.hpp"

namespace pistm {

namespace {

struct LossGraph {
  Graph g;
  NodeId enc_w1, enc_b1, enc_w2, enc_b2;
  NodeId dec_w1, dec_b1, dec_w2, dec_b2;
  NodeId fwd_op, bwd_op;
  NodeId anchor_first, anchor_last;
  std::vector<NodeId> fwd_targets, bwd_targets;
  NodeId loss_id, loss_fwd, loss_bwd, loss_con, loss_total;

  std::vector<NodeId> params() const {
    return {enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2, fwd_op, bwd_op};
  }
};

NodeId encode_nodes(LossGraph& lg, NodeId x) {
  Graph& g = lg.g;
  NodeId h = g.tanh(g.add_bias(g.matmul(x, lg.enc_w1), lg.enc_b1));
  return g.add_bias(g.matmul(h, lg.enc_w2), lg.enc_b2);
}

NodeId decode_nodes(LossGraph& lg, NodeId z) {
  Graph& g = lg.g;
  NodeId h = g.tanh(g.add_bias(g.matmul(z, lg.dec_w1), lg.dec_b1));
  return g.add_bias(g.matmul(h, lg.dec_w2), lg.dec_b2);
}

// Loss over a batch of (lambda+1)-frame windows, all in normalized space.
// Forward terms anchor the first frame of the window, backward terms the
// last, so every target stays inside the window.
LossGraph build_loss_graph(const KoopmanModel& m, std::size_t batch) {
  const std::size_t d = m.d_in;
  const std::size_t lambda = m.config.lambda;
  LossGraph lg;
  Graph& g = lg.g;

  lg.enc_w1 = g.add_param(m.enc_w1);
  lg.enc_b1 = g.add_param(m.enc_b1);
  lg.enc_w2 = g.add_param(m.enc_w2);
  lg.enc_b2 = g.add_param(m.enc_b2);
  lg.dec_w1 = g.add_param(m.dec_w1);
  lg.dec_b1 = g.add_param(m.dec_b1);
  lg.dec_w2 = g.add_param(m.dec_w2);
  lg.dec_b2 = g.add_param(m.dec_b2);
  lg.fwd_op = g.add_param(m.forward_op);
  lg.bwd_op = g.add_param(m.backward_op);

  lg.anchor_first = g.add_input(Tensor({batch, d}));
  lg.anchor_last = g.add_input(Tensor({batch, d}));
  for (std::size_t s = 0; s < lambda; ++s) {
    lg.fwd_targets.push_back(g.add_input(Tensor({batch, d})));
    lg.bwd_targets.push_back(g.add_input(Tensor({batch, d})));
  }

  NodeId z_first = encode_nodes(lg, lg.anchor_first);
  NodeId z_last = encode_nodes(lg, lg.anchor_last);

  lg.loss_id = g.mean_square(g.sub(decode_nodes(lg, z_first), lg.anchor_first));

  NodeId z = z_first;
  NodeId fwd_sum = -1;
  for (std::size_t s = 0; s < lambda; ++s) {
    z = g.matmul(z, lg.fwd_op);
    NodeId term = g.mean_square(g.sub(decode_nodes(lg, z), lg.fwd_targets[s]));
    fwd_sum = s == 0 ? term : g.add(fwd_sum, term);
  }
  lg.loss_fwd = g.scale(fwd_sum, 1.0 / static_cast<double>(lambda));

  z = z_last;
  NodeId bwd_sum = -1;
  for (std::size_t s = 0; s < lambda; ++s) {
    z = g.matmul(z, lg.bwd_op);
    NodeId term = g.mean_square(g.sub(decode_nodes(lg, z), lg.bwd_targets[s]));
    bwd_sum = s == 0 ? term : g.add(bwd_sum, term);
  }
  lg.loss_bwd = g.scale(bwd_sum, 1.0 / static_cast<double>(lambda));

  NodeId eye = g.add_input(Tensor::identity(m.kappa));
  NodeId defect = g.sub(g.matmul(lg.fwd_op, lg.bwd_op), eye);
  lg.loss_con = g.scale(g.mean_square(defect), static_cast<double>(m.kappa));

  const KaeConfig& c = m.config;
  NodeId total = g.scale(lg.loss_id, c.weight_id);
  total = g.add(total, g.scale(lg.loss_fwd, c.weight_fwd));
  total = g.add(total, g.scale(lg.loss_bwd, c.weight_bwd));
  total = g.add(total, g.scale(lg.loss_con, c.weight_con));
  lg.loss_total = total;
  g.validate(total);
  return lg;
}

// rows[i] <- normalized frame starts[i]+offset of seq
void fill_window_input(Graph& g, NodeId input, const FlowFieldSequence& seq,
                       const std::vector<std::size_t>& starts, std::size_t offset,
                       const Tensor& mean_field, double scale) {
  const std::size_t d = seq.height() * seq.width();
  Tensor rows({starts.size(), d});
  const double inv = 1.0 / scale;
  for (std::size_t r = 0; r < starts.size(); ++r) {
    const double* src = seq.fields.data() + (starts[r] + offset) * d;
    double* dst = rows.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = (src[j] - mean_field[j]) * inv;
  }
  g.set_input(input, rows);
}

void set_window_batch(LossGraph& lg, const FlowFieldSequence& seq,
                      const std::vector<std::size_t>& starts, const Tensor& mean_field,
                      double scale, std::size_t lambda) {
  fill_window_input(lg.g, lg.anchor_first, seq, starts, 0, mean_field, scale);
  fill_window_input(lg.g, lg.anchor_last, seq, starts, lambda, mean_field, scale);
  for (std::size_t s = 1; s <= lambda; ++s) {
    fill_window_input(lg.g, lg.fwd_targets[s - 1], seq, starts, s, mean_field, scale);
    fill_window_input(lg.g, lg.bwd_targets[s - 1], seq, starts, lambda - s, mean_field, scale);
  }
}

KaeLoss read_loss(const LossGraph& lg) {
  KaeLoss l;
  l.total = lg.g.value(lg.loss_total)[0];
  l.reconstruction = lg.g.value(lg.loss_id)[0];
  l.forward = lg.g.value(lg.loss_fwd)[0];
  l.backward = lg.g.value(lg.loss_bwd)[0];
  l.consistency = lg.g.value(lg.loss_con)[0];
  return l;
}

void check_window_starts(const FlowFieldSequence& seq, const std::vector<std::size_t>& starts,
                         std::size_t lambda) {
  if (starts.empty()) throw ContractError("loss needs at least one window");
  for (std::size_t a : starts) {
    if (a + lambda >= seq.frames()) {
      throw ContractError("window at " + std::to_string(a) + " exceeds the sequence (need " +
                          std::to_string(lambda + 1) + " frames)");
    }
  }
}

Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2) {
  Tensor h = matmul(x, w1);
  for (std::size_t r = 0; r < h.dim(0); ++r)
    for (std::size_t j = 0; j < h.dim(1); ++j)
      h.at(r, j) = std::tanh(h.at(r, j) + b1[j]);
  Tensor y = matmul(h, w2);
  for (std::size_t r = 0; r < y.dim(0); ++r)
    for (std::size_t j = 0; j < y.dim(1); ++j) y.at(r, j) += b2[j];
  return y;
}

}  // namespace

void KaeConfig::validate() const {
  if (kappa < 1 || hidden < 1) throw ContractError("latent and hidden widths must be positive");
  if (lambda < 1) throw ContractError("loss horizon must be at least 1");
  if (weight_id < 0 || weight_fwd < 0 || weight_bwd < 0 || weight_con < 0) {
    throw ContractError("loss weights must be non-negative");
  }
  if (epochs < 1) throw ContractError("epoch count must be positive");
  if (batch < 1) throw ContractError("batch size must be positive");
  if (!(learning_rate > 0)) throw ContractError("learning rate must be positive");
}

KoopmanModel KoopmanModel::create(std::size_t height, std::size_t width, const KaeConfig& cfg) {
  cfg.validate();
  KoopmanModel m;
  m.height = height;
  m.width = width;
  m.d_in = height * width;
  m.kappa = cfg.kappa;
  m.hidden = cfg.hidden;
  m.config = cfg;

  Rng rng = make_rng(cfg.seed);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(m.d_in));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  const double s3 = 1.0 / std::sqrt(static_cast<double>(cfg.kappa));
  m.enc_w1 = random_normal({m.d_in, cfg.hidden}, rng, s1);
  m.enc_b1 = Tensor::zeros({cfg.hidden});
  m.enc_w2 = random_normal({cfg.hidden, cfg.kappa}, rng, s2);
  m.enc_b2 = Tensor::zeros({cfg.kappa});
  m.dec_w1 = random_normal({cfg.kappa, cfg.hidden}, rng, s3);
  m.dec_b1 = Tensor::zeros({cfg.hidden});
  m.dec_w2 = random_normal({cfg.hidden, m.d_in}, rng, s2);
  m.dec_b2 = Tensor::zeros({m.d_in});

  m.forward_op = Tensor::identity(cfg.kappa);
  m.backward_op = Tensor::identity(cfg.kappa);
  Tensor noise_f = random_normal({cfg.kappa, cfg.kappa}, rng, 0.02);
  Tensor noise_b = random_normal({cfg.kappa, cfg.kappa}, rng, 0.02);
  for (std::size_t i = 0; i < m.forward_op.size(); ++i) {
    m.forward_op[i] += noise_f[i];
    m.backward_op[i] += noise_b[i];
  }

  m.mean_field = Tensor::zeros({m.d_in});
  m.scale = 1.0;
  return m;
}

Tensor KoopmanModel::encode_batch(const Tensor& rows) const {
  if (rows.ndim() != 2 || rows.dim(1) != d_in) {
    throw ShapeError("encode expects [batch, " + std::to_string(d_in) + "], got " +
                     shape_to_string(rows.dims()));
  }
  Tensor norm = rows;
  const double inv = 1.0 / scale;
  for (std::size_t r = 0; r < rows.dim(0); ++r)
    for (std::size_t j = 0; j < d_in; ++j)
      norm.at(r, j) = (rows.at(r, j) - mean_field[j]) * inv;
  return mlp2(norm, enc_w1, enc_b1, enc_w2, enc_b2);
}

Tensor KoopmanModel::decode_batch(const Tensor& z) const {
  if (z.ndim() != 2 || z.dim(1) != kappa) {
    throw ShapeError("decode expects [batch, " + std::to_string(kappa) + "], got " +
                     shape_to_string(z.dims()));
  }
  Tensor out = mlp2(z, dec_w1, dec_b1, dec_w2, dec_b2);
  for (std::size_t r = 0; r < out.dim(0); ++r)
    for (std::size_t j = 0; j < d_in; ++j)
      out.at(r, j) = out.at(r, j) * scale + mean_field[j];
  return out;
}

Tensor KoopmanModel::encode(const Tensor& field) const {
  if (!(field.ndim() == 2 && field.dim(0) == height && field.dim(1) == width) &&
      !(field.ndim() == 1 && field.dim(0) == d_in)) {
    throw ShapeError("field shape " + shape_to_string(field.dims()) + " does not match " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  Tensor z = encode_batch(field.reshaped({1, d_in}));
  return z.reshaped({kappa});
}

Tensor KoopmanModel::decode(const Tensor& z) const {
  if (z.ndim() != 1 || z.dim(0) != kappa) {
    throw ShapeError("latent shape " + shape_to_string(z.dims()) + " does not match kappa " +
                     std::to_string(kappa));
  }
  Tensor out = decode_batch(z.reshaped({1, kappa}));
  return out.reshaped({height, width});
}

static Tensor evolve(const Tensor& z, const Tensor& op, long steps, std::size_t kappa) {
  if (z.ndim() != 1 || z.dim(0) != kappa) {
    throw ShapeError("latent shape " + shape_to_string(z.dims()) + " does not match kappa " +
                     std::to_string(kappa));
  }
  if (steps < 0) throw ContractError("evolve steps must be non-negative");
  Tensor cur = z.reshaped({1, kappa});
  for (long s = 0; s < steps; ++s) cur = matmul(cur, op);
  return cur.reshaped({kappa});
}

Tensor KoopmanModel::evolve_forward(const Tensor& z, long steps) const {
  return evolve(z, forward_op, steps, kappa);
}

Tensor KoopmanModel::evolve_backward(const Tensor& z, long steps) const {
  return evolve(z, backward_op, steps, kappa);
}

FlowFieldSequence KoopmanModel::forecast(const Tensor& last_history_field, long k) const {
  if (k < 0) throw ContractError("forecast horizon must be non-negative");
  Tensor z = encode(last_history_field).reshaped({1, kappa});
  FlowFieldSequence out;
  out.fields = Tensor({static_cast<std::size_t>(k) + 1, height, width});
  out.t_start = 0;
  out.source = FieldSource::Koopman;
  for (long s = 0; s <= k; ++s) {
    z = matmul(z, forward_op);
    Tensor field = decode_batch(z);
    double* dst = out.fields.data() + static_cast<std::size_t>(s) * d_in;
    for (std::size_t j = 0; j < d_in; ++j) dst[j] = field[j];
  }
  out.fields.require_finite("forecast output");
  return out;
}

double KoopmanModel::consistency_defect() const {
  Tensor prod = matmul(forward_op, backward_op);
  double sum = 0.0;
  for (std::size_t i = 0; i < kappa; ++i) {
    for (std::size_t j = 0; j < kappa; ++j) {
      const double d = prod.at(i, j) - (i == j ? 1.0 : 0.0);
      sum += d * d;
    }
  }
  return std::sqrt(sum) / std::sqrt(static_cast<double>(kappa));
}

KaeLoss kae_loss(const KoopmanModel& model, const FlowFieldSequence& seq,
                 const std::vector<std::size_t>& window_starts) {
  const std::size_t lambda = model.config.lambda;
  if (seq.height() * seq.width() != model.d_in) {
    throw ShapeError("sequence frame size does not match the model input size");
  }
  check_window_starts(seq, window_starts, lambda);
  LossGraph lg = build_loss_graph(model, window_starts.size());
  set_window_batch(lg, seq, window_starts, model.mean_field, model.scale, lambda);
  lg.g.forward();
  return read_loss(lg);
}

KoopmanModel train_kae(const FlowFieldSequence& history, const KaeConfig& cfg) {
  cfg.validate();
  const std::size_t h = history.frames();
  if (h < cfg.lambda + 1) {
    throw ContractError("history holds " + std::to_string(h) + " frames; training needs at least " +
                        std::to_string(cfg.lambda + 1));
  }
  history.fields.require_finite("training history");

  KoopmanModel model = KoopmanModel::create(history.height(), history.width(), cfg);

  // Normalization: subtract the time-mean field, divide by the global RMS of
  // the residual. A constant sequence keeps scale 1.
  const std::size_t d = model.d_in;
  model.mean_field = Tensor::zeros({d});
  for (std::size_t t = 0; t < h; ++t) {
    const double* src = history.fields.data() + t * d;
    for (std::size_t j = 0; j < d; ++j) model.mean_field[j] += src[j];
  }
  for (std::size_t j = 0; j < d; ++j) model.mean_field[j] /= static_cast<double>(h);
  double ss = 0.0;
  for (std::size_t t = 0; t < h; ++t) {
    const double* src = history.fields.data() + t * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = src[j] - model.mean_field[j];
      ss += r * r;
    }
  }
  const double rms = std::sqrt(ss / static_cast<double>(h * d));
  model.scale = rms > 1e-12 ? rms : 1.0;

  std::vector<std::size_t> all_windows(h - cfg.lambda);
  std::iota(all_windows.begin(), all_windows.end(), 0);
  model.initial_loss = kae_loss(model, history, all_windows);

  LossGraph lg = build_loss_graph(model, cfg.batch);
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  for (NodeId pid : lg.params()) {
    params.push_back(&lg.g.param_value(pid));
    grads.push_back(&lg.g.grad(pid));
  }
  Adam opt(params, {.learning_rate = cfg.learning_rate});

  Rng shuffle_rng = make_rng(cfg.seed, 1);
  std::vector<std::size_t> order = all_windows;
  std::vector<std::size_t> batch_starts(cfg.batch);
  const std::size_t n_batches = (order.size() + cfg.batch - 1) / cfg.batch;

  // Cosine decay to 1% of the configured rate; a fixed rate leaves the
  // parameters on an optimizer noise floor well above the attainable loss.
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
        batch_starts[i] = order[(b * cfg.batch + i) % order.size()];
      }
      set_window_batch(lg, history, batch_starts, model.mean_field, model.scale, cfg.lambda);
      lg.g.forward();
      const double total = lg.g.value(lg.loss_total)[0];
      if (!std::isfinite(total)) {
        throw TrainingDivergedError("loss became non-finite in epoch " + std::to_string(epoch));
      }
      lg.g.backward(lg.loss_total);
      opt.step(grads);
    }
  }

  auto pull = [&lg](NodeId id) { return lg.g.param_value(id); };
  model.enc_w1 = pull(lg.enc_w1);
  model.enc_b1 = pull(lg.enc_b1);
  model.enc_w2 = pull(lg.enc_w2);
  model.enc_b2 = pull(lg.enc_b2);
  model.dec_w1 = pull(lg.dec_w1);
  model.dec_b1 = pull(lg.dec_b1);
  model.dec_w2 = pull(lg.dec_w2);
  model.dec_b2 = pull(lg.dec_b2);
  model.forward_op = pull(lg.fwd_op);
  model.backward_op = pull(lg.bwd_op);

  model.final_loss = kae_loss(model, history, all_windows);
  return model;
}

static nlohmann::json loss_to_json(const KaeLoss& l) {
  return {{"total", l.total},
          {"reconstruction", l.reconstruction},
          {"forward", l.forward},
          {"backward", l.backward},
          {"consistency", l.consistency}};
}

static KaeLoss loss_from_json(const nlohmann::json& j) {
  KaeLoss l;
  l.total = j.value("total", 0.0);
  l.reconstruction = j.value("reconstruction", 0.0);
  l.forward = j.value("forward", 0.0);
  l.backward = j.value("backward", 0.0);
  l.consistency = j.value("consistency", 0.0);
  return l;
}

void KoopmanModel::save(const std::filesystem::path& dir) const {
  nlohmann::json meta;
  meta["kind"] = "koopman-autoencoder";
  meta["height"] = height;
  meta["width"] = width;
  meta["kappa"] = kappa;
  meta["hidden"] = hidden;
  meta["lambda"] = config.lambda;
  meta["weights"] = {config.weight_id, config.weight_fwd, config.weight_bwd, config.weight_con};
  meta["epochs"] = config.epochs;
  meta["batch"] = config.batch;
  meta["learning_rate"] = config.learning_rate;
  meta["seed"] = config.seed;
  meta["scale"] = scale;
  meta["initial_loss"] = loss_to_json(initial_loss);
  meta["final_loss"] = loss_to_json(final_loss);
  save_checkpoint(dir,
                  {{"enc_w1", &enc_w1},
                   {"enc_b1", &enc_b1},
                   {"enc_w2", &enc_w2},
                   {"enc_b2", &enc_b2},
                   {"dec_w1", &dec_w1},
                   {"dec_b1", &dec_b1},
                   {"dec_w2", &dec_w2},
                   {"dec_b2", &dec_b2},
                   {"forward_op", &forward_op},
                   {"backward_op", &backward_op},
                   {"mean_field", &mean_field}},
                  meta);
}

KoopmanModel KoopmanModel::load(const std::filesystem::path& dir) {
  nlohmann::json meta;
  auto params = load_checkpoint(dir, &meta);
  if (meta.value("kind", "") != "koopman-autoencoder") {
    throw IoError("bad_manifest", "checkpoint at " + dir.string() + " is not a sequence model");
  }
  KoopmanModel m;
  m.height = meta.at("height").get<std::size_t>();
  m.width = meta.at("width").get<std::size_t>();
  m.d_in = m.height * m.width;
  m.kappa = meta.at("kappa").get<std::size_t>();
  m.hidden = meta.at("hidden").get<std::size_t>();
  m.config.kappa = m.kappa;
  m.config.hidden = m.hidden;
  m.config.lambda = meta.at("lambda").get<std::size_t>();
  const auto& w = meta.at("weights");
  m.config.weight_id = w.at(0).get<double>();
  m.config.weight_fwd = w.at(1).get<double>();
  m.config.weight_bwd = w.at(2).get<double>();
  m.config.weight_con = w.at(3).get<double>();
  m.config.epochs = meta.value("epochs", m.config.epochs);
  m.config.batch = meta.value("batch", m.config.batch);
  m.config.learning_rate = meta.value("learning_rate", m.config.learning_rate);
  m.config.seed = meta.value("seed", 0ULL);
  m.scale = meta.at("scale").get<double>();
  m.initial_loss = loss_from_json(meta.value("initial_loss", nlohmann::json::object()));
  m.final_loss = loss_from_json(meta.value("final_loss", nlohmann::json::object()));

  auto take = [&params](const char* name) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw IoError("bad_manifest", std::string("checkpoint is missing parameter ") + name);
    }
    return std::move(it->second);
  };
  m.enc_w1 = take("enc_w1");
  m.enc_b1 = take("enc_b1");
  m.enc_w2 = take("enc_w2");
  m.enc_b2 = take("enc_b2");
  m.dec_w1 = take("dec_w1");
  m.dec_b1 = take("dec_b1");
  m.dec_w2 = take("dec_w2");
  m.dec_b2 = take("dec_b2");
  m.forward_op = take("forward_op");
  m.backward_op = take("backward_op");
  m.mean_field = take("mean_field");

  if (m.forward_op.ndim() != 2 || m.forward_op.dim(0) != m.kappa ||
      m.forward_op.dim(1) != m.kappa || !m.backward_op.same_dims(m.forward_op)) {
    throw ShapeError("loaded operators are not square kappa x kappa matrices");
  }
  return m;
}

}  // namespace pistm
