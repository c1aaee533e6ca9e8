#include "soul/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "soul/errors.hpp"

namespace soul::nn {

namespace {

Matrix linear_forward(const Layer& layer, const Matrix& x) {
  // z = x W^T + b
  Matrix z(x.rows, layer.out_dim());
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      double s = layer.bias[o];
      for (std::size_t k = 0; k < layer.in_dim(); ++k) {
        s += x.at(i, k) * layer.weights.at(o, k);
      }
      z.at(i, o) = s;
    }
  }
  return z;
}

void softmax_rows(Matrix& z) {
  for (std::size_t i = 0; i < z.rows; ++i) {
    double mx = z.at(i, 0);
    for (std::size_t j = 1; j < z.cols; ++j) mx = std::max(mx, z.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < z.cols; ++j) {
      z.at(i, j) = std::exp(z.at(i, j) - mx);
      sum += z.at(i, j);
    }
    for (std::size_t j = 0; j < z.cols; ++j) z.at(i, j) /= sum;
  }
}

struct LayerCache {
  Matrix input;       // x entering the layer
  Matrix pre_bn;      // linear output
  Matrix xhat;        // normalized pre-activation (bn layers)
  std::vector<double> mean, var;  // batch statistics actually used
  bool used_batch_stats = false;
  Matrix pre_act;     // after bn (or linear when no bn)
  Matrix dropout_mask;  // empty when dropout inactive
  Matrix output;
};

// Full forward pass retaining everything backprop needs. `logits` is the last
// layer's linear output (softmax applied separately).
std::vector<LayerCache> forward_cached(const MlpModel& model, const Matrix& batch,
                                       bool train_bn, bool dropout,
                                       rng::Engine* rng, Matrix& logits) {
  if (batch.cols != model.input_dim()) {
    throw DimMismatch("forward: input width does not match first layer");
  }
  std::vector<LayerCache> caches(model.layers.size());
  Matrix x = batch;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    LayerCache& c = caches[l];
    c.input = x;
    Matrix z = linear_forward(layer, x);
    c.pre_bn = z;
    if (layer.batchnorm) {
      const BatchNorm& bn = *layer.batchnorm;
      const std::size_t n = z.rows;
      const std::size_t w = z.cols;
      c.mean.assign(w, 0.0);
      c.var.assign(w, 0.0);
      if (train_bn) {
        c.used_batch_stats = true;
        for (std::size_t j = 0; j < w; ++j) {
          double m = 0.0;
          for (std::size_t i = 0; i < n; ++i) m += z.at(i, j);
          m /= static_cast<double>(n);
          double v = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double d = z.at(i, j) - m;
            v += d * d;
          }
          v /= static_cast<double>(n);
          c.mean[j] = m;
          c.var[j] = v;
        }
      } else {
        c.mean = bn.running_mean;
        c.var = bn.running_var;
      }
      c.xhat = Matrix(n, w);
      Matrix y(n, w);
      for (std::size_t j = 0; j < w; ++j) {
        const double inv_std = 1.0 / std::sqrt(c.var[j] + bn.epsilon);
        for (std::size_t i = 0; i < n; ++i) {
          const double xh = (z.at(i, j) - c.mean[j]) * inv_std;
          c.xhat.at(i, j) = xh;
          y.at(i, j) = bn.gamma[j] * xh + bn.beta[j];
        }
      }
      z = std::move(y);
    }
    c.pre_act = z;
    if (layer.relu) {
      for (double& e : z.data) e = std::max(0.0, e);
    }
    if (layer.relu && dropout && model.dropout_prob > 0.0) {
      if (rng == nullptr) throw Error("forward: dropout requires an rng");
      const double keep = 1.0 - model.dropout_prob;
      c.dropout_mask = Matrix(z.rows, z.cols);
      for (std::size_t i = 0; i < z.data.size(); ++i) {
        c.dropout_mask.data[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        z.data[i] *= c.dropout_mask.data[i];
      }
    }
    c.output = z;
    x = std::move(z);
  }
  logits = x;
  return caches;
}

void check_model_batch(const MlpModel& model, const Matrix& batch) {
  if (model.layers.empty()) throw Error("model has no layers");
  if (batch.rows == 0) throw EmptyBatch("empty batch");
  if (batch.cols != model.input_dim()) {
    throw DimMismatch("input width does not match first layer");
  }
}

}  // namespace

MlpModel MlpModel::create(std::size_t input_dim,
                          const std::vector<std::size_t>& widths,
                          rng::Engine& rng, double dropout_prob) {
  if (widths.empty() || widths.back() != 2) {
    throw SpecError("MlpModel: final layer width must be 2");
  }
  MlpModel model;
  model.dropout_prob = dropout_prob;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    Layer layer;
    const std::size_t out = widths[l];
    layer.weights = Matrix(out, in);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : layer.weights.data) w = rng.uniform(-bound, bound);
    layer.bias.assign(out, 0.0);
    const bool hidden = l + 1 < widths.size();
    if (hidden) {
      BatchNorm bn;
      bn.gamma.assign(out, 1.0);
      bn.beta.assign(out, 0.0);
      bn.running_mean.assign(out, 0.0);
      bn.running_var.assign(out, 1.0);
      layer.batchnorm = std::move(bn);
      layer.relu = true;
    }
    model.layers.push_back(std::move(layer));
    in = out;
  }
  return model;
}

Matrix forward(const MlpModel& model, const Matrix& batch, Mode mode,
               rng::Engine* dropout_rng) {
  check_model_batch(model, batch);
  Matrix logits;
  const bool train = mode == Mode::kTrain;
  forward_cached(model, batch, train, train, dropout_rng, logits);
  softmax_rows(logits);
  return logits;
}

Matrix forward_batch_stats(const MlpModel& model, const Matrix& batch) {
  check_model_batch(model, batch);
  Matrix logits;
  forward_cached(model, batch, true, false, nullptr, logits);
  softmax_rows(logits);
  return logits;
}

std::pair<std::vector<double>, ActivationTrace> forward_with_activations(
    const MlpModel& model, std::span<const double> x) {
  Matrix batch(1, x.size());
  std::copy(x.begin(), x.end(), batch.data.begin());
  check_model_batch(model, batch);
  Matrix logits;
  auto caches = forward_cached(model, batch, false, false, nullptr, logits);
  softmax_rows(logits);
  ActivationTrace trace;
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    trace.layer_outputs.push_back(caches[l].output.data);
  }
  return {logits.data, std::move(trace)};
}

LossResult loss_and_gradients(const MlpModel& model, const TrainBatch& batch,
                              const LossOptions& opts) {
  check_model_batch(model, batch.inputs);
  const std::size_t n = batch.inputs.rows;
  if (batch.labels.size() != n) {
    throw DimMismatch("loss_and_gradients: labels/rows mismatch");
  }
  const std::size_t n_unlabeled = n - batch.unlabeled_begin;
  const bool distill = !batch.teacher_probs.empty();
  if (distill && batch.teacher_probs.rows != n_unlabeled) {
    throw DimMismatch("loss_and_gradients: teacher rows mismatch");
  }

  Matrix logits;
  auto caches = forward_cached(model, batch.inputs, opts.train_batchnorm,
                               opts.dropout, opts.rng, logits);
  Matrix probs = logits;
  softmax_rows(probs);

  LossResult result;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::max(probs.at(i, batch.labels[i]), 1e-300);
    result.loss_classification -= std::log(p) * inv_n;
  }

  // dL/dlogits
  Matrix dz(n, probs.cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < probs.cols; ++j) {
      const double onehot = (static_cast<int>(j) == batch.labels[i]) ? 1.0 : 0.0;
      dz.at(i, j) = (probs.at(i, j) - onehot) * inv_n;
    }
  }

  if (distill && n_unlabeled > 0) {
    const double inv_u = 1.0 / static_cast<double>(n_unlabeled);
    for (std::size_t u = 0; u < n_unlabeled; ++u) {
      const std::size_t i = batch.unlabeled_begin + u;
      for (std::size_t j = 0; j < probs.cols; ++j) {
        const double pt = batch.teacher_probs.at(u, j);
        const double ps = std::max(probs.at(i, j), 1e-300);
        if (pt > 0.0) {
          result.loss_distill +=
              pt * (std::log(pt) - std::log(ps)) * inv_u * opts.distill_weight;
        }
        dz.at(i, j) += opts.distill_weight * (probs.at(i, j) - pt) * inv_u;
      }
    }
  }
  result.loss = result.loss_classification + result.loss_distill;

  // backward pass
  result.grads.layers.resize(model.layers.size());
  Matrix delta = std::move(dz);  // gradient at current layer's output
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const Layer& layer = model.layers[li];
    const LayerCache& c = caches[li];
    LayerGrads& g = result.grads.layers[li];

    if (!c.dropout_mask.empty()) {
      for (std::size_t i = 0; i < delta.data.size(); ++i) {
        delta.data[i] *= c.dropout_mask.data[i];
      }
    }
    if (layer.relu) {
      for (std::size_t i = 0; i < delta.data.size(); ++i) {
        if (c.pre_act.data[i] <= 0.0) delta.data[i] = 0.0;
      }
    }
    if (layer.batchnorm) {
      const BatchNorm& bn = *layer.batchnorm;
      const std::size_t rows = delta.rows;
      const std::size_t w = delta.cols;
      g.dgamma.assign(w, 0.0);
      g.dbeta.assign(w, 0.0);
      Matrix dx(rows, w);
      for (std::size_t j = 0; j < w; ++j) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          sum_dy += delta.at(i, j);
          sum_dy_xhat += delta.at(i, j) * c.xhat.at(i, j);
        }
        g.dbeta[j] = sum_dy;
        g.dgamma[j] = sum_dy_xhat;
        const double inv_std = 1.0 / std::sqrt(c.var[j] + bn.epsilon);
        if (c.used_batch_stats) {
          const double nn = static_cast<double>(rows);
          for (std::size_t i = 0; i < rows; ++i) {
            const double dxhat = delta.at(i, j) * bn.gamma[j];
            dx.at(i, j) = inv_std / nn *
                          (nn * dxhat - sum_dy * bn.gamma[j] -
                           c.xhat.at(i, j) * sum_dy_xhat * bn.gamma[j]);
          }
        } else {
          for (std::size_t i = 0; i < rows; ++i) {
            dx.at(i, j) = delta.at(i, j) * bn.gamma[j] * inv_std;
          }
        }
      }
      if (c.used_batch_stats) {
        g.bn_batch_mean = c.mean;
        g.bn_batch_var = c.var;
      }
      delta = std::move(dx);
    }

    // linear
    g.dw = Matrix(layer.out_dim(), layer.in_dim());
    g.db.assign(layer.out_dim(), 0.0);
    for (std::size_t i = 0; i < delta.rows; ++i) {
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const double d = delta.at(i, o);
        g.db[o] += d;
        if (d == 0.0) continue;
        for (std::size_t k = 0; k < layer.in_dim(); ++k) {
          g.dw.at(o, k) += d * c.input.at(i, k);
        }
      }
    }
    if (li > 0) {
      Matrix dprev(delta.rows, layer.in_dim());
      for (std::size_t i = 0; i < delta.rows; ++i) {
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
          const double d = delta.at(i, o);
          if (d == 0.0) continue;
          for (std::size_t k = 0; k < layer.in_dim(); ++k) {
            dprev.at(i, k) += d * layer.weights.at(o, k);
          }
        }
      }
      delta = std::move(dprev);
    }
  }
  return result;
}

namespace {

void axpy_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& vel, double lr, double mu, double wd) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + wd * param[i];
    vel[i] = mu * vel[i] + g;
    param[i] -= lr * (g + mu * vel[i]);
  }
}

}  // namespace

void sgd_step(MlpModel& model, const Gradients& grads, OptimizerState& opt) {
  if (grads.layers.size() != model.layers.size()) {
    throw DimMismatch("sgd_step: gradient layer count mismatch");
  }
  if (opt.velocity.size() != model.layers.size()) {
    opt.velocity.assign(model.layers.size(), LayerGrads{});
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const Layer& layer = model.layers[l];
      opt.velocity[l].dw = Matrix(layer.out_dim(), layer.in_dim());
      opt.velocity[l].db.assign(layer.out_dim(), 0.0);
      if (layer.batchnorm) {
        opt.velocity[l].dgamma.assign(layer.out_dim(), 0.0);
        opt.velocity[l].dbeta.assign(layer.out_dim(), 0.0);
      }
    }
  }
  const double lr = opt.learning_rate;
  const double mu = opt.momentum;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Layer& layer = model.layers[l];
    const LayerGrads& g = grads.layers[l];
    LayerGrads& v = opt.velocity[l];
    if (g.dw.rows != layer.weights.rows || g.dw.cols != layer.weights.cols) {
      throw DimMismatch("sgd_step: weight gradient shape mismatch");
    }
    axpy_update(layer.weights.data, g.dw.data, v.dw.data, lr, mu,
                opt.weight_decay);
    axpy_update(layer.bias, g.db, v.db, lr, mu, opt.weight_decay);
    if (layer.batchnorm && !g.dgamma.empty()) {
      BatchNorm& bn = *layer.batchnorm;
      axpy_update(bn.gamma, g.dgamma, v.dgamma, lr, mu, opt.weight_decay);
      axpy_update(bn.beta, g.dbeta, v.dbeta, lr, mu, opt.weight_decay);
      if (!g.bn_batch_mean.empty()) {
        for (std::size_t j = 0; j < bn.running_mean.size(); ++j) {
          bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] +
                               bn.momentum * g.bn_batch_mean[j];
          bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] +
                              bn.momentum * g.bn_batch_var[j];
        }
      }
    }
  }
}

EpochDecision epoch_end(OptimizerState& opt, double val_loss) {
  EarlyStopping& es = opt.early_stopping;
  const double improvement = es.best_val_loss - val_loss;
  if (improvement < es.delta) {
    ++es.epochs_without_improvement;
  } else {
    es.epochs_without_improvement = 0;
  }
  if (val_loss < es.best_val_loss) es.best_val_loss = val_loss;
  if (es.epochs_without_improvement >= es.patience) {
    return EpochDecision::kStop;
  }
  opt.learning_rate *= opt.epoch_decay;
  return EpochDecision::kContinue;
}

double evaluate_loss(const MlpModel& model, const Matrix& inputs,
                     const std::vector<int>& labels) {
  const Matrix probs = forward(model, inputs, Mode::kEval);
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    loss -= std::log(std::max(probs.at(i, labels[i]), 1e-300));
  }
  return loss / static_cast<double>(probs.rows);
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x534f554cu;  // "SOUL"
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

void write_vec(std::ofstream& out, const std::vector<double>& v) {
  write_pod(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_vec(std::ifstream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

void write_matrix(std::ofstream& out, const Matrix& m) {
  write_pod(out, static_cast<std::uint64_t>(m.rows));
  write_pod(out, static_cast<std::uint64_t>(m.cols));
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

Matrix read_matrix(std::ifstream& in) {
  const auto r = read_pod<std::uint64_t>(in);
  const auto c = read_pod<std::uint64_t>(in);
  Matrix m(r, c);
  in.read(reinterpret_cast<char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!in) throw IoError("checkpoint: truncated file");
  return m;
}

}  // namespace

void save_checkpoint(const MlpModel& model, const OptimizerState& opt,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open " + path);
  write_pod(out, kCheckpointMagic);
  write_pod(out, kCheckpointVersion);
  write_pod(out, model.dropout_prob);
  write_pod(out, static_cast<std::uint64_t>(model.layers.size()));
  for (const Layer& layer : model.layers) {
    write_matrix(out, layer.weights);
    write_vec(out, layer.bias);
    write_pod(out, static_cast<std::uint8_t>(layer.relu));
    write_pod(out, static_cast<std::uint8_t>(layer.batchnorm.has_value()));
    if (layer.batchnorm) {
      const BatchNorm& bn = *layer.batchnorm;
      write_vec(out, bn.gamma);
      write_vec(out, bn.beta);
      write_vec(out, bn.running_mean);
      write_vec(out, bn.running_var);
      write_pod(out, bn.epsilon);
      write_pod(out, bn.momentum);
    }
  }
  write_pod(out, opt.learning_rate);
  write_pod(out, opt.momentum);
  write_pod(out, opt.weight_decay);
  write_pod(out, opt.epoch_decay);
  write_pod(out, static_cast<std::int32_t>(opt.early_stopping.patience));
  write_pod(out, opt.early_stopping.delta);
  write_pod(out, opt.early_stopping.best_val_loss);
  write_pod(out, static_cast<std::int32_t>(
                     opt.early_stopping.epochs_without_improvement));
  write_pod(out, static_cast<std::uint64_t>(opt.velocity.size()));
  for (const LayerGrads& v : opt.velocity) {
    write_matrix(out, v.dw);
    write_vec(out, v.db);
    write_vec(out, v.dgamma);
    write_vec(out, v.dbeta);
  }
}

std::pair<MlpModel, OptimizerState> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  if (read_pod<std::uint32_t>(in) != kCheckpointMagic) {
    throw IoError("checkpoint: bad magic");
  }
  if (read_pod<std::uint32_t>(in) != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version");
  }
  MlpModel model;
  model.dropout_prob = read_pod<double>(in);
  const auto nlayers = read_pod<std::uint64_t>(in);
  for (std::uint64_t l = 0; l < nlayers; ++l) {
    Layer layer;
    layer.weights = read_matrix(in);
    layer.bias = read_vec(in);
    layer.relu = read_pod<std::uint8_t>(in) != 0;
    if (read_pod<std::uint8_t>(in) != 0) {
      BatchNorm bn;
      bn.gamma = read_vec(in);
      bn.beta = read_vec(in);
      bn.running_mean = read_vec(in);
      bn.running_var = read_vec(in);
      bn.epsilon = read_pod<double>(in);
      bn.momentum = read_pod<double>(in);
      layer.batchnorm = std::move(bn);
    }
    model.layers.push_back(std::move(layer));
  }
  OptimizerState opt;
  opt.learning_rate = read_pod<double>(in);
  opt.momentum = read_pod<double>(in);
  opt.weight_decay = read_pod<double>(in);
  opt.epoch_decay = read_pod<double>(in);
  opt.early_stopping.patience = read_pod<std::int32_t>(in);
  opt.early_stopping.delta = read_pod<double>(in);
  opt.early_stopping.best_val_loss = read_pod<double>(in);
  opt.early_stopping.epochs_without_improvement = read_pod<std::int32_t>(in);
  const auto nvel = read_pod<std::uint64_t>(in);
  for (std::uint64_t l = 0; l < nvel; ++l) {
    LayerGrads v;
    v.dw = read_matrix(in);
    v.db = read_vec(in);
    v.dgamma = read_vec(in);
    v.dbeta = read_vec(in);
    opt.velocity.push_back(std::move(v));
  }
  return {std::move(model), std::move(opt)};
}

}  // namespace soul::nn
