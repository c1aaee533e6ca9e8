#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soul/linalg.hpp"
#include "soul/rng.hpp"

namespace soul::nn {

using linalg::Matrix;

struct BatchNorm {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
};

struct Layer {
  Matrix weights;  // out x in
  std::vector<double> bias;
  std::optional<BatchNorm> batchnorm;
  bool relu = false;

  std::size_t in_dim() const { return weights.cols; }
  std::size_t out_dim() const { return weights.rows; }
};

// Fully connected net, hidden layers as linear -> batchnorm -> ReLU -> dropout,
// final layer linear into a softmax head of width 2.
struct MlpModel {
  std::vector<Layer> layers;
  double dropout_prob = 0.2;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
  std::size_t hidden_count() const { return layers.size() - 1; }

  // widths lists every layer output, last entry must be 2.
  static MlpModel create(std::size_t input_dim,
                         const std::vector<std::size_t>& widths,
                         rng::Engine& rng, double dropout_prob = 0.2);
};

enum class Mode { kTrain, kEval };

// post-activation outputs x^1..x^K for the hidden layers, one input
struct ActivationTrace {
  std::vector<std::vector<double>> layer_outputs;
};

// Softmax probabilities, one row per input row. Train mode applies dropout
// (needs rng) and batch statistics without touching running statistics.
Matrix forward(const MlpModel& model, const Matrix& batch, Mode mode,
               rng::Engine* dropout_rng = nullptr);

// Softmax probabilities under batch statistics but without dropout; used for
// distillation targets so teacher and student see the same normalization.
Matrix forward_batch_stats(const MlpModel& model, const Matrix& batch);

std::pair<std::vector<double>, ActivationTrace> forward_with_activations(
    const MlpModel& model, std::span<const double> x);

struct LayerGrads {
  Matrix dw;
  std::vector<double> db;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
  // batch statistics observed during the forward pass; applied to the
  // model's running stats by sgd_step
  std::vector<double> bn_batch_mean;
  std::vector<double> bn_batch_var;
};

struct Gradients {
  std::vector<LayerGrads> layers;
};

// labeled rows first (ground-truth or pseudo labels), unlabeled tail rows
// carry teacher pseudo-labels plus optional distillation targets
struct TrainBatch {
  Matrix inputs;
  std::vector<int> labels;            // one label in {0,1} per row
  std::size_t unlabeled_begin = 0;    // rows >= this are the unlabeled part
  Matrix teacher_probs;               // per unlabeled row; empty = no distillation
};

struct LossOptions {
  double distill_weight = 1.0;
  bool train_batchnorm = true;
  bool dropout = true;
  rng::Engine* rng = nullptr;
};

struct LossResult {
  double loss = 0.0;
  double loss_classification = 0.0;
  double loss_distill = 0.0;
  Gradients grads;
};

LossResult loss_and_gradients(const MlpModel& model, const TrainBatch& batch,
                              const LossOptions& opts);

struct EarlyStopping {
  int patience = 3;
  double delta = 0.01;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;
};

struct OptimizerState {
  double learning_rate = 1e-3;
  double momentum = 0.9;  // Nesterov
  double weight_decay = 0.0;
  double epoch_decay = 0.96;
  EarlyStopping early_stopping;
  std::vector<LayerGrads> velocity;  // lazily shaped to the model
};

void sgd_step(MlpModel& model, const Gradients& grads, OptimizerState& opt);

enum class EpochDecision { kContinue, kStop };
EpochDecision epoch_end(OptimizerState& opt, double val_loss);

// mean cross-entropy of eval-mode predictions against ground truth
double evaluate_loss(const MlpModel& model, const Matrix& inputs,
                     const std::vector<int>& labels);

// versioned binary checkpoint, bit-exact round trip
void save_checkpoint(const MlpModel& model, const OptimizerState& opt,
                     const std::string& path);
std::pair<MlpModel, OptimizerState> load_checkpoint(const std::string& path);

}  // namespace soul::nn
