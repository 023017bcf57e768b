#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mmal {

enum class Activation { kTanh, kSoftmax };

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
  Activation activation = Activation::kTanh;
};

// Base parameters theta of the classifier. Hidden layers use tanh, the output
// layer a numerically stabilized softmax over the J classes.
struct ModelParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weights.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weights.rows()); }
};

// Layer sizes include input and output dims, e.g. {16, 24, 24, 10}.
ModelParams random_init(const std::vector<int>& layer_sizes, std::uint64_t seed);

// Throws std::invalid_argument when dimensions are incompatible or entries
// are not finite.
void validate(const ModelParams& params);

// Checkpoint round-trips bit-exactly (values written with 17 significant digits).
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

// One Bernoulli weight mask per layer, entries in {0, 1}. Biases stay unmasked;
// the realized parameters are w .* mask per layer.
struct WeightMask {
  std::vector<Eigen::MatrixXd> weight_masks;
};

// The M mask draws behind one scoring round, identified by their seed.
struct MaskSample {
  std::vector<WeightMask> masks;
  std::uint64_t seed = 0;
};

MaskSample sample_masks(const ModelParams& params, int count, std::uint64_t seed);

// Class distribution under one parameter draw. Deterministic in (params, mask, x).
Eigen::VectorXd forward(const ModelParams& params, const WeightMask& mask, const Eigen::VectorXd& x);

// Batched forward, one column per input; returns J x n probabilities.
Eigen::MatrixXd forward_batch(const ModelParams& params, const WeightMask& mask, const Eigen::MatrixXd& x);

struct LabeledExample {
  Eigen::VectorXd features;
  int label = 1;  // 1..J
};

using TrainSet = std::vector<LabeledExample>;

struct TrainOptions {
  int epochs = 1;
  double learning_rate = 0.05;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double l2 = 0.0;  // optional prior penalty, off by default
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_losses;  // mean minibatch cross entropy per epoch
};

// SGD on the Monte-Carlo objective: one fresh mask per minibatch, cross
// entropy plus (l2/2)*|w|^2. Throws on an empty training set or when the
// loss turns non-finite.
TrainResult train_epochs(ModelParams params, const TrainSet& train, const TrainOptions& opt);

struct ParamGradients {
  std::vector<Eigen::MatrixXd> weight_grads;
  std::vector<Eigen::VectorXd> bias_grads;
};

// Mean cross entropy of the batch under one mask, plus the l2 term. Exposed
// so finite-difference checks can drive the exact quantity the gradients
// differentiate.
double batch_loss(const ModelParams& params, const WeightMask& mask, std::span<const LabeledExample> batch,
                  double l2 = 0.0);
ParamGradients batch_gradients(const ModelParams& params, const WeightMask& mask,
                               std::span<const LabeledExample> batch, double l2 = 0.0);

// M x J row-stochastic matrix: one class distribution per mask draw.
struct PredictiveMatrix {
  int item_id = 0;
  Eigen::MatrixXd probs;
  std::uint64_t mask_seed = 0;

  int draws() const { return static_cast<int>(probs.rows()); }
  int classes() const { return static_cast<int>(probs.cols()); }
};

void validate(const PredictiveMatrix& pm);

PredictiveMatrix predictive_matrix(const ModelParams& params, const MaskSample& masks, int item_id,
                                   const Eigen::VectorXd& x);

// Batched variant: features holds one column per item, aligned with ids.
std::vector<PredictiveMatrix> predictive_matrices(const ModelParams& params, const MaskSample& masks,
                                                  std::span<const int> ids, const Eigen::MatrixXd& features);

// Column mean over the M rows; this is the model's P(A|x) estimate.
Eigen::VectorXd posterior_mean(const PredictiveMatrix& pm);

}  // namespace mmal
