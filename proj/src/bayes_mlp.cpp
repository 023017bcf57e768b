#include "mmal/bayes_mlp.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mmal/rng.hpp"

namespace mmal {

namespace {

constexpr double kLogFloor = 1e-12;

std::string shape_str(long rows, long cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void check_mask_shape(const ModelParams& params, const WeightMask& mask) {
  if (mask.weight_masks.size() != params.layers.size()) {
    throw std::invalid_argument("mask has " + std::to_string(mask.weight_masks.size()) + " layers, model has " +
                                std::to_string(params.layers.size()));
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& w = params.layers[l].weights;
    const auto& m = mask.weight_masks[l];
    if (m.rows() != w.rows() || m.cols() != w.cols()) {
      throw std::invalid_argument("mask shape " + shape_str(m.rows(), m.cols()) + " does not match weights " +
                                  shape_str(w.rows(), w.cols()) + " at layer " + std::to_string(l));
    }
  }
}

Eigen::MatrixXd softmax_cols(Eigen::MatrixXd z) {
  for (long c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    col /= col.sum();
  }
  return z;
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // [0] = input, [i] = output of layer i-1
};

Eigen::MatrixXd forward_cached(const ModelParams& params, const WeightMask& mask, const Eigen::MatrixXd& x,
                               ForwardCache* cache) {
  if (x.rows() != params.input_dim()) {
    throw std::invalid_argument("input dim " + std::to_string(x.rows()) + " does not match model input " +
                                std::to_string(params.input_dim()));
  }
  check_mask_shape(params, mask);
  Eigen::MatrixXd a = x;
  if (cache) cache->activations.push_back(a);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Layer& layer = params.layers[l];
    Eigen::MatrixXd z =
        (layer.weights.cwiseProduct(mask.weight_masks[l]) * a).colwise() + layer.bias;
    a = layer.activation == Activation::kSoftmax ? softmax_cols(std::move(z))
                                                 : Eigen::MatrixXd(z.array().tanh());
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

Eigen::MatrixXd batch_features(std::span<const LabeledExample> batch, int dim) {
  Eigen::MatrixXd x(dim, static_cast<long>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].features.size() != dim) {
      throw std::invalid_argument("example " + std::to_string(i) + " has dim " +
                                  std::to_string(batch[i].features.size()) + ", expected " + std::to_string(dim));
    }
    x.col(static_cast<long>(i)) = batch[i].features;
  }
  return x;
}

double weight_sq_norm(const ModelParams& params) {
  double s = 0.0;
  for (const auto& layer : params.layers) s += layer.weights.squaredNorm();
  return s;
}

}  // namespace

ModelParams random_init(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("need at least input and output layer sizes");
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("layer sizes must be >= 1");
  }
  Rng rng(seed);
  ModelParams params;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    Layer layer;
    const int in = layer_sizes[l - 1];
    const int out = layer_sizes[l];
    // masks drop half the weights on average, so scale init up to compensate
    const double scale = 2.0 / std::sqrt(static_cast<double>(in));
    layer.weights.resize(out, in);
    for (long r = 0; r < out; ++r) {
      for (long c = 0; c < in; ++c) layer.weights(r, c) = scale * rng.normal();
    }
    layer.bias = Eigen::VectorXd::Zero(out);
    layer.activation = (l + 1 == layer_sizes.size()) ? Activation::kSoftmax : Activation::kTanh;
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void validate(const ModelParams& params) {
  if (params.layers.empty()) throw std::invalid_argument("model has no layers");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Layer& layer = params.layers[l];
    if (layer.bias.size() != layer.weights.rows()) {
      throw std::invalid_argument("bias size mismatch at layer " + std::to_string(l));
    }
    if (l > 0 && params.layers[l - 1].weights.rows() != layer.weights.cols()) {
      throw std::invalid_argument("incompatible dims between layers " + std::to_string(l - 1) + " and " +
                                  std::to_string(l));
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw std::invalid_argument("non-finite parameter at layer " + std::to_string(l));
    }
  }
  if (params.layers.back().activation != Activation::kSoftmax) {
    throw std::invalid_argument("output layer must be softmax");
  }
}

MaskSample sample_masks(const ModelParams& params, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("mask count must be >= 1");
  Rng rng(seed);
  MaskSample sample;
  sample.seed = seed;
  sample.masks.reserve(static_cast<std::size_t>(count));
  for (int m = 0; m < count; ++m) {
    WeightMask mask;
    for (const auto& layer : params.layers) {
      Eigen::MatrixXd mm(layer.weights.rows(), layer.weights.cols());
      for (long r = 0; r < mm.rows(); ++r) {
        for (long c = 0; c < mm.cols(); ++c) mm(r, c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
      mask.weight_masks.push_back(std::move(mm));
    }
    sample.masks.push_back(std::move(mask));
  }
  return sample;
}

Eigen::VectorXd forward(const ModelParams& params, const WeightMask& mask, const Eigen::VectorXd& x) {
  return forward_cached(params, mask, x, nullptr).col(0);
}

Eigen::MatrixXd forward_batch(const ModelParams& params, const WeightMask& mask, const Eigen::MatrixXd& x) {
  return forward_cached(params, mask, x, nullptr);
}

double batch_loss(const ModelParams& params, const WeightMask& mask, std::span<const LabeledExample> batch,
                  double l2) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const Eigen::MatrixXd probs = forward_cached(params, mask, batch_features(batch, params.input_dim()), nullptr);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int label = batch[i].label;
    if (label < 1 || label > params.output_dim()) {
      throw std::invalid_argument("label " + std::to_string(label) + " out of range 1.." +
                                  std::to_string(params.output_dim()));
    }
    loss -= std::log(std::max(probs(label - 1, static_cast<long>(i)), kLogFloor));
  }
  loss /= static_cast<double>(batch.size());
  if (l2 > 0.0) loss += 0.5 * l2 * weight_sq_norm(params);
  return loss;
}

ParamGradients batch_gradients(const ModelParams& params, const WeightMask& mask,
                               std::span<const LabeledExample> batch, double l2) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const long n = static_cast<long>(batch.size());
  ForwardCache cache;
  const Eigen::MatrixXd probs =
      forward_cached(params, mask, batch_features(batch, params.input_dim()), &cache);

  // softmax + cross entropy: delta = (p - y) / n
  Eigen::MatrixXd delta = probs / static_cast<double>(n);
  for (long i = 0; i < n; ++i) delta(batch[static_cast<std::size_t>(i)].label - 1, i) -= 1.0 / static_cast<double>(n);

  ParamGradients grads;
  grads.weight_grads.resize(params.layers.size());
  grads.bias_grads.resize(params.layers.size());
  for (long l = static_cast<long>(params.layers.size()) - 1; l >= 0; --l) {
    const auto idx = static_cast<std::size_t>(l);
    const Eigen::MatrixXd& below = cache.activations[idx];  // input to layer l
    grads.weight_grads[idx] = (delta * below.transpose()).cwiseProduct(mask.weight_masks[idx]);
    if (l2 > 0.0) grads.weight_grads[idx] += l2 * params.layers[idx].weights;
    grads.bias_grads[idx] = delta.rowwise().sum();
    if (l > 0) {
      const Eigen::MatrixXd masked_w = params.layers[idx].weights.cwiseProduct(mask.weight_masks[idx]);
      delta = masked_w.transpose() * delta;
      // tanh'(z) = 1 - a^2 on the activation below
      delta.array() *= 1.0 - cache.activations[idx].array().square();
    }
  }
  return grads;
}

TrainResult train_epochs(ModelParams params, const TrainSet& train, const TrainOptions& opt) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  if (opt.learning_rate <= 0.0) throw std::invalid_argument("learning rate must be > 0");
  if (opt.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  validate(params);

  TrainResult result;
  if (opt.epochs == 0) {
    result.params = std::move(params);
    return result;
  }

  Rng shuffle_rng(derive_seed(opt.seed, 0x5d1));
  const std::uint64_t mask_root = derive_seed(opt.seed, 0x9a7);
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) order[i] = static_cast<int>(i);

  std::uint64_t minibatch_index = 0;
  std::vector<LabeledExample> batch;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train[static_cast<std::size_t>(order[i])]);

      const MaskSample mask = sample_masks(params, 1, derive_seed(mask_root, minibatch_index++));
      const double loss = batch_loss(params, mask.masks[0], batch, opt.l2);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", minibatch " + std::to_string(batches) + ", lr " +
                                 std::to_string(opt.learning_rate));
      }
      const ParamGradients grads = batch_gradients(params, mask.masks[0], batch, opt.l2);
      for (std::size_t l = 0; l < params.layers.size(); ++l) {
        params.layers[l].weights -= opt.learning_rate * grads.weight_grads[l];
        params.layers[l].bias -= opt.learning_rate * grads.bias_grads[l];
      }
      epoch_loss += loss;
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / std::max(batches, 1));
  }
  validate(params);
  result.params = std::move(params);
  return result;
}

void validate(const PredictiveMatrix& pm) {
  if (pm.probs.rows() < 1) throw std::invalid_argument("predictive matrix needs at least one draw");
  if ((pm.probs.array() < -1e-12).any() || (pm.probs.array() > 1.0 + 1e-12).any()) {
    throw std::invalid_argument("predictive matrix entries outside [0, 1]");
  }
  for (long r = 0; r < pm.probs.rows(); ++r) {
    if (std::abs(pm.probs.row(r).sum() - 1.0) > 1e-6) {
      throw std::invalid_argument("predictive matrix row " + std::to_string(r) + " does not sum to 1");
    }
  }
}

PredictiveMatrix predictive_matrix(const ModelParams& params, const MaskSample& masks, int item_id,
                                   const Eigen::VectorXd& x) {
  if (masks.masks.empty()) throw std::invalid_argument("mask sample is empty");
  PredictiveMatrix pm;
  pm.item_id = item_id;
  pm.mask_seed = masks.seed;
  pm.probs.resize(static_cast<long>(masks.masks.size()), params.output_dim());
  for (std::size_t m = 0; m < masks.masks.size(); ++m) {
    pm.probs.row(static_cast<long>(m)) = forward(params, masks.masks[m], x).transpose();
  }
  return pm;
}

std::vector<PredictiveMatrix> predictive_matrices(const ModelParams& params, const MaskSample& masks,
                                                  std::span<const int> ids, const Eigen::MatrixXd& features) {
  if (masks.masks.empty()) throw std::invalid_argument("mask sample is empty");
  if (features.cols() != static_cast<long>(ids.size())) {
    throw std::invalid_argument("feature count does not match id count");
  }
  std::vector<PredictiveMatrix> pms(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    pms[i].item_id = ids[i];
    pms[i].mask_seed = masks.seed;
    pms[i].probs.resize(static_cast<long>(masks.masks.size()), params.output_dim());
  }
  for (std::size_t m = 0; m < masks.masks.size(); ++m) {
    const Eigen::MatrixXd probs = forward_batch(params, masks.masks[m], features);  // J x n
    for (std::size_t i = 0; i < ids.size(); ++i) {
      pms[i].probs.row(static_cast<long>(m)) = probs.col(static_cast<long>(i)).transpose();
    }
  }
  return pms;
}

Eigen::VectorXd posterior_mean(const PredictiveMatrix& pm) {
  validate(pm);
  return pm.probs.colwise().mean().transpose();
}

void save_model(const ModelParams& params, const std::string& path) {
  validate(params);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "mmal-model 1\n";
  out << params.layers.size() << "\n";
  char buf[64];
  for (const auto& layer : params.layers) {
    out << layer.weights.rows() << " " << layer.weights.cols() << " "
        << (layer.activation == Activation::kSoftmax ? "softmax" : "tanh") << "\n";
    for (long r = 0; r < layer.weights.rows(); ++r) {
      for (long c = 0; c < layer.weights.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", layer.weights(r, c));
        out << buf << (c + 1 == layer.weights.cols() ? "" : " ");
      }
      out << "\n";
    }
    for (long r = 0; r < layer.bias.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%.17g", layer.bias(r));
      out << buf << (r + 1 == layer.bias.size() ? "" : " ");
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "mmal-model" || version != 1) throw std::runtime_error("not a model checkpoint: " + path);
  std::size_t n_layers = 0;
  in >> n_layers;
  ModelParams params;
  for (std::size_t l = 0; l < n_layers; ++l) {
    long rows = 0, cols = 0;
    std::string act;
    in >> rows >> cols >> act;
    if (!in || rows < 1 || cols < 1) throw std::runtime_error("bad layer header in " + path);
    Layer layer;
    layer.activation = act == "softmax" ? Activation::kSoftmax : Activation::kTanh;
    layer.weights.resize(rows, cols);
    for (long r = 0; r < rows; ++r) {
      for (long c = 0; c < cols; ++c) in >> layer.weights(r, c);
    }
    layer.bias.resize(rows);
    for (long r = 0; r < rows; ++r) in >> layer.bias(r);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    params.layers.push_back(std::move(layer));
  }
  validate(params);
  return params;
}

}  // namespace mmal
