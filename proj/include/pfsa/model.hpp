#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfsa/tape.hpp"
#include "pfsa/tensor.hpp"

namespace pfsa {

struct Sample;

/// One backbone stage: conv → ReLU → optional 2×2 average-pool downsampling.
struct StageSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool downsample = true;
};

struct ModelConfig {
  std::vector<StageSpec> stages{{16, 3, 1, 1, true}, {32, 3, 1, 1, true}, {64, 3, 1, 1, true}, {128, 3, 1, 1, false}};
  std::size_t input_channels = 3;
  std::size_t input_height = 64;
  std::size_t input_width = 32;
  std::size_t num_classes = 2;
  std::size_t parts = 2;         // stripe count m
  std::size_t reduced_dim = 32;  // width of the shared 1×1 reduction
  double lambda = 0.2;
  bool sa_on_ds = true;        // attention before GAP on the deep-supervision branches
  bool sa_on_backbone = false;  // attention on the last stage before stripe pooling
  std::uint64_t seed = 0;

  Shape input_shape() const { return {input_channels, input_height, input_width}; }
  /// Output shape of every stage; ConfigError when a stage cannot be applied.
  std::vector<Shape> stage_shapes() const;
  /// Every stage but the last carries a deep-supervision classifier.
  std::size_t num_ds_branches() const { return stages.empty() ? 0 : stages.size() - 1; }
  void validate() const;
};

/// Named parameter tensors. Keys are stable and ordered (std::map), which fixes iteration order
/// for checkpoints and optimiser updates.
using Params = std::map<std::string, Tensor>;

namespace param_names {
std::string stage_weight(std::size_t stage);
std::string stage_bias(std::size_t stage);
std::string ds_weight(std::size_t branch);
std::string ds_bias(std::size_t branch);
std::string part_weight(std::size_t part);
std::string part_bias(std::size_t part);
inline const std::string reduce_weight = "reduce.weight";
inline const std::string reduce_bias = "reduce.bias";
inline const std::string main_weight = "main.weight";
inline const std::string main_bias = "main.bias";
}  // namespace param_names

/// Kaiming-uniform (bound √(6/fan_in)) weights and zero biases, seeded from cfg.seed.
Params init_params(const ModelConfig& cfg);

/// Zero tensors with the shapes of `params`.
Params zeros_like(const Params& params);

/// Throws DimensionError unless `params` holds exactly the tensors init_params(cfg) would create.
void check_params(const Params& params, const ModelConfig& cfg);

struct StageRecord {
  LayerTape conv;
  LayerTape relu;
  std::optional<LayerTape> pool;
  Tensor output;
};

struct BranchRecord {
  std::optional<LayerTape> attention;
  LayerTape pool;
  LayerTape classifier;
  Tensor logits;
};

/// Everything a backward pass needs from one forward pass over one image.
struct ForwardRecord {
  std::size_t label = 0;
  std::vector<StageRecord> stages;
  std::vector<BranchRecord> ds;
  std::optional<LayerTape> backbone_attention;
  LayerTape stripes;
  std::vector<LayerTape> reduce;  // one tape per part, shared weights
  std::vector<Tensor> reduced_parts;
  std::vector<LayerTape> part_classifiers;
  std::vector<Tensor> part_logits;
  LayerTape main_classifier;
  Tensor global_logits;
};

struct Losses {
  std::vector<double> ds;
  std::vector<double> parts;
  double main = 0.0;
};

struct TrainForward {
  ForwardRecord record;
  Losses losses;
};

/// Forward pass through backbone, deep-supervision branches, part heads and the main head,
/// with a cross-entropy loss per head.
TrainForward forward_train(const Params& params, const ModelConfig& cfg, const Tensor& image, std::size_t label);

/// (1−λ)·Σ parts + λ·Σ ds + λ·main.
double total_loss(const Losses& losses, double lambda);

/// Coefficients applied to each loss group in the backward pass.
struct LossWeights {
  double parts = 0.8;
  double ds = 0.2;
  double main = 0.2;

  static LossWeights from_lambda(double lambda) { return {1.0 - lambda, lambda, lambda}; }
};

/// Gradient of parts·Σ l_p + ds·Σ l_s + main·l_F with respect to every parameter.
Params backward_weighted(const Params& params, const ModelConfig& cfg, const ForwardRecord& record,
                         const LossWeights& weights);

/// Gradient of total_loss(·, λ).
Params backward(const Params& params, const ModelConfig& cfg, const ForwardRecord& record, double lambda);

/// Classic momentum: v ← momentum·v + g, w ← w − lr·v. An empty velocity is treated as zeros.
void sgd_step(Params& params, const Params& grads, double lr, double momentum, Params& velocity);

/// Concatenated reduced part vectors in stripe order (length parts·reduced_dim).
Tensor extract_embedding(const Params& params, const ModelConfig& cfg, const Tensor& image);

/// Output feature map of every backbone stage.
std::vector<Tensor> stage_features(const Params& params, const ModelConfig& cfg, const Tensor& image);

/// Class index predicted by the main head.
std::size_t predict_class(const Params& params, const ModelConfig& cfg, const Tensor& image);

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double lr = 0.02;
  double momentum = 0.9;
  /// The learning rate drops by lr_decay once this fraction of the epochs has elapsed.
  double lr_drop_fraction = 2.0 / 3.0;
  double lr_decay = 0.1;
  bool augment = true;
  std::uint64_t seed = 0;
};

/// Learning rate in effect for a zero-based epoch under the two-phase schedule.
double scheduled_lr(const TrainOptions& options, std::size_t epoch);

struct EpochLog {
  std::size_t epoch = 0;
  double total = 0.0;
  double parts = 0.0;  // mean over samples of Σ part losses
  double ds = 0.0;     // mean over samples of Σ deep-supervision losses
  double main = 0.0;
  double accuracy = 0.0;  // main-head accuracy on the (augmented) training batches
};

struct TrainResult {
  Params params;
  std::vector<EpochLog> log;
};

/// Mini-batch SGD over shuffled samples; the sample identities are the class labels.
TrainResult train(const ModelConfig& cfg, std::span<const Sample> dataset, const TrainOptions& options);

/// Fraction of samples whose identity the main head predicts.
double classification_accuracy(const Params& params, const ModelConfig& cfg, std::span<const Sample> samples);

}  // namespace pfsa
