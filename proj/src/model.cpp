#include "pfsa/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pfsa/attention.hpp"
#include "pfsa/dataset.hpp"
#include "pfsa/errors.hpp"
#include "pfsa/layers.hpp"

namespace pfsa {

namespace param_names {
std::string stage_weight(std::size_t stage) { return "stage" + std::to_string(stage) + ".weight"; }
std::string stage_bias(std::size_t stage) { return "stage" + std::to_string(stage) + ".bias"; }
std::string ds_weight(std::size_t branch) { return "ds" + std::to_string(branch) + ".weight"; }
std::string ds_bias(std::size_t branch) { return "ds" + std::to_string(branch) + ".bias"; }
std::string part_weight(std::size_t part) { return "part" + std::to_string(part) + ".weight"; }
std::string part_bias(std::size_t part) { return "part" + std::to_string(part) + ".bias"; }
}  // namespace param_names

std::vector<Shape> ModelConfig::stage_shapes() const {
  std::vector<Shape> shapes;
  std::size_t c = input_channels, h = input_height, w = input_width;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    if (st.out_channels == 0) throw ConfigError("stage " + std::to_string(s) + " has zero output channels");
    h = conv_output_extent(h, st.kernel, st.stride, st.pad);
    w = conv_output_extent(w, st.kernel, st.stride, st.pad);
    c = st.out_channels;
    if (st.downsample) {
      if (h < 2 || w < 2) {
        throw ConfigError("stage " + std::to_string(s) + " cannot downsample a " + std::to_string(h) + "x" +
                          std::to_string(w) + " map");
      }
      h /= 2;
      w /= 2;
    }
    shapes.push_back({c, h, w});
  }
  return shapes;
}

void ModelConfig::validate() const {
  if (stages.empty()) throw ConfigError("model needs at least one stage");
  if (input_channels == 0 || input_height == 0 || input_width == 0) throw ConfigError("input dimensions must be positive");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (reduced_dim == 0) throw ConfigError("reduced_dim must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1], got " + std::to_string(lambda));
  const auto shapes = stage_shapes();
  const std::size_t final_height = shapes.back()[1];
  if (parts == 0 || parts > final_height) {
    throw ConfigError("parts = " + std::to_string(parts) + " must be in [1, " + std::to_string(final_height) +
                      "] (final feature-map height)");
  }
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::size_t argmax(const Tensor& v) {
  const auto data = v.data();
  return static_cast<std::size_t>(std::max_element(data.begin(), data.end()) - data.begin());
}

void accumulate(Params& into, const Params& grads, double scale) {
  for (const auto& [name, g] : grads) {
    auto& dst = into.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
  }
}

void add_into(Tensor& dst, const Tensor& src) { dst += src; }

/// Forward through backbone and part path; heads are optional so embedding extraction can skip them.
ForwardRecord run_forward(const Params& params, const ModelConfig& cfg, const Tensor& image, bool with_heads) {
  require_same_shape(image.shape(), cfg.input_shape(), "model input");
  ForwardRecord rec;
  rec.stages.reserve(cfg.stages.size());

  Tensor x = image;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    StageRecord sr;
    auto conv = conv2d_forward(x, params.at(param_names::stage_weight(s)), params.at(param_names::stage_bias(s)),
                               st.stride, st.pad);
    sr.conv = std::move(conv.tape);
    auto act = relu_forward(conv.out);
    sr.relu = std::move(act.tape);
    if (st.downsample) {
      auto pooled = avg_pool2_forward(act.out);
      sr.pool = std::move(pooled.tape);
      sr.output = std::move(pooled.out);
    } else {
      sr.output = std::move(act.out);
    }
    x = sr.output;
    rec.stages.push_back(std::move(sr));
  }

  if (with_heads) {
    for (std::size_t b = 0; b < cfg.num_ds_branches(); ++b) {
      BranchRecord br;
      const Tensor& f = rec.stages[b].output;
      LayerOutput pooled;
      if (cfg.sa_on_ds) {
        auto att = sa_forward(f);
        br.attention = std::move(att.tape);
        pooled = gap_forward(att.out, PoolMode::sum);
      } else {
        pooled = gap_forward(f, PoolMode::mean);
      }
      br.pool = std::move(pooled.tape);
      auto logits = fc_forward(pooled.out, params.at(param_names::ds_weight(b)), params.at(param_names::ds_bias(b)));
      br.classifier = std::move(logits.tape);
      br.logits = std::move(logits.out);
      rec.ds.push_back(std::move(br));
    }
  }

  Tensor last = rec.stages.back().output;
  if (cfg.sa_on_backbone) {
    auto att = sa_forward(last);
    rec.backbone_attention = std::move(att.tape);
    last = std::move(att.out);
  }
  auto stripes = stripe_pool(last, cfg.parts);
  rec.stripes = std::move(stripes.tape);
  const Tensor& rw = params.at(param_names::reduce_weight);
  const Tensor& rb = params.at(param_names::reduce_bias);
  for (const auto& part : stripes.parts) {
    auto reduced = fc_forward(part, rw, rb);
    rec.reduce.push_back(std::move(reduced.tape));
    rec.reduced_parts.push_back(std::move(reduced.out));
  }

  if (with_heads) {
    Tensor global({cfg.reduced_dim});
    for (std::size_t s = 0; s < cfg.parts; ++s) {
      auto logits = fc_forward(rec.reduced_parts[s], params.at(param_names::part_weight(s)),
                               params.at(param_names::part_bias(s)));
      rec.part_classifiers.push_back(std::move(logits.tape));
      rec.part_logits.push_back(std::move(logits.out));
      global += rec.reduced_parts[s];
    }
    global *= 1.0 / static_cast<double>(cfg.parts);
    auto logits = fc_forward(global, params.at(param_names::main_weight), params.at(param_names::main_bias));
    rec.main_classifier = std::move(logits.tape);
    rec.global_logits = std::move(logits.out);
  }
  return rec;
}

}  // namespace

Params init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Params p;
  std::size_t c_in = cfg.input_channels;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    p[param_names::stage_weight(s)] =
        kaiming_uniform({st.out_channels, c_in, st.kernel, st.kernel}, c_in * st.kernel * st.kernel, rng);
    p[param_names::stage_bias(s)] = Tensor({st.out_channels});
    c_in = st.out_channels;
  }
  for (std::size_t b = 0; b < cfg.num_ds_branches(); ++b) {
    const std::size_t c = cfg.stages[b].out_channels;
    p[param_names::ds_weight(b)] = kaiming_uniform({cfg.num_classes, c}, c, rng);
    p[param_names::ds_bias(b)] = Tensor({cfg.num_classes});
  }
  const std::size_t c_last = cfg.stages.back().out_channels;
  p[param_names::reduce_weight] = kaiming_uniform({cfg.reduced_dim, c_last}, c_last, rng);
  p[param_names::reduce_bias] = Tensor({cfg.reduced_dim});
  for (std::size_t s = 0; s < cfg.parts; ++s) {
    p[param_names::part_weight(s)] = kaiming_uniform({cfg.num_classes, cfg.reduced_dim}, cfg.reduced_dim, rng);
    p[param_names::part_bias(s)] = Tensor({cfg.num_classes});
  }
  p[param_names::main_weight] = kaiming_uniform({cfg.num_classes, cfg.reduced_dim}, cfg.reduced_dim, rng);
  p[param_names::main_bias] = Tensor({cfg.num_classes});
  return p;
}

Params zeros_like(const Params& params) {
  Params z;
  for (const auto& [name, t] : params) z.emplace(name, Tensor(t.shape()));
  return z;
}

void check_params(const Params& params, const ModelConfig& cfg) {
  ModelConfig shape_cfg = cfg;
  const Params expected = init_params(shape_cfg);
  for (const auto& [name, t] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw DimensionError("parameter '" + name + "' is missing");
    if (it->second.shape() != t.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                           shape_string(t.shape()));
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.contains(name)) throw DimensionError("unexpected parameter '" + name + "'");
  }
}

TrainForward forward_train(const Params& params, const ModelConfig& cfg, const Tensor& image, std::size_t label) {
  if (label >= cfg.num_classes) {
    throw ContractError("label " + std::to_string(label) + " out of range for " + std::to_string(cfg.num_classes) +
                        " classes");
  }
  TrainForward out{run_forward(params, cfg, image, true), {}};
  out.record.label = label;
  for (const auto& br : out.record.ds) out.losses.ds.push_back(softmax_ce(br.logits, label).loss);
  for (const auto& logits : out.record.part_logits) out.losses.parts.push_back(softmax_ce(logits, label).loss);
  out.losses.main = softmax_ce(out.record.global_logits, label).loss;
  return out;
}

double total_loss(const Losses& losses, double lambda) {
  const double parts = std::accumulate(losses.parts.begin(), losses.parts.end(), 0.0);
  const double ds = std::accumulate(losses.ds.begin(), losses.ds.end(), 0.0);
  return (1.0 - lambda) * parts + lambda * ds + lambda * losses.main;
}

Params backward_weighted(const Params& params, const ModelConfig& cfg, const ForwardRecord& rec,
                         const LossWeights& weights) {
  if (rec.stages.size() != cfg.stages.size() || rec.ds.size() != cfg.num_ds_branches() ||
      rec.part_logits.size() != cfg.parts || rec.reduce.size() != cfg.parts) {
    throw ContractError("forward record does not match the model configuration");
  }
  Params grads = zeros_like(params);
  std::vector<Tensor> grad_maps;
  for (const auto& sr : rec.stages) grad_maps.emplace_back(sr.output.shape());

  auto head_backward = [&](const LayerTape& tape, const Tensor& logits, double weight, const std::string& w_name,
                           const std::string& b_name) {
    auto ce = softmax_ce(logits, rec.label);
    ce.grad_logits *= weight;
    auto g = fc_backward(tape, ce.grad_logits);
    add_into(grads.at(w_name), g.weights);
    add_into(grads.at(b_name), g.bias);
    return std::move(g.input);
  };

  // Main head sees the mean of the reduced part vectors.
  std::vector<Tensor> grad_reduced(cfg.parts, Tensor({cfg.reduced_dim}));
  {
    Tensor g_global = head_backward(rec.main_classifier, rec.global_logits, weights.main, param_names::main_weight,
                                    param_names::main_bias);
    g_global *= 1.0 / static_cast<double>(cfg.parts);
    for (auto& g : grad_reduced) g += g_global;
  }
  for (std::size_t s = 0; s < cfg.parts; ++s) {
    grad_reduced[s] += head_backward(rec.part_classifiers[s], rec.part_logits[s], weights.parts,
                                     param_names::part_weight(s), param_names::part_bias(s));
  }

  std::vector<Tensor> grad_pooled;
  grad_pooled.reserve(cfg.parts);
  for (std::size_t s = 0; s < cfg.parts; ++s) {
    auto g = fc_backward(rec.reduce[s], grad_reduced[s]);
    add_into(grads.at(param_names::reduce_weight), g.weights);
    add_into(grads.at(param_names::reduce_bias), g.bias);
    grad_pooled.push_back(std::move(g.input));
  }
  Tensor g_last = stripe_pool_backward(rec.stripes, grad_pooled);
  if (rec.backbone_attention) g_last = sa_backward(*rec.backbone_attention, g_last);
  grad_maps.back() += g_last;

  for (std::size_t b = 0; b < rec.ds.size(); ++b) {
    const auto& br = rec.ds[b];
    Tensor g = head_backward(br.classifier, br.logits, weights.ds, param_names::ds_weight(b), param_names::ds_bias(b));
    g = gap_backward(br.pool, g);
    if (br.attention) g = sa_backward(*br.attention, g);
    grad_maps[b] += g;
  }

  for (std::size_t s = rec.stages.size(); s-- > 0;) {
    const auto& sr = rec.stages[s];
    Tensor g = std::move(grad_maps[s]);
    if (sr.pool) g = avg_pool2_backward(*sr.pool, g);
    g = relu_backward(sr.relu, g);
    auto cg = conv2d_backward(sr.conv, g);
    add_into(grads.at(param_names::stage_weight(s)), cg.kernels);
    add_into(grads.at(param_names::stage_bias(s)), cg.bias);
    if (s > 0) grad_maps[s - 1] += cg.input;
  }
  return grads;
}

Params backward(const Params& params, const ModelConfig& cfg, const ForwardRecord& record, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
  return backward_weighted(params, cfg, record, LossWeights::from_lambda(lambda));
}

void sgd_step(Params& params, const Params& grads, double lr, double momentum, Params& velocity) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw DimensionError("sgd_step: gradient for unknown parameter '" + name + "'");
    require_same_shape(it->second.shape(), g.shape(), "sgd_step");
    auto [vit, inserted] = velocity.try_emplace(name, g.shape());
    require_same_shape(vit->second.shape(), g.shape(), "sgd_step velocity");
    Tensor& v = vit->second;
    Tensor& w = it->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
  }
}

Tensor extract_embedding(const Params& params, const ModelConfig& cfg, const Tensor& image) {
  const ForwardRecord rec = run_forward(params, cfg, image, false);
  std::vector<double> values;
  values.reserve(cfg.parts * cfg.reduced_dim);
  for (const auto& part : rec.reduced_parts) values.insert(values.end(), part.data().begin(), part.data().end());
  return Tensor::vector(std::move(values));
}

std::vector<Tensor> stage_features(const Params& params, const ModelConfig& cfg, const Tensor& image) {
  ForwardRecord rec = run_forward(params, cfg, image, false);
  std::vector<Tensor> maps;
  for (auto& sr : rec.stages) maps.push_back(std::move(sr.output));
  return maps;
}

std::size_t predict_class(const Params& params, const ModelConfig& cfg, const Tensor& image) {
  return argmax(run_forward(params, cfg, image, true).global_logits);
}

double scheduled_lr(const TrainOptions& options, std::size_t epoch) {
  const auto drop = static_cast<std::size_t>(std::llround(options.lr_drop_fraction * static_cast<double>(options.epochs)));
  return epoch >= drop ? options.lr * options.lr_decay : options.lr;
}

TrainResult train(const ModelConfig& cfg, std::span<const Sample> dataset, const TrainOptions& options) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("training set is empty");
  if (options.batch_size == 0) throw ConfigError("batch_size must be positive");
  for (const auto& s : dataset) {
    if (s.identity < 0 || static_cast<std::size_t>(s.identity) >= cfg.num_classes) {
      throw ConfigError("training label " + std::to_string(s.identity) + " out of range for " +
                        std::to_string(cfg.num_classes) + " classes");
    }
  }

  TrainResult result{init_params(cfg), {}};
  Params velocity;
  std::seed_seq seq{options.seed, std::uint64_t{0x7261696e}};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = scheduled_lr(options, epoch);
    EpochLog entry;
    entry.epoch = epoch;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      Params batch_grads = zeros_like(result.params);
      for (std::size_t n = start; n < stop; ++n) {
        const Sample& sample = dataset[order[n]];
        const Tensor image = options.augment ? augment(sample.image, rng) : sample.image;
        const auto label = static_cast<std::size_t>(sample.identity);
        const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
        std::optional<TrainForward> attempt;
        try {
          attempt = forward_train(result.params, cfg, image, label);
        } catch (const ContractError& e) {
          throw TrainingError("forward pass failed at " + where + ": " + e.what());
        }
        auto& fwd = *attempt;
        const double total = total_loss(fwd.losses, cfg.lambda);
        if (!std::isfinite(total)) throw TrainingError("non-finite loss at " + where);
        entry.total += total;
        entry.parts += std::accumulate(fwd.losses.parts.begin(), fwd.losses.parts.end(), 0.0);
        entry.ds += std::accumulate(fwd.losses.ds.begin(), fwd.losses.ds.end(), 0.0);
        entry.main += fwd.losses.main;
        if (argmax(fwd.record.global_logits) == label) ++correct;
        accumulate(batch_grads, backward(result.params, cfg, fwd.record, cfg.lambda), 1.0);
      }
      for (auto& [name, g] : batch_grads) g *= 1.0 / static_cast<double>(stop - start);
      sgd_step(result.params, batch_grads, lr, options.momentum, velocity);
    }
    const auto n = static_cast<double>(dataset.size());
    entry.total /= n;
    entry.parts /= n;
    entry.ds /= n;
    entry.main /= n;
    entry.accuracy = static_cast<double>(correct) / n;
    result.log.push_back(entry);
  }
  return result;
}

double classification_accuracy(const Params& params, const ModelConfig& cfg, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (predict_class(params, cfg, s.image) == static_cast<std::size_t>(s.identity)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace pfsa
