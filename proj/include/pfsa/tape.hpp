#pragma once

#include <cstddef>
#include <string_view>
#include <variant>

#include "pfsa/errors.hpp"
#include "pfsa/tensor.hpp"

namespace pfsa {

enum class LayerKind { conv2d, relu, fully_connected, avg_pool2, spatial_attention, global_pool, stripe_pool };

std::string_view layer_kind_name(LayerKind kind) noexcept;

enum class PoolMode { mean, sum };

struct ConvState {
  Tensor input;
  Tensor kernels;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

struct ReluState {
  Tensor input;
};

struct FcState {
  Tensor input;
  Tensor weights;
};

struct AvgPool2State {
  Shape input_shape;
};

struct AttentionState {
  Tensor input;
  Tensor weights;  // p, H×W
};

struct GlobalPoolState {
  Shape input_shape;
  PoolMode mode = PoolMode::mean;
};

struct StripePoolState {
  Shape input_shape;
  std::size_t parts = 1;
};

/// Cached forward state of one layer, consumed by that layer's backward function.
class LayerTape {
 public:
  using State = std::variant<ConvState, ReluState, FcState, AvgPool2State, AttentionState, GlobalPoolState,
                             StripePoolState>;

  LayerTape() = default;
  template <class S>
  explicit LayerTape(S state) : state_(std::move(state)) {}

  LayerKind kind() const noexcept { return static_cast<LayerKind>(state_.index()); }

  /// The cached state, or ContractError when this tape came from a different layer kind.
  template <class S>
  const S& as() const {
    if (const S* s = std::get_if<S>(&state_)) return *s;
    throw ContractError("layer tape kind mismatch: tape holds '" + std::string(layer_kind_name(kind())) + "'");
  }

 private:
  State state_;
};

/// Output of a single-tensor layer together with its tape.
struct LayerOutput {
  Tensor out;
  LayerTape tape;
};

}  // namespace pfsa
