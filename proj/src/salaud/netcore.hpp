#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "salaud/tensor.hpp"

namespace salaud {

enum class LayerKind { Conv2d, Relu, MaxPool2x2, GlobalAvgPool, Dense, Sigmoid };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct Layer {
  LayerKind kind = LayerKind::Relu;
  int layer_id = 0;
  Shape input_shape;
  Shape output_shape;
  // conv2d: out_channels x in_channels x k x k; dense: outputs x inputs.
  Tensor weights;
  Tensor bias;
  // conv2d only: fixed value subtracted from every input element (input centering)
  float input_offset = 0.0f;

  bool has_parameters() const { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
};

/// Ordered layer list realizing the classifier. The last layer is always the
/// probability head (`Sigmoid`); the layer before it emits the class logits.
///
/// The head maps logits to class probabilities p_c = 1 / (1 + sum_{j != c}
/// exp(l_j - l_c)); with two classes this is sigmoid(l_c - l_other).
class Network {
 public:
  Network() = default;

  /// Validates that consecutive shapes compose, that parameter tensors match
  /// them, and that the head is well formed. Layer ids are reassigned 0..n-1.
  Network(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(int layer_id) const;
  int layer_count() const { return static_cast<int>(layers_.size()); }
  int num_classes() const { return num_classes_; }

  /// Id of the layer whose output is the logit vector.
  int logits_layer() const { return layer_count() - 2; }

  /// Id of the last conv2d layer, or -1 when there is none.
  int last_conv_layer() const;

  /// Copy with one layer's parameters replaced (shapes must match).
  Network with_parameters(int layer_id, Tensor weights, Tensor bias) const;

  std::size_t parameter_count() const;

  friend bool operator==(const Network& a, const Network& b);

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  int num_classes_ = 0;
};

/// Output shape of `kind` applied to `input`, or a spec error.
Shape infer_output_shape(LayerKind kind, const Shape& input, int out_channels, int kernel, int units);

struct ActivationTrace {
  // activations[0] is the input, activations[i + 1] the output of layer i.
  std::vector<Tensor> activations;
  int logits_index = 0;

  const Tensor& logits() const { return activations.at(static_cast<std::size_t>(logits_index)); }
  const Tensor& probabilities() const { return activations.back(); }
};

template <typename T>
BasicTensor<T> forward_layer(const Layer& layer, const BasicTensor<T>& input);

extern template BasicTensor<float> forward_layer(const Layer&, const BasicTensor<float>&);
extern template BasicTensor<double> forward_layer(const Layer&, const BasicTensor<double>&);

ActivationTrace forward_pass(const Network& network, const Tensor& image);

struct ParameterGradient {
  Tensor weights;
  Tensor bias;
};

/// Gradient of a scalar with respect to every activation (indexed like
/// ActivationTrace::activations) and optionally every parameter.
struct BackwardResult {
  std::vector<Tensor> activations;
  std::vector<ParameterGradient> parameters;
};

/// Vector-Jacobian product through one layer. Accumulates parameter gradients
/// into `param_grad` when it is non-null.
Tensor backward_layer(const Layer& layer, const Tensor& input, const Tensor& output,
                      const Tensor& grad_output, ParameterGradient* param_grad);

/// Back-propagates `logit_grad` (length C, the upstream gradient at the logits)
/// through the network. Activations after the logits receive zero tensors.
BackwardResult backpropagate(const Network& network, const ActivationTrace& trace,
                             const Tensor& logit_grad, bool with_parameters);

/// dS_c/dA for every activation A in the trace, S_c the pre-head logit.
std::vector<Tensor> backward_to_feature_maps(const Network& network, const ActivationTrace& trace,
                                             int class_index);

struct FiniteDifference {
  TensorD gradient;
  // Entries where the one-sided differences disagree: a ReLU or max-pool
  // switch lies within `step`, so the central difference is not a derivative.
  std::vector<std::uint8_t> nonsmooth;
  std::size_t nonsmooth_count = 0;
};

/// Central-difference estimate of dS_c/dA at activations[activation_index]
/// (0 = input, k = output of layer k - 1). The cached activation is perturbed
/// and the network suffix is re-run in double precision.
FiniteDifference finite_difference_logit_grad(const Network& network, const Tensor& image,
                                              int activation_index, int class_index, double step);

}  // namespace salaud
