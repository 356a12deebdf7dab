#include "salaud/netcore.hpp"

#include <algorithm>
#include <cmath>

namespace salaud {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Dense: return "dense";
    case LayerKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::Conv2d, LayerKind::Relu, LayerKind::MaxPool2x2, LayerKind::GlobalAvgPool,
                      LayerKind::Dense, LayerKind::Sigmoid}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorCode::Spec, "unknown layer kind '" + std::string(name) + "'");
}

Shape infer_output_shape(LayerKind kind, const Shape& in, int out_channels, int kernel, int units) {
  const std::string where = std::string(to_string(kind)) + " on input " + shape_string(in);
  switch (kind) {
    case LayerKind::Conv2d: {
      require(in.size() == 3, ErrorCode::Spec, where + ": needs a CxHxW input");
      require(kernel >= 1 && out_channels >= 1, ErrorCode::Spec, where + ": bad kernel/channels");
      const int h = in[1] - kernel + 1;
      const int w = in[2] - kernel + 1;
      require(h >= 1 && w >= 1, ErrorCode::Spec, where + ": kernel larger than input");
      return {out_channels, h, w};
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::MaxPool2x2:
      require(in.size() == 3 && in[1] >= 2 && in[2] >= 2, ErrorCode::Spec, where + ": needs CxHxW with H,W >= 2");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::GlobalAvgPool:
      require(in.size() == 3, ErrorCode::Spec, where + ": needs a CxHxW input");
      return {in[0]};
    case LayerKind::Dense:
      require(in.size() == 1, ErrorCode::Spec, where + ": needs a flat input");
      require(units >= 1, ErrorCode::Spec, where + ": needs units >= 1");
      return {units};
    case LayerKind::Sigmoid:
      require(in.size() == 1, ErrorCode::Spec, where + ": needs a flat input");
      return in;
  }
  fail(ErrorCode::Spec, "unreachable layer kind");
}

Network::Network(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  require(input_shape_.size() == 3, ErrorCode::Spec, "network input must be CxHxW");
  require(layers_.size() >= 2, ErrorCode::Spec, "network needs at least a logit layer and a head");
  Shape current = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    l.layer_id = static_cast<int>(i);
    l.input_shape = current;
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    require(std::isfinite(l.input_offset) && (l.input_offset == 0.0f || l.kind == LayerKind::Conv2d), ErrorCode::Spec,
            where + ": input offset must be finite and is only supported on conv2d");
    if (l.kind == LayerKind::Conv2d) {
      const Shape& ws = l.weights.shape();
      require(ws.size() == 4 && ws[2] == ws[3] && current.size() == 3 && ws[1] == current[0],
              ErrorCode::Spec, where + ": weight shape " + shape_string(ws) + " incompatible with " +
                                   shape_string(current));
      l.output_shape = infer_output_shape(l.kind, current, ws[0], ws[2], 0);
      require(l.bias.shape() == Shape{ws[0]}, ErrorCode::Spec, where + ": bias shape mismatch");
    } else if (l.kind == LayerKind::Dense) {
      const Shape& ws = l.weights.shape();
      require(ws.size() == 2 && current.size() == 1 && ws[1] == current[0], ErrorCode::Spec,
              where + ": weight shape " + shape_string(ws) + " incompatible with " + shape_string(current));
      l.output_shape = infer_output_shape(l.kind, current, 0, 0, ws[0]);
      require(l.bias.shape() == Shape{ws[0]}, ErrorCode::Spec, where + ": bias shape mismatch");
    } else {
      require(l.weights.empty() && l.bias.empty(), ErrorCode::Spec, where + ": parameterless layer carries weights");
      l.output_shape = infer_output_shape(l.kind, current, 0, 0, 0);
    }
    current = l.output_shape;
  }
  require(layers_.back().kind == LayerKind::Sigmoid, ErrorCode::Spec, "network must end with the sigmoid head");
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    require(layers_[i].kind != LayerKind::Sigmoid, ErrorCode::Spec, "sigmoid head must be the final layer");
  }
  num_classes_ = current.at(0);
  require(num_classes_ >= 2, ErrorCode::Spec, "classifier needs at least two classes");
}

const Layer& Network::layer(int layer_id) const {
  require(layer_id >= 0 && layer_id < layer_count(), ErrorCode::Index,
          "layer id " + std::to_string(layer_id) + " out of range [0, " + std::to_string(layer_count()) + ")");
  return layers_[static_cast<std::size_t>(layer_id)];
}

int Network::last_conv_layer() const {
  for (int i = layer_count() - 1; i >= 0; --i) {
    if (layers_[static_cast<std::size_t>(i)].kind == LayerKind::Conv2d) return i;
  }
  return -1;
}

Network Network::with_parameters(int layer_id, Tensor weights, Tensor bias) const {
  const Layer& l = layer(layer_id);
  require(l.has_parameters(), ErrorCode::InvalidArgument, "layer " + std::to_string(layer_id) + " has no parameters");
  require(weights.shape() == l.weights.shape() && bias.shape() == l.bias.shape(), ErrorCode::InputShape,
          "replacement parameters for layer " + std::to_string(layer_id) + " have the wrong shape");
  Network copy = *this;
  copy.layers_[static_cast<std::size_t>(layer_id)].weights = std::move(weights);
  copy.layers_[static_cast<std::size_t>(layer_id)].bias = std::move(bias);
  return copy;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

bool operator==(const Network& a, const Network& b) {
  if (a.input_shape_ != b.input_shape_ || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const Layer& x = a.layers_[i];
    const Layer& y = b.layers_[i];
    if (x.kind != y.kind || x.input_offset != y.input_offset || !(x.weights == y.weights) || !(x.bias == y.bias)) {
      return false;
    }
  }
  return true;
}

namespace {

template <typename T>
BasicTensor<T> conv2d_forward(const Layer& layer, const BasicTensor<T>& in) {
  const Shape& ws = layer.weights.shape();
  const int cout = ws[0], cin = ws[1], k = ws[2];
  const int ho = layer.output_shape[1], wo = layer.output_shape[2];
  BasicTensor<T> out(layer.output_shape);
  const float* w = layer.weights.data().data();
  const std::size_t fan_in = static_cast<std::size_t>(cin) * k * k;
  for (int co = 0; co < cout; ++co) {
    T* plane = &out.at(co, 0, 0);
    // w . (x - c) + b == w . x + (b - c * sum(w))
    T start = static_cast<T>(layer.bias[co]);
    if (layer.input_offset != 0.0f) {
      T wsum = 0;
      for (std::size_t i = 0; i < fan_in; ++i) wsum += static_cast<T>(w[static_cast<std::size_t>(co) * fan_in + i]);
      start -= static_cast<T>(layer.input_offset) * wsum;
    }
    std::fill(plane, plane + static_cast<std::size_t>(ho) * wo, start);
    for (int ci = 0; ci < cin; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T wv = static_cast<T>(w[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx]);
          for (int y = 0; y < ho; ++y) {
            T* row = plane + static_cast<std::size_t>(y) * wo;
            const T* src = &in.at(ci, y + ky, kx);
            for (int x = 0; x < wo; ++x) row[x] += wv * src[x];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool_forward(const Layer& layer, const BasicTensor<T>& in) {
  BasicTensor<T> out(layer.output_shape);
  const int c = out.channels(), h = out.height(), w = out.width();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        T m = in.at(ch, 2 * y, 2 * x);
        m = std::max(m, in.at(ch, 2 * y, 2 * x + 1));
        m = std::max(m, in.at(ch, 2 * y + 1, 2 * x));
        m = std::max(m, in.at(ch, 2 * y + 1, 2 * x + 1));
        out.at(ch, y, x) = m;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> gap_forward(const Layer& layer, const BasicTensor<T>& in) {
  BasicTensor<T> out(layer.output_shape);
  const std::size_t z = static_cast<std::size_t>(in.height()) * in.width();
  for (int ch = 0; ch < in.channels(); ++ch) {
    const T* p = &in.at(ch, 0, 0);
    T sum = 0;
    for (std::size_t i = 0; i < z; ++i) sum += p[i];
    out[static_cast<std::size_t>(ch)] = sum / static_cast<T>(z);
  }
  return out;
}

template <typename T>
BasicTensor<T> dense_forward(const Layer& layer, const BasicTensor<T>& in) {
  const int outs = layer.weights.shape()[0], ins = layer.weights.shape()[1];
  BasicTensor<T> out(layer.output_shape);
  for (int o = 0; o < outs; ++o) {
    const float* row = &layer.weights[static_cast<std::size_t>(o) * ins];
    T sum = static_cast<T>(layer.bias[static_cast<std::size_t>(o)]);
    for (int i = 0; i < ins; ++i) sum += static_cast<T>(row[i]) * in[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = sum;
  }
  return out;
}

template <typename T>
BasicTensor<T> head_forward(const BasicTensor<T>& logits) {
  BasicTensor<T> out(logits.shape());
  const std::size_t n = logits.size();
  for (std::size_t c = 0; c < n; ++c) {
    T denom = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != c) denom += std::exp(logits[j] - logits[c]);
    }
    out[c] = T{1} / denom;
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> forward_layer(const Layer& layer, const BasicTensor<T>& input) {
  require(input.shape() == layer.input_shape, ErrorCode::InputShape,
          "layer " + std::to_string(layer.layer_id) + " expects " + shape_string(layer.input_shape) + ", got " +
              shape_string(input.shape()));
  switch (layer.kind) {
    case LayerKind::Conv2d: return conv2d_forward(layer, input);
    case LayerKind::Relu: {
      BasicTensor<T> out = input;
      for (T& v : out.data()) v = v > T{0} ? v : T{0};
      return out;
    }
    case LayerKind::MaxPool2x2: return maxpool_forward(layer, input);
    case LayerKind::GlobalAvgPool: return gap_forward(layer, input);
    case LayerKind::Dense: return dense_forward(layer, input);
    case LayerKind::Sigmoid: return head_forward(input);
  }
  fail(ErrorCode::Spec, "unreachable layer kind");
}

template BasicTensor<float> forward_layer(const Layer&, const BasicTensor<float>&);
template BasicTensor<double> forward_layer(const Layer&, const BasicTensor<double>&);

ActivationTrace forward_pass(const Network& network, const Tensor& image) {
  require(image.shape() == network.input_shape(), ErrorCode::InputShape,
          "image shape " + shape_string(image.shape()) + " does not match network input " +
              shape_string(network.input_shape()));
  require(image.all_finite(), ErrorCode::Domain, "image contains non-finite values");
  ActivationTrace trace;
  trace.activations.reserve(network.layers().size() + 1);
  trace.activations.push_back(image);
  for (const Layer& layer : network.layers()) {
    trace.activations.push_back(forward_layer(layer, trace.activations.back()));
    require(trace.activations.back().all_finite(), ErrorCode::Domain,
            "non-finite activation after layer " + std::to_string(layer.layer_id));
  }
  trace.logits_index = network.logits_layer() + 1;
  return trace;
}

Tensor backward_layer(const Layer& layer, const Tensor& in, const Tensor& out, const Tensor& g,
                      ParameterGradient* pg) {
  Tensor gin(layer.input_shape);
  switch (layer.kind) {
    case LayerKind::Conv2d: {
      const Shape& ws = layer.weights.shape();
      const int cout = ws[0], cin = ws[1], k = ws[2];
      const int ho = layer.output_shape[1], wo = layer.output_shape[2];
      const float* w = layer.weights.data().data();
      for (int co = 0; co < cout; ++co) {
        const float* gp = &g.at(co, 0, 0);
        float gsum = 0.0f;
        for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) gsum += gp[i];
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const std::size_t widx = ((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx;
              const float wv = w[widx];
              float acc = 0.0f;
              for (int y = 0; y < ho; ++y) {
                const float* grow = gp + static_cast<std::size_t>(y) * wo;
                float* dst = &gin.at(ci, y + ky, kx);
                const float* src = &in.at(ci, y + ky, kx);
                for (int x = 0; x < wo; ++x) {
                  dst[x] += wv * grow[x];
                  acc += grow[x] * src[x];
                }
              }
              if (pg) pg->weights[widx] += acc - layer.input_offset * gsum;
            }
          }
        }
        if (pg) pg->bias[static_cast<std::size_t>(co)] += gsum;
      }
      break;
    }
    case LayerKind::Relu:
      for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = in[i] > 0.0f ? g[i] : 0.0f;
      break;
    case LayerKind::MaxPool2x2: {
      for (int ch = 0; ch < out.channels(); ++ch) {
        for (int y = 0; y < out.height(); ++y) {
          for (int x = 0; x < out.width(); ++x) {
            // Route to the first maximal element in scan order.
            const float m = out.at(ch, y, x);
            int by = 2 * y, bx = 2 * x;
            if (in.at(ch, by, bx) != m) {
              if (in.at(ch, 2 * y, 2 * x + 1) == m) {
                bx = 2 * x + 1;
              } else if (in.at(ch, 2 * y + 1, 2 * x) == m) {
                by = 2 * y + 1;
              } else {
                by = 2 * y + 1;
                bx = 2 * x + 1;
              }
            }
            gin.at(ch, by, bx) += g.at(ch, y, x);
          }
        }
      }
      break;
    }
    case LayerKind::GlobalAvgPool: {
      const std::size_t z = static_cast<std::size_t>(in.height()) * in.width();
      for (int ch = 0; ch < in.channels(); ++ch) {
        const float v = g[static_cast<std::size_t>(ch)] / static_cast<float>(z);
        float* p = &gin.at(ch, 0, 0);
        for (std::size_t i = 0; i < z; ++i) p[i] = v;
      }
      break;
    }
    case LayerKind::Dense: {
      const int outs = layer.weights.shape()[0], ins = layer.weights.shape()[1];
      for (int o = 0; o < outs; ++o) {
        const float go = g[static_cast<std::size_t>(o)];
        const float* row = &layer.weights[static_cast<std::size_t>(o) * ins];
        for (int i = 0; i < ins; ++i) gin[static_cast<std::size_t>(i)] += row[i] * go;
        if (pg) {
          float* grow = &pg->weights[static_cast<std::size_t>(o) * ins];
          for (int i = 0; i < ins; ++i) grow[i] += go * in[static_cast<std::size_t>(i)];
          pg->bias[static_cast<std::size_t>(o)] += go;
        }
      }
      break;
    }
    case LayerKind::Sigmoid: {
      float dot = 0.0f;
      for (std::size_t c = 0; c < out.size(); ++c) dot += g[c] * out[c];
      for (std::size_t j = 0; j < out.size(); ++j) gin[j] = out[j] * (g[j] - dot);
      break;
    }
  }
  return gin;
}

namespace {

void check_trace(const Network& network, const ActivationTrace& trace) {
  require(trace.activations.size() == network.layers().size() + 1, ErrorCode::Consistency,
          "trace length does not match network layer count");
  require(trace.activations.front().shape() == network.input_shape(), ErrorCode::Consistency,
          "trace input does not match network input shape");
  for (const Layer& l : network.layers()) {
    require(trace.activations[static_cast<std::size_t>(l.layer_id) + 1].shape() == l.output_shape,
            ErrorCode::Consistency, "trace activation " + std::to_string(l.layer_id + 1) +
                                        " does not match the network; was it produced by another network?");
  }
}

}  // namespace

BackwardResult backpropagate(const Network& network, const ActivationTrace& trace, const Tensor& logit_grad,
                             bool with_parameters) {
  check_trace(network, trace);
  const int logits = network.logits_layer();
  require(logit_grad.shape() == Shape{network.num_classes()}, ErrorCode::InputShape,
          "logit gradient must have one entry per class");
  BackwardResult result;
  result.activations.resize(trace.activations.size());
  for (std::size_t i = static_cast<std::size_t>(logits) + 2; i < trace.activations.size(); ++i) {
    result.activations[i] = Tensor(trace.activations[i].shape());
  }
  if (with_parameters) {
    result.parameters.resize(network.layers().size());
    for (const Layer& l : network.layers()) {
      if (l.has_parameters()) {
        result.parameters[static_cast<std::size_t>(l.layer_id)] =
            ParameterGradient{Tensor(l.weights.shape()), Tensor(l.bias.shape())};
      }
    }
  }
  result.activations[static_cast<std::size_t>(logits) + 1] = logit_grad;
  for (int i = logits; i >= 0; --i) {
    const Layer& l = network.layers()[static_cast<std::size_t>(i)];
    ParameterGradient* pg =
        with_parameters && l.has_parameters() ? &result.parameters[static_cast<std::size_t>(i)] : nullptr;
    result.activations[static_cast<std::size_t>(i)] =
        backward_layer(l, trace.activations[static_cast<std::size_t>(i)],
                       trace.activations[static_cast<std::size_t>(i) + 1],
                       result.activations[static_cast<std::size_t>(i) + 1], pg);
  }
  return result;
}

std::vector<Tensor> backward_to_feature_maps(const Network& network, const ActivationTrace& trace,
                                             int class_index) {
  require(class_index >= 0 && class_index < network.num_classes(), ErrorCode::Index,
          "class index " + std::to_string(class_index) + " out of range");
  Tensor seed(Shape{network.num_classes()});
  seed[static_cast<std::size_t>(class_index)] = 1.0f;
  return backpropagate(network, trace, seed, false).activations;
}

FiniteDifference finite_difference_logit_grad(const Network& network, const Tensor& image, int activation_index,
                                              int class_index, double step) {
  require(step > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be positive");
  const int logits = network.logits_layer();
  require(activation_index >= 0 && activation_index <= logits + 1, ErrorCode::Index,
          "activation index " + std::to_string(activation_index) + " out of range [0, " +
              std::to_string(logits + 1) + "]");
  require(class_index >= 0 && class_index < network.num_classes(), ErrorCode::Index,
          "class index " + std::to_string(class_index) + " out of range");
  const ActivationTrace trace = forward_pass(network, image);
  const TensorD base = trace.activations[static_cast<std::size_t>(activation_index)].cast<double>();

  auto suffix = [&](const TensorD& a) {
    TensorD x = a;
    for (int i = activation_index; i <= logits; ++i) x = forward_layer(network.layers()[static_cast<std::size_t>(i)], x);
    return x[static_cast<std::size_t>(class_index)];
  };

  FiniteDifference fd{TensorD(base.shape()), std::vector<std::uint8_t>(base.size(), 0), 0};
  const double f0 = suffix(base);
  TensorD probe = base;
  for (std::size_t e = 0; e < base.size(); ++e) {
    probe[e] = base[e] + step;
    const double fp = suffix(probe);
    probe[e] = base[e] - step;
    const double fm = suffix(probe);
    probe[e] = base[e];
    fd.gradient[e] = (fp - fm) / (2.0 * step);
    const double ahead = (fp - f0) / step;
    const double behind = (f0 - fm) / step;
    if (std::abs(ahead - behind) > 1e-8 + 1e-6 * std::max(std::abs(ahead), std::abs(behind))) {
      fd.nonsmooth[e] = 1;
      ++fd.nonsmooth_count;
    }
  }
  return fd;
}

}  // namespace salaud
