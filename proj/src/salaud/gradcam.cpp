#include <algorithm>
#include <cmath>

#include "salaud/explain.hpp"

namespace salaud {

int gradcam_feature_index(const Network& network) {
  const int conv = network.last_conv_layer();
  require(conv >= 0, ErrorCode::Architecture, "Grad-CAM needs at least one conv2d layer");
  if (conv + 1 < network.logits_layer() && network.layer(conv + 1).kind == LayerKind::Relu) return conv + 2;
  return conv + 1;
}

std::vector<double> upsample_bilinear(std::span<const double> src, int sh, int sw, int dh, int dw) {
  require(src.size() == static_cast<std::size_t>(sh) * sw && dh > 0 && dw > 0, ErrorCode::InputShape,
          "bilinear resize: source size mismatch");
  std::vector<double> out(static_cast<std::size_t>(dh) * dw);
  auto coord = [](int dst, int src_n, int dst_n, int& i0, int& i1, double& t) {
    double s = (dst + 0.5) * static_cast<double>(src_n) / dst_n - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, src_n - 1);
    t = s - i0;
  };
  for (int y = 0; y < dh; ++y) {
    int y0, y1;
    double ty;
    coord(y, sh, dh, y0, y1, ty);
    for (int x = 0; x < dw; ++x) {
      int x0, x1;
      double tx;
      coord(x, sw, dw, x0, x1, tx);
      const double top = (1 - tx) * src[static_cast<std::size_t>(y0) * sw + x0] + tx * src[static_cast<std::size_t>(y0) * sw + x1];
      const double bot = (1 - tx) * src[static_cast<std::size_t>(y1) * sw + x0] + tx * src[static_cast<std::size_t>(y1) * sw + x1];
      out[static_cast<std::size_t>(y) * dw + x] = (1 - ty) * top + ty * bot;
    }
  }
  return out;
}

GradCamResult gradcam(const Network& network, const Tensor& image, int class_index) {
  GradCamResult r;
  r.feature_activation = gradcam_feature_index(network);
  const ActivationTrace trace = forward_pass(network, image);
  const std::vector<Tensor> grads = backward_to_feature_maps(network, trace, class_index);
  const Tensor& a = trace.activations[static_cast<std::size_t>(r.feature_activation)];
  const Tensor& g = grads[static_cast<std::size_t>(r.feature_activation)];
  const int k = a.channels(), h = a.height(), w = a.width();
  const std::size_t z = static_cast<std::size_t>(h) * w;
  r.feature_height = h;
  r.feature_width = w;
  r.alphas.assign(static_cast<std::size_t>(k), 0.0);
  r.raw.assign(z, 0.0);
  for (int c = 0; c < k; ++c) {
    const float* gp = &g.at(c, 0, 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < z; ++i) sum += gp[i];
    r.alphas[static_cast<std::size_t>(c)] = sum / static_cast<double>(z);
  }
  for (int c = 0; c < k; ++c) {
    const double alpha = r.alphas[static_cast<std::size_t>(c)];
    const float* ap = &a.at(c, 0, 0);
    for (std::size_t i = 0; i < z; ++i) r.raw[i] += alpha * ap[i];
  }
  std::vector<double> rectified(r.raw);
  for (double& v : rectified) v = std::max(v, 0.0);
  r.map = SaliencyMap(image.height(), image.width());
  r.map.values = upsample_bilinear(rectified, h, w, image.height(), image.width());
  r.map.method = "gradcam";
  r.map.target_class = class_index;
  return r;
}

std::vector<int> Segmentation::segment_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(count), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

Segmentation grid_segmentation(int height, int width, int grid_k) {
  require(grid_k >= 1, ErrorCode::Size, "grid_k must be >= 1");
  require(grid_k <= height && grid_k <= width, ErrorCode::Size,
          "grid_k " + std::to_string(grid_k) + " exceeds the image side");
  Segmentation s{height, width, grid_k * grid_k, std::vector<int>(static_cast<std::size_t>(height) * width)};
  const int cell_h = height / grid_k, cell_w = width / grid_k;
  for (int y = 0; y < height; ++y) {
    const int row = std::min(y / cell_h, grid_k - 1);
    for (int x = 0; x < width; ++x) {
      const int col = std::min(x / cell_w, grid_k - 1);
      s.labels[static_cast<std::size_t>(y) * width + x] = row * grid_k + col;
    }
  }
  return s;
}

Segmentation grid_segmentation(const Tensor& image, int grid_k) {
  require(image.rank() == 3, ErrorCode::InputShape, "expected a CxHxW image");
  return grid_segmentation(image.height(), image.width(), grid_k);
}

std::vector<float> background_values(const Tensor& image, BackgroundKind kind, double constant) {
  std::vector<float> bg(static_cast<std::size_t>(image.channels()), static_cast<float>(constant));
  if (kind == BackgroundKind::ChannelMean) {
    const std::size_t plane = static_cast<std::size_t>(image.height()) * image.width();
    for (int c = 0; c < image.channels(); ++c) {
      const float* p = &image.at(c, 0, 0);
      double sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      bg[static_cast<std::size_t>(c)] = static_cast<float>(sum / static_cast<double>(plane));
    }
  }
  return bg;
}

Tensor mask_image(const Tensor& image, const Segmentation& seg, std::span<const std::uint8_t> coalition,
                  std::span<const float> background) {
  require(image.rank() == 3 && image.height() == seg.height && image.width() == seg.width, ErrorCode::InputShape,
          "segmentation does not match the image");
  require(coalition.size() == static_cast<std::size_t>(seg.count), ErrorCode::InputShape,
          "coalition length differs from the segment count");
  require(background.size() == static_cast<std::size_t>(image.channels()), ErrorCode::InputShape,
          "background needs one value per channel");
  Tensor out = image;
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < seg.height; ++y) {
      for (int x = 0; x < seg.width; ++x) {
        if (!coalition[static_cast<std::size_t>(seg.at(y, x))]) out.at(c, y, x) = background[static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

SaliencyMap attribution_to_map(const Attribution& attribution, const Segmentation& seg) {
  require(attribution.phi.size() == static_cast<std::size_t>(seg.count), ErrorCode::InputShape,
          "attribution length differs from the segment count");
  SaliencyMap m(seg.height, seg.width);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = attribution.phi[static_cast<std::size_t>(seg.labels[i])];
  m.method = "kernel_shap";
  m.target_class = attribution.target_class;
  return m;
}

}  // namespace salaud
