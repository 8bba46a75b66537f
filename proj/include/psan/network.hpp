#ifndef PSAN_NETWORK_HPP
#define PSAN_NETWORK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "psan/error.hpp"
#include "psan/image_ops.hpp"
#include "psan/rng.hpp"
#include "psan/tensor.hpp"

namespace psan {

enum class LayerKind { conv2d, relu, maxpool2d, add_bias };

inline std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::add_bias: return "add-bias";
  }
  return "unknown";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // conv2d / maxpool2d geometry
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;
  // conv2d: [out, in, kh, kw]; add_bias: [channels]
  Tensor weights;

  static LayerSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                        std::size_t stride = 1, std::size_t padding = 0) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.kernel_h = l.kernel_w = k;
    l.stride = stride;
    l.padding = padding;
    l.weights = Tensor({out_ch, in_ch, k, k});
    return l;
  }
  static LayerSpec relu_layer() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
  }
  static LayerSpec maxpool(std::size_t k, std::size_t stride) {
    LayerSpec l;
    l.kind = LayerKind::maxpool2d;
    l.kernel_h = l.kernel_w = k;
    l.stride = stride;
    return l;
  }
  static LayerSpec bias(std::size_t channels) {
    LayerSpec l;
    l.kind = LayerKind::add_bias;
    l.in_channels = l.out_channels = channels;
    l.weights = Tensor({channels});
    return l;
  }

  bool has_weights() const {
    return kind == LayerKind::conv2d || kind == LayerKind::add_bias;
  }
};

// Per-channel statistics applied to raw [0,1] images before the first layer.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

struct Shape3 {
  std::size_t c = 0, h = 0, w = 0;
  bool operator==(const Shape3&) const = default;
  std::vector<std::size_t> vec() const { return {c, h, w}; }
};

inline Shape3 layer_output_shape(const LayerSpec& l, Shape3 in) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      require(l.in_channels == in.c, ErrorKind::invalid_argument,
              "conv2d: channel mismatch");
      require(in.h + 2 * l.padding >= l.kernel_h && in.w + 2 * l.padding >= l.kernel_w,
              ErrorKind::invalid_argument, "conv2d: kernel larger than padded input");
      std::size_t oh = (in.h + 2 * l.padding - l.kernel_h) / l.stride + 1;
      std::size_t ow = (in.w + 2 * l.padding - l.kernel_w) / l.stride + 1;
      return {l.out_channels, oh, ow};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2d: {
      require(in.h >= l.kernel_h && in.w >= l.kernel_w, ErrorKind::invalid_argument,
              "maxpool2d: kernel larger than input");
      std::size_t oh = (in.h - l.kernel_h) / l.stride + 1;
      std::size_t ow = (in.w - l.kernel_w) / l.stride + 1;
      return {in.c, oh, ow};
    }
    case LayerKind::add_bias:
      require(l.in_channels == in.c, ErrorKind::invalid_argument,
              "add-bias: channel mismatch");
      return in;
  }
  raise(ErrorKind::unsupported_operation, "unsupported layer kind");
}

// Fully convolutional feature extractor. Immutable during inference; training
// mutates a private copy under single-writer discipline.
struct Network {
  std::size_t in_channels = 3, in_h = 0, in_w = 0;
  Normalization norm;
  std::vector<LayerSpec> layers;

  Shape3 input_shape() const { return {in_channels, in_h, in_w}; }

  Shape3 output_shape() const {
    Shape3 s = input_shape();
    for (const auto& l : layers) s = layer_output_shape(l, s);
    return s;
  }

  void validate() const {
    require(in_channels >= 1 && in_h >= 1 && in_w >= 1, ErrorKind::invalid_argument,
            "network: empty input geometry");
    require(norm.mean.size() == in_channels && norm.std.size() == in_channels,
            ErrorKind::invalid_argument, "network: normalization size mismatch");
    for (double s : norm.std)
      require(s > 0.0, ErrorKind::invalid_argument, "network: std must be positive");
    Shape3 s = input_shape();
    for (const auto& l : layers) {
      if (l.has_weights())
        require(l.weights.all_finite(), ErrorKind::invalid_argument,
                "network: non-finite weights");
      s = layer_output_shape(l, s); // throws on inconsistent chaining
    }
  }
};

// Everything forward caches so that backward passes and relevance propagation
// can replay the network: per-layer outputs plus maxpool argmax indices.
struct ActivationTrace {
  const Network* net = nullptr;
  Tensor normalized_input;              // after (x - mean) / std
  std::vector<Tensor> outputs;          // outputs[i] = output of layers[i]
  std::vector<std::vector<std::size_t>> pool_argmax; // flat input index per pool output

  const Tensor& features() const { return outputs.back(); }

  const Tensor& layer_input(std::size_t i) const {
    return i == 0 ? normalized_input : outputs[i - 1];
  }
};

namespace detail {

inline Tensor conv2d_forward(const LayerSpec& l, const Tensor& in) {
  Shape3 is{in.extent(0), in.extent(1), in.extent(2)};
  Shape3 os = layer_output_shape(l, is);
  Tensor out({os.c, os.h, os.w});
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(is.h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(is.w);
  for (std::size_t oc = 0; oc < os.c; ++oc)
    for (std::size_t oh = 0; oh < os.h; ++oh)
      for (std::size_t ow = 0; ow < os.w; ++ow) {
        double acc = 0.0;
        const std::ptrdiff_t r0 =
            static_cast<std::ptrdiff_t>(oh * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
        const std::ptrdiff_t c0 =
            static_cast<std::ptrdiff_t>(ow * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
        for (std::size_t ic = 0; ic < is.c; ++ic)
          for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
            std::ptrdiff_t r = r0 + static_cast<std::ptrdiff_t>(kh);
            if (r < 0 || r >= ih) continue;
            for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
              std::ptrdiff_t c = c0 + static_cast<std::ptrdiff_t>(kw);
              if (c < 0 || c >= iw) continue;
              acc += l.weights(oc, ic, kh, kw) *
                     in(ic, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            }
          }
        out(oc, oh, ow) = acc;
      }
  return out;
}

inline Tensor maxpool_forward(const LayerSpec& l, const Tensor& in,
                              std::vector<std::size_t>& argmax) {
  Shape3 is{in.extent(0), in.extent(1), in.extent(2)};
  Shape3 os = layer_output_shape(l, is);
  Tensor out({os.c, os.h, os.w});
  argmax.assign(out.size(), 0);
  std::size_t flat = 0;
  for (std::size_t c = 0; c < os.c; ++c)
    for (std::size_t oh = 0; oh < os.h; ++oh)
      for (std::size_t ow = 0; ow < os.w; ++ow, ++flat) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t kh = 0; kh < l.kernel_h; ++kh)
          for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
            std::size_t r = oh * l.stride + kh;
            std::size_t cc = ow * l.stride + kw;
            double v = in(c, r, cc);
            if (v > best) { // ties keep the first index in scan order
              best = v;
              best_idx = (c * is.h + r) * is.w + cc;
            }
          }
        out(c, oh, ow) = best;
        argmax[flat] = best_idx;
      }
  return out;
}

} // namespace detail

// f(x): normalize, then run the layer stack. x is a raw-pixel image in [0,1].
inline ActivationTrace forward(const Network& net, const Tensor& x) {
  check_shape(x, {net.in_channels, net.in_h, net.in_w}, "forward: input");
  ActivationTrace trace;
  trace.net = &net;
  trace.normalized_input = x;
  for (std::size_t c = 0; c < net.in_channels; ++c)
    for (std::size_t r = 0; r < net.in_h; ++r)
      for (std::size_t cc = 0; cc < net.in_w; ++cc)
        trace.normalized_input(c, r, cc) =
            (x(c, r, cc) - net.norm.mean[c]) / net.norm.std[c];

  trace.outputs.reserve(net.layers.size());
  trace.pool_argmax.resize(net.layers.size());
  const Tensor* cur = &trace.normalized_input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d:
        trace.outputs.push_back(detail::conv2d_forward(l, *cur));
        break;
      case LayerKind::relu: {
        Tensor out = *cur;
        for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
        trace.outputs.push_back(std::move(out));
        break;
      }
      case LayerKind::maxpool2d:
        trace.outputs.push_back(detail::maxpool_forward(l, *cur, trace.pool_argmax[i]));
        break;
      case LayerKind::add_bias: {
        Tensor out = *cur;
        for (std::size_t c = 0; c < out.extent(0); ++c)
          for (std::size_t r = 0; r < out.extent(1); ++r)
            for (std::size_t cc = 0; cc < out.extent(2); ++cc)
              out(c, r, cc) += l.weights[c];
        trace.outputs.push_back(std::move(out));
        break;
      }
    }
    cur = &trace.outputs.back();
  }
  return trace;
}

namespace detail {

inline void check_trace(const Network& net, const ActivationTrace& trace) {
  require(trace.net == &net && trace.outputs.size() == net.layers.size(),
          ErrorKind::invalid_state, "trace does not belong to this network");
}

inline Tensor conv2d_backward_data(const LayerSpec& l, const Tensor& in, const Tensor& grad_out) {
  Tensor grad_in(in.shape());
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(in.extent(1));
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(in.extent(2));
  for (std::size_t oc = 0; oc < grad_out.extent(0); ++oc)
    for (std::size_t oh = 0; oh < grad_out.extent(1); ++oh)
      for (std::size_t ow = 0; ow < grad_out.extent(2); ++ow) {
        double g = grad_out(oc, oh, ow);
        if (g == 0.0) continue;
        const std::ptrdiff_t r0 =
            static_cast<std::ptrdiff_t>(oh * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
        const std::ptrdiff_t c0 =
            static_cast<std::ptrdiff_t>(ow * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
        for (std::size_t ic = 0; ic < in.extent(0); ++ic)
          for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
            std::ptrdiff_t r = r0 + static_cast<std::ptrdiff_t>(kh);
            if (r < 0 || r >= ih) continue;
            for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
              std::ptrdiff_t c = c0 + static_cast<std::ptrdiff_t>(kw);
              if (c < 0 || c >= iw) continue;
              grad_in(ic, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) +=
                  l.weights(oc, ic, kh, kw) * g;
            }
          }
      }
  return grad_in;
}

inline Tensor conv2d_backward_weights(const LayerSpec& l, const Tensor& in,
                                      const Tensor& grad_out) {
  Tensor grad_w(l.weights.shape());
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(in.extent(1));
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(in.extent(2));
  for (std::size_t oc = 0; oc < grad_out.extent(0); ++oc)
    for (std::size_t oh = 0; oh < grad_out.extent(1); ++oh)
      for (std::size_t ow = 0; ow < grad_out.extent(2); ++ow) {
        double g = grad_out(oc, oh, ow);
        if (g == 0.0) continue;
        const std::ptrdiff_t r0 =
            static_cast<std::ptrdiff_t>(oh * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
        const std::ptrdiff_t c0 =
            static_cast<std::ptrdiff_t>(ow * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
        for (std::size_t ic = 0; ic < in.extent(0); ++ic)
          for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
            std::ptrdiff_t r = r0 + static_cast<std::ptrdiff_t>(kh);
            if (r < 0 || r >= ih) continue;
            for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
              std::ptrdiff_t c = c0 + static_cast<std::ptrdiff_t>(kw);
              if (c < 0 || c >= iw) continue;
              grad_w(oc, ic, kh, kw) +=
                  in(ic, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) * g;
            }
          }
      }
  return grad_w;
}

// Shared reverse pass; optionally collects parameter gradients.
inline Tensor backward(const Network& net, const ActivationTrace& trace,
                       const Tensor& seed_grad, std::vector<Tensor>* param_grads) {
  check_trace(net, trace);
  Shape3 out = net.output_shape();
  check_shape(seed_grad, out.vec(), "backward: seed gradient");

  if (param_grads) param_grads->assign(net.layers.size(), Tensor());

  Tensor grad = seed_grad;
  for (std::size_t ri = net.layers.size(); ri-- > 0;) {
    const LayerSpec& l = net.layers[ri];
    const Tensor& in = trace.layer_input(ri);
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (param_grads) (*param_grads)[ri] = conv2d_backward_weights(l, in, grad);
        grad = conv2d_backward_data(l, in, grad);
        break;
      }
      case LayerKind::relu: {
        Tensor g(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > 0.0 ? grad[i] : 0.0;
        grad = std::move(g);
        break;
      }
      case LayerKind::maxpool2d: {
        Tensor g(in.shape());
        const auto& argmax = trace.pool_argmax[ri];
        for (std::size_t i = 0; i < grad.size(); ++i) g[argmax[i]] += grad[i];
        grad = std::move(g);
        break;
      }
      case LayerKind::add_bias: {
        if (param_grads) {
          Tensor gb({l.weights.size()});
          for (std::size_t c = 0; c < grad.extent(0); ++c)
            for (std::size_t r = 0; r < grad.extent(1); ++r)
              for (std::size_t cc = 0; cc < grad.extent(2); ++cc)
                gb[c] += grad(c, r, cc);
          (*param_grads)[ri] = std::move(gb);
        }
        break; // identity on data gradient
      }
    }
  }
  return grad; // gradient w.r.t. normalized input
}

} // namespace detail

// d<features, seed_grad>/dx at the normalized input (before undoing
// normalization); used by the relevance equivalence checks.
inline Tensor input_gradient_normalized(const Network& net, const ActivationTrace& trace,
                                        const Tensor& seed_grad) {
  return detail::backward(net, trace, seed_grad, nullptr);
}

// Exact reverse-mode derivative w.r.t. the raw image, chain rule through the
// normalization included.
inline Tensor input_gradient(const Network& net, const ActivationTrace& trace,
                             const Tensor& seed_grad) {
  Tensor grad = detail::backward(net, trace, seed_grad, nullptr);
  for (std::size_t c = 0; c < grad.extent(0); ++c)
    for (std::size_t r = 0; r < grad.extent(1); ++r)
      for (std::size_t cc = 0; cc < grad.extent(2); ++cc)
        grad(c, r, cc) /= net.norm.std[c];
  return grad;
}

struct ParameterGradients {
  // aligned with Network::layers; empty tensor for non-parametric layers
  std::vector<Tensor> per_layer;
};

inline ParameterGradients parameter_gradients(const Network& net, const ActivationTrace& trace,
                                              const Tensor& seed_grad) {
  ParameterGradients pg;
  detail::backward(net, trace, seed_grad, &pg.per_layer);
  return pg;
}

// Closed-form receptive field of every output location, via the standard
// (size, jump, start) recurrence over kernel/stride/padding.
struct ReceptiveField {
  std::size_t out_h = 0, out_w = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t size_h = 0, size_w = 0; // unclipped extent in input pixels
  double jump = 1.0;                  // input pixels per output step
  double center0 = 0.0;               // center of output (0,0), in input pixels

  double center_row(std::size_t h) const { return center0 + static_cast<double>(h) * jump; }
  double center_col(std::size_t w) const { return center0 + static_cast<double>(w) * jump; }

  // tightest pixel box covering the field, clipped to the image
  Box box(std::size_t h, std::size_t w) const {
    auto clip = [](double lo, double hi, std::size_t n) {
      std::ptrdiff_t a = static_cast<std::ptrdiff_t>(std::ceil(lo));
      std::ptrdiff_t b = static_cast<std::ptrdiff_t>(std::floor(hi));
      a = std::clamp<std::ptrdiff_t>(a, 0, static_cast<std::ptrdiff_t>(n) - 1);
      b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n) - 1);
      return std::pair<std::size_t, std::size_t>{static_cast<std::size_t>(a),
                                                 static_cast<std::size_t>(b)};
    };
    double half_h = (static_cast<double>(size_h) - 1.0) / 2.0;
    double half_w = (static_cast<double>(size_w) - 1.0) / 2.0;
    auto [top, bottom] = clip(center_row(h) - half_h, center_row(h) + half_h, in_h);
    auto [left, right] = clip(center_col(w) - half_w, center_col(w) + half_w, in_w);
    return Box{top, left, bottom, right};
  }
};

inline ReceptiveField analytic_receptive_field(const Network& net) {
  double size = 1.0, jump = 1.0, start = 0.0;
  for (const auto& l : net.layers) {
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::maxpool2d: {
        require(l.kernel_h == l.kernel_w, ErrorKind::unsupported_operation,
                "receptive field: non-square kernels unsupported");
        double k = static_cast<double>(l.kernel_h);
        double s = static_cast<double>(l.stride);
        double p = l.kind == LayerKind::conv2d ? static_cast<double>(l.padding) : 0.0;
        size = size + (k - 1.0) * jump;
        start = start + ((k - 1.0) / 2.0 - p) * jump;
        jump = jump * s;
        break;
      }
      case LayerKind::relu:
      case LayerKind::add_bias:
        break;
      default:
        raise(ErrorKind::unsupported_operation, "receptive field: unsupported layer kind");
    }
  }
  Shape3 out = net.output_shape();
  ReceptiveField rf;
  rf.out_h = out.h;
  rf.out_w = out.w;
  rf.in_h = net.in_h;
  rf.in_w = net.in_w;
  rf.size_h = rf.size_w = static_cast<std::size_t>(std::llround(size));
  rf.jump = jump;
  rf.center0 = start;
  return rf;
}

} // namespace psan

#endif
