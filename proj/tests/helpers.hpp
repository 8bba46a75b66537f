#ifndef PSAN_TESTS_HELPERS_HPP
#define PSAN_TESTS_HELPERS_HPP

#include <cmath>
#include <cstdint>

#include "psan/network.hpp"
#include "psan/rng.hpp"
#include "psan/tensor.hpp"

namespace psan::testing {

inline void fill_uniform(Tensor& t, RngStream& s, double lo, double hi) {
  for (auto& v : t.data()) v = lo + (hi - lo) * s.next_double();
}

inline Tensor random_image(std::size_t h, std::size_t w, RngStream& s) {
  Tensor img({3, h, w});
  fill_uniform(img, s, 0.0, 1.0);
  return img;
}

// He-style scale keeps activations O(1) through a few layers.
inline void init_conv(LayerSpec& l, RngStream& s) {
  double fan_in = static_cast<double>(l.in_channels * l.kernel_h * l.kernel_w);
  double scale = std::sqrt(2.0 / fan_in);
  for (auto& v : l.weights.data()) v = scale * s.next_normal();
}

// Small conv/relu/pool stack on a 3xHxW input; geometry varies with the seed.
inline Network random_tiny_network(std::size_t h, std::size_t w, RngStream& s,
                                   bool with_bias = true, bool with_pool = true) {
  Network net;
  net.in_channels = 3;
  net.in_h = h;
  net.in_w = w;
  net.norm.mean = {0.5, 0.5, 0.5};
  net.norm.std = {0.25, 0.25, 0.25};

  std::size_t ch1 = 4 + s.next_below(4);
  std::size_t ch2 = 4 + s.next_below(4);

  LayerSpec c1 = LayerSpec::conv(3, ch1, 3, 1, 1);
  init_conv(c1, s);
  net.layers.push_back(c1);
  if (with_bias) {
    LayerSpec b = LayerSpec::bias(ch1);
    for (auto& v : b.weights.data()) v = 0.1 * s.next_normal();
    net.layers.push_back(b);
  }
  net.layers.push_back(LayerSpec::relu_layer());
  if (with_pool) net.layers.push_back(LayerSpec::maxpool(2, 2));

  LayerSpec c2 = LayerSpec::conv(ch1, ch2, 3, 1, 1);
  init_conv(c2, s);
  net.layers.push_back(c2);
  net.layers.push_back(LayerSpec::relu_layer());

  LayerSpec c3 = LayerSpec::conv(ch2, 4 + s.next_below(5), 3, 1, 1);
  init_conv(c3, s);
  net.layers.push_back(c3);

  net.validate();
  return net;
}

} // namespace psan::testing

#endif
