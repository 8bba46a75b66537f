#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <thread>

#include "helpers.hpp"
#include "psan/image_ops.hpp"
#include "psan/network.hpp"

using namespace psan;
using namespace psan::testing;

namespace {

// naive sliding-window convolution, written directly against the definition
Tensor oracle_conv2d(const Tensor& in, const Tensor& w, std::size_t stride,
                     std::size_t padding) {
  std::size_t oc_n = w.extent(0), ic_n = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  std::size_t oh = (in.extent(1) + 2 * padding - kh) / stride + 1;
  std::size_t ow = (in.extent(2) + 2 * padding - kw) / stride + 1;
  Tensor out({oc_n, oh, ow});
  for (std::size_t oc = 0; oc < oc_n; ++oc)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < ic_n; ++ic)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r * stride + i) -
                                  static_cast<std::ptrdiff_t>(padding);
              std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c * stride + j) -
                                  static_cast<std::ptrdiff_t>(padding);
              if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(in.extent(1)) ||
                  cc >= static_cast<std::ptrdiff_t>(in.extent(2)))
                continue;
              acc += w(oc, ic, i, j) * in(ic, static_cast<std::size_t>(rr),
                                          static_cast<std::size_t>(cc));
            }
        out(oc, r, c) = acc;
      }
  return out;
}

double scalar_output(const Network& net, const Tensor& x, const Tensor& seed) {
  auto trace = forward(net, x);
  double acc = 0.0;
  for (std::size_t i = 0; i < seed.size(); ++i) acc += seed[i] * trace.features()[i];
  return acc;
}

void expect_close(double a, double b, double rel, double abs_floor) {
  double tol = rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
  REQUIRE(std::abs(a - b) <= tol);
}

} // namespace

TEST_CASE("identity 1x1 conv reproduces the normalized input") {
  Network net;
  net.in_channels = 1;
  net.in_h = net.in_w = 6;
  net.norm.mean = {0.5};
  net.norm.std = {0.25};
  LayerSpec conv = LayerSpec::conv(1, 1, 1);
  conv.weights[0] = 1.0;
  net.layers.push_back(conv);
  net.validate();

  Rng rng(201);
  auto s = rng.stream("x");
  Tensor x({1, 6, 6});
  fill_uniform(x, s, 0.0, 1.0);
  auto trace = forward(net, x);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(trace.features()[i] == (x[i] - 0.5) / 0.25);
}

TEST_CASE("conv forward matches the sliding-window oracle") {
  Rng rng(202);
  // hand-picked kernel on a known 5x5 input
  Network net;
  net.in_channels = 1;
  net.in_h = net.in_w = 5;
  net.norm.mean = {0.0};
  net.norm.std = {1.0};
  LayerSpec conv = LayerSpec::conv(1, 1, 3);
  double kernel[9] = {1, 0, -1, 2, 0, -2, 1, 0, -1};
  for (int i = 0; i < 9; ++i) conv.weights[i] = kernel[i];
  net.layers.push_back(conv);
  net.validate();

  Tensor x({1, 5, 5});
  for (std::size_t i = 0; i < 25; ++i) x[i] = static_cast<double>(i % 7) - 3.0;
  auto trace = forward(net, x);
  Tensor want = oracle_conv2d(x, conv.weights, 1, 0);
  REQUIRE(trace.features().shape() == want.shape());
  for (std::size_t i = 0; i < want.size(); ++i)
    REQUIRE(trace.features()[i] == Catch::Approx(want[i]).margin(1e-12));

  // randomized instances with stride/padding
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    auto s = rng.stream("conv", inst);
    std::size_t stride = 1 + s.next_below(2);
    std::size_t padding = s.next_below(2);
    Network n2;
    n2.in_channels = 2;
    n2.in_h = n2.in_w = 8;
    n2.norm.mean = {0.0, 0.0};
    n2.norm.std = {1.0, 1.0};
    LayerSpec c = LayerSpec::conv(2, 3, 3, stride, padding);
    fill_uniform(c.weights, s, -1.0, 1.0);
    n2.layers.push_back(c);
    n2.validate();
    Tensor in({2, 8, 8});
    fill_uniform(in, s, -1.0, 1.0);
    auto tr = forward(n2, in);
    Tensor want2 = oracle_conv2d(in, c.weights, stride, padding);
    REQUIRE(tr.features().shape() == want2.shape());
    for (std::size_t i = 0; i < want2.size(); ++i)
      REQUIRE(tr.features()[i] == Catch::Approx(want2[i]).margin(1e-9));
  }
}

TEST_CASE("relu zeroes negatives and keeps positives") {
  Network net;
  net.in_channels = 1;
  net.in_h = 2;
  net.in_w = 3;
  net.norm.mean = {0.0};
  net.norm.std = {1.0};
  net.layers.push_back(LayerSpec::relu_layer());
  net.validate();
  Tensor x = Tensor::from_data({1, 2, 3}, {-1.0, 0.5, -0.25, 0.0, 2.0, -3.0});
  auto trace = forward(net, x);
  std::vector<double> want{0.0, 0.5, 0.0, 0.0, 2.0, 0.0};
  REQUIRE(trace.features().data() == want);
}

TEST_CASE("gradient of a linear network is independent of the input") {
  Rng rng(203);
  auto s = rng.stream("lin");
  Network net;
  net.in_channels = 3;
  net.in_h = net.in_w = 8;
  net.norm.mean = {0.4, 0.5, 0.6};
  net.norm.std = {0.2, 0.25, 0.3};
  LayerSpec c1 = LayerSpec::conv(3, 4, 3, 1, 1);
  init_conv(c1, s);
  LayerSpec c2 = LayerSpec::conv(4, 2, 3, 1, 1);
  init_conv(c2, s);
  net.layers.push_back(c1);
  net.layers.push_back(c2);
  net.validate();

  Tensor seed(net.output_shape().vec());
  fill_uniform(seed, s, -1.0, 1.0);
  Tensor x1 = random_image(8, 8, s);
  Tensor x2 = random_image(8, 8, s);
  Tensor g1 = input_gradient(net, forward(net, x1), seed);
  Tensor g2 = input_gradient(net, forward(net, x2), seed);
  for (std::size_t i = 0; i < g1.size(); ++i)
    REQUIRE(g1[i] == Catch::Approx(g2[i]).margin(1e-12));
}

TEST_CASE("zero seed gradient gives zero gradients everywhere") {
  Rng rng(204);
  auto s = rng.stream("zero");
  Network net = random_tiny_network(8, 8, s);
  Tensor x = random_image(8, 8, s);
  auto trace = forward(net, x);
  Tensor seed(net.output_shape().vec());
  Tensor g = input_gradient(net, trace, seed);
  for (double v : g.data()) REQUIRE(v == 0.0);
  auto pg = parameter_gradients(net, trace, seed);
  for (const auto& t : pg.per_layer)
    for (double v : t.data()) REQUIRE(v == 0.0);
}

TEST_CASE("input gradient matches central finite differences") {
  Rng rng(205);
  for (std::uint64_t inst = 0; inst < 3; ++inst) {
    auto s = rng.stream("fd", inst);
    Network net = random_tiny_network(16, 16, s);
    Tensor x = random_image(16, 16, s);
    Tensor seed(net.output_shape().vec());
    fill_uniform(seed, s, -1.0, 1.0);

    auto trace = forward(net, x);
    Tensor g = input_gradient(net, trace, seed);
    double scale = 0.0;
    for (double v : g.data()) scale = std::max(scale, std::abs(v));

    const double h = 1e-5;
    for (int probe = 0; probe < 60; ++probe) {
      std::size_t i = s.next_below(x.size());
      Tensor xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      double fd = (scalar_output(net, xp, seed) - scalar_output(net, xm, seed)) / (2.0 * h);
      expect_close(g[i], fd, 1e-4, 1e-6 * scale);
    }
  }
}

TEST_CASE("1x1 conv weight gradient equals the input activation") {
  Network net;
  net.in_channels = 1;
  net.in_h = net.in_w = 1;
  net.norm.mean = {0.0};
  net.norm.std = {1.0};
  LayerSpec conv = LayerSpec::conv(1, 1, 1);
  conv.weights[0] = 0.7;
  net.layers.push_back(conv);
  net.validate();
  Tensor x = Tensor::from_data({1, 1, 1}, {0.3});
  auto trace = forward(net, x);
  Tensor seed({1, 1, 1}, 1.0);
  auto pg = parameter_gradients(net, trace, seed);
  REQUIRE(pg.per_layer[0].size() == 1);
  REQUIRE(pg.per_layer[0][0] == Catch::Approx(0.3).margin(1e-15));
}

TEST_CASE("parameter gradients match central finite differences") {
  Rng rng(206);
  auto s = rng.stream("fdw");
  Network net = random_tiny_network(12, 12, s);
  Tensor x = random_image(12, 12, s);
  Tensor seed(net.output_shape().vec());
  fill_uniform(seed, s, -1.0, 1.0);

  auto trace = forward(net, x);
  auto pg = parameter_gradients(net, trace, seed);
  double scale = 0.0;
  for (const auto& t : pg.per_layer)
    for (double v : t.data()) scale = std::max(scale, std::abs(v));

  const double h = 1e-5;
  int done = 0;
  while (done < 20) {
    std::size_t li = s.next_below(net.layers.size());
    if (!net.layers[li].has_weights()) continue;
    std::size_t wi = s.next_below(net.layers[li].weights.size());
    Network np = net, nm = net;
    np.layers[li].weights[wi] += h;
    nm.layers[li].weights[wi] -= h;
    double fd = (scalar_output(np, x, seed) - scalar_output(nm, x, seed)) / (2.0 * h);
    expect_close(pg.per_layer[li][wi], fd, 1e-4, 1e-6 * scale);
    ++done;
  }
}

TEST_CASE("bias-free relu network is degree-1 homogeneous") {
  Rng rng(207);
  for (std::uint64_t inst = 0; inst < 5; ++inst) {
    auto s = rng.stream("homog", inst);
    Network net = random_tiny_network(12, 12, s, /*with_bias=*/false);
    Tensor x = random_image(12, 12, s);
    Tensor seed(net.output_shape().vec());
    fill_uniform(seed, s, -1.0, 1.0);

    auto trace = forward(net, x);
    double seeded_value = 0.0;
    for (std::size_t i = 0; i < seed.size(); ++i)
      seeded_value += seed[i] * trace.features()[i];

    Tensor g = input_gradient_normalized(net, trace, seed);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * trace.normalized_input[i];
    expect_close(dot, seeded_value, 1e-5, 0.0);
  }
}

TEST_CASE("stale trace is rejected") {
  Rng rng(208);
  auto s = rng.stream("stale");
  Network a = random_tiny_network(8, 8, s);
  Network b = random_tiny_network(8, 8, s);
  Tensor x = random_image(8, 8, s);
  auto trace = forward(a, x);
  Tensor seed(b.output_shape().vec());
  REQUIRE_THROWS_AS(input_gradient(b, trace, seed), Error);
}

TEST_CASE("receptive field recurrence on simple stacks") {
  Network net;
  net.in_channels = 1;
  net.in_h = net.in_w = 16;
  net.norm.mean = {0.0};
  net.norm.std = {1.0};
  net.layers.push_back(LayerSpec::conv(1, 1, 3));
  net.validate();
  auto rf1 = analytic_receptive_field(net);
  REQUIRE(rf1.size_h == 3);
  REQUIRE(rf1.jump == 1.0);
  REQUIRE(rf1.box(3, 3).height() == 3);

  net.layers.push_back(LayerSpec::conv(1, 1, 3));
  net.validate();
  auto rf2 = analytic_receptive_field(net);
  REQUIRE(rf2.size_h == 5);
  REQUIRE(rf2.box(2, 2).height() == 5);
}

TEST_CASE("receptive field equals brute-force gradient support") {
  Rng rng(209);
  auto s = rng.stream("rf");
  Network net;
  net.in_channels = 1;
  net.in_h = net.in_w = 20;
  net.norm.mean = {0.0};
  net.norm.std = {1.0};
  LayerSpec c1 = LayerSpec::conv(1, 2, 3);
  fill_uniform(c1.weights, s, 0.1, 1.0); // positive weights: no cancellation
  net.layers.push_back(c1);
  net.layers.push_back(LayerSpec::maxpool(2, 2));
  LayerSpec c2 = LayerSpec::conv(2, 1, 3);
  fill_uniform(c2.weights, s, 0.1, 1.0);
  net.layers.push_back(c2);
  net.validate();

  auto rf = analytic_receptive_field(net);
  REQUIRE(rf.jump == 2.0);

  Shape3 out = net.output_shape();
  std::size_t oh = out.h / 2, ow = out.w / 2;
  Tensor seed(out.vec());
  seed(0, oh, ow) = 1.0;
  Box box = rf.box(oh, ow);

  // single input: support contained in the analytic field (maxpool routes
  // through the argmax only)
  Tensor x({1, 20, 20});
  fill_uniform(x, s, 0.0, 1.0);
  Tensor g = input_gradient(net, forward(net, x), seed);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 20; ++c)
      if (std::abs(g(0, r, c)) > 0.0) {
        REQUIRE(r >= box.top);
        REQUIRE(r <= box.bottom);
        REQUIRE(c >= box.left);
        REQUIRE(c <= box.right);
      }

  // union of supports over many random inputs fills the analytic box exactly
  PixelMask support(20, 20);
  for (std::uint64_t k = 0; k < 40; ++k) {
    auto sk = rng.stream("rf-union", k);
    Tensor xk({1, 20, 20});
    fill_uniform(xk, sk, 0.0, 1.0);
    Tensor gk = input_gradient(net, forward(net, xk), seed);
    for (std::size_t r = 0; r < 20; ++r)
      for (std::size_t c = 0; c < 20; ++c)
        if (std::abs(gk(0, r, c)) > 0.0) support.set(r, c, true);
  }
  Box ubox = bounding_box(support);
  REQUIRE(ubox.top == box.top);
  REQUIRE(ubox.left == box.left);
  REQUIRE(ubox.bottom == box.bottom);
  REQUIRE(ubox.right == box.right);
  REQUIRE(box.height() == rf.size_h); // interior: unclipped
  REQUIRE(rf.size_h == 8);            // conv3 -> pool2/2 -> conv3
}

TEST_CASE("receptive field rejects unsupported layer kinds") {
  Network net;
  net.in_channels = 1;
  net.in_h = net.in_w = 8;
  net.norm.mean = {0.0};
  net.norm.std = {1.0};
  LayerSpec bogus;
  bogus.kind = static_cast<LayerKind>(99);
  net.layers.push_back(bogus);
  REQUIRE_THROWS_AS(analytic_receptive_field(net), Error);
}

TEST_CASE("forward is deterministic under concurrency") {
  Rng rng(210);
  auto s = rng.stream("mt");
  Network net = random_tiny_network(16, 16, s);
  Tensor x = random_image(16, 16, s);
  Tensor reference = forward(net, x).features();

  std::vector<std::thread> threads;
  std::vector<int> ok(8, 0);
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < 5; ++i) {
        Tensor f = forward(net, x).features();
        if (f.data() != reference.data()) return;
      }
      ok[t] = 1;
    });
  for (auto& th : threads) th.join();
  for (int v : ok) REQUIRE(v == 1);
}
