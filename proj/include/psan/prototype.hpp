#ifndef PSAN_PROTOTYPE_HPP
#define PSAN_PROTOTYPE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "psan/error.hpp"
#include "psan/network.hpp"
#include "psan/rng.hpp"
#include "psan/tensor.hpp"

namespace psan {

enum class SimilarityKind { protopnet, prototree };

inline std::string similarity_kind_name(SimilarityKind k) {
  return k == SimilarityKind::protopnet ? "protopnet" : "prototree";
}

struct SimilaritySettings {
  SimilarityKind kind = SimilarityKind::protopnet;
  double epsilon = 1e-4; // protopnet log-ratio stabilizer
};

// similarity as a function of the squared L2 distance
inline double similarity_from_d2(double d2, const SimilaritySettings& s) {
  if (s.kind == SimilarityKind::prototree) return std::exp(-d2);
  return std::log((d2 + 1.0) / (d2 + s.epsilon));
}

// d(similarity)/d(d2); both kinds are strictly decreasing in d2
inline double similarity_d2_derivative(double d2, const SimilaritySettings& s) {
  if (s.kind == SimilarityKind::prototree) return -std::exp(-d2);
  return 1.0 / (d2 + 1.0) - 1.0 / (d2 + s.epsilon);
}

// Reference vector plus the provenance of its projected source patch.
struct Prototype {
  std::size_t index = 0;
  std::uint32_t source_image_id = 0; // p_i: manifest row of the source image
  std::size_t row = 0, col = 0;      // (h_i, w_i)
  int class_assignment = -1;         // -1: unassigned
  std::vector<double> reference;     // r_i
};

struct SimilarityMap {
  Tensor values; // HxW
  std::size_t prototype = 0;
  SimilarityKind kind = SimilarityKind::protopnet;
};

struct Peak {
  std::size_t row = 0, col = 0;
  double score = 0.0;
};

inline double distance_sq_at(const Tensor& features, std::size_t h, std::size_t w,
                             const std::vector<double>& reference) {
  const std::size_t plane = features.extent(1) * features.extent(2);
  const std::size_t offset = h * features.extent(2) + w;
  double acc = 0.0;
  for (std::size_t d = 0; d < reference.size(); ++d) {
    double diff = features[d * plane + offset] - reference[d];
    acc += diff * diff;
  }
  return acc;
}

inline Tensor distance_sq_map(const Tensor& features, const std::vector<double>& reference) {
  require(features.rank() == 3, ErrorKind::invalid_argument, "features must be DxHxW");
  require(features.extent(0) == reference.size(), ErrorKind::invalid_argument,
          "feature depth does not match prototype depth");
  Tensor map({features.extent(1), features.extent(2)});
  for (std::size_t h = 0; h < map.extent(0); ++h)
    for (std::size_t w = 0; w < map.extent(1); ++w)
      map(h, w) = distance_sq_at(features, h, w, reference);
  return map;
}

inline SimilarityMap similarity_map(const Tensor& features, const Prototype& proto,
                                    const SimilaritySettings& settings) {
  SimilarityMap sm;
  sm.prototype = proto.index;
  sm.kind = settings.kind;
  sm.values = distance_sq_map(features, proto.reference);
  for (auto& v : sm.values.data()) v = similarity_from_d2(v, settings);
  return sm;
}

// Global max with row-major tie-break (first occurrence wins).
inline Peak peak(const Tensor& map) {
  require(map.rank() == 2 && map.size() > 0, ErrorKind::invalid_argument,
          "peak: empty map");
  Peak p;
  p.score = map[0];
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.size(); ++i)
    if (map[i] > p.score) {
      p.score = map[i];
      best = i;
    }
  p.row = best / map.extent(1);
  p.col = best % map.extent(1);
  return p;
}

inline Peak peak(const SimilarityMap& sm) { return peak(sm.values); }

// logits = weights · s(x), weights laid out [num_classes x num_prototypes]
struct DecisionHead {
  std::size_t num_classes = 0;
  std::size_t num_prototypes = 0;
  Tensor weights;

  DecisionHead() = default;
  DecisionHead(std::size_t classes, std::size_t prototypes)
      : num_classes(classes), num_prototypes(prototypes), weights({classes, prototypes}) {}
};

struct PrototypeModel {
  Network net;
  SimilaritySettings similarity;
  std::vector<Prototype> prototypes;
  DecisionHead head;
  std::vector<std::string> class_names;

  std::size_t feature_depth() const { return net.output_shape().c; }

  void validate() const {
    net.validate();
    std::size_t d = net.output_shape().c;
    for (const auto& p : prototypes)
      require(p.reference.size() == d, ErrorKind::invalid_argument,
              "prototype depth mismatch");
    require(head.num_prototypes == prototypes.size(), ErrorKind::invalid_argument,
            "head width does not match prototype count");
    require(head.num_classes == class_names.size() || class_names.empty(),
            ErrorKind::invalid_argument, "class name count mismatch");
  }
};

struct LabeledImage {
  Tensor image;                  // 3xHxW raw pixels in [0,1]
  std::size_t label = 0;
  std::uint32_t image_id = 0;    // manifest row
};

struct Prediction {
  std::vector<double> logits;
  std::vector<Peak> peaks; // one per prototype
};

inline Prediction predict_from_features(const PrototypeModel& model, const Tensor& features) {
  Prediction out;
  out.peaks.reserve(model.prototypes.size());
  std::vector<double> scores(model.prototypes.size());
  for (std::size_t i = 0; i < model.prototypes.size(); ++i) {
    SimilarityMap sm = similarity_map(features, model.prototypes[i], model.similarity);
    Peak p = peak(sm);
    scores[i] = p.score;
    out.peaks.push_back(p);
  }
  out.logits.assign(model.head.num_classes, 0.0);
  for (std::size_t c = 0; c < model.head.num_classes; ++c)
    for (std::size_t i = 0; i < scores.size(); ++i)
      out.logits[c] += model.head.weights(c, i) * scores[i];
  return out;
}

inline Prediction predict(const PrototypeModel& model, const Tensor& x) {
  return predict_from_features(model, forward(model.net, x).features());
}

inline std::size_t predicted_class(const Prediction& p) {
  return static_cast<std::size_t>(
      std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin());
}

// Snap every reference vector to its nearest training-image latent location.
// Ties resolve by (image order, row-major location): the scan keeps the first
// strict minimum it sees.
inline void project_prototypes(PrototypeModel& model, const std::vector<LabeledImage>& train) {
  require(!train.empty(), ErrorKind::invalid_argument, "project_prototypes: empty train set");
  const std::size_t n_proto = model.prototypes.size();
  std::vector<double> best_d2(n_proto, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> best_image(n_proto, 0);
  std::vector<std::size_t> best_row(n_proto, 0), best_col(n_proto, 0);
  std::vector<std::vector<double>> best_vec(n_proto);

  const std::size_t plane_h = model.net.output_shape().h;
  const std::size_t plane_w = model.net.output_shape().w;
  const std::size_t depth = model.feature_depth();

  for (std::size_t t = 0; t < train.size(); ++t) {
    Tensor features = forward(model.net, train[t].image).features();
    const std::size_t plane = plane_h * plane_w;
    for (std::size_t i = 0; i < n_proto; ++i) {
      const auto& ref = model.prototypes[i].reference;
      for (std::size_t h = 0; h < plane_h; ++h)
        for (std::size_t w = 0; w < plane_w; ++w) {
          double d2 = distance_sq_at(features, h, w, ref);
          if (d2 < best_d2[i]) {
            best_d2[i] = d2;
            best_image[i] = t;
            best_row[i] = h;
            best_col[i] = w;
            best_vec[i].resize(depth);
            for (std::size_t d = 0; d < depth; ++d)
              best_vec[i][d] = features[d * plane + h * plane_w + w];
          }
        }
    }
  }

  for (std::size_t i = 0; i < n_proto; ++i) {
    auto& p = model.prototypes[i];
    p.source_image_id = train[best_image[i]].image_id;
    p.row = best_row[i];
    p.col = best_col[i];
    p.reference = best_vec[i];
  }
}

struct TrainSettings {
  std::size_t epochs = 20;
  double lr = 0.02;
  bool project_after = true;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy; // on the training split
};

namespace detail {

inline void softmax_inplace(std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

} // namespace detail

// Plain SGD on the cross-entropy of head(softmax) over max-pooled similarities.
// The max over each similarity map routes its subgradient to the argmax
// location only. Deterministic given the rng seed.
inline TrainReport train_toy(PrototypeModel& model, const std::vector<LabeledImage>& train,
                             const TrainSettings& settings, const Rng& rng) {
  require(!train.empty(), ErrorKind::invalid_argument, "train_toy: empty train set");
  model.validate();
  const std::size_t n_proto = model.prototypes.size();
  const std::size_t n_class = model.head.num_classes;
  const Shape3 out = model.net.output_shape();
  const std::size_t plane = out.h * out.w;

  TrainReport report;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    auto shuffle_stream = rng.stream("train-shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_stream.next_below(i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t idx : order) {
      const LabeledImage& ex = train[idx];
      ActivationTrace trace = forward(model.net, ex.image);
      const Tensor& features = trace.features();

      // similarity peaks and their locations
      std::vector<double> scores(n_proto);
      std::vector<std::size_t> loc(n_proto);
      std::vector<double> d2_at(n_proto);
      for (std::size_t p = 0; p < n_proto; ++p) {
        const auto& ref = model.prototypes[p].reference;
        double best_s = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        double best_d2 = 0.0;
        for (std::size_t h = 0; h < out.h; ++h)
          for (std::size_t w = 0; w < out.w; ++w) {
            double d2 = distance_sq_at(features, h, w, ref);
            double s = similarity_from_d2(d2, model.similarity);
            if (s > best_s) {
              best_s = s;
              best_i = h * out.w + w;
              best_d2 = d2;
            }
          }
        scores[p] = best_s;
        loc[p] = best_i;
        d2_at[p] = best_d2;
      }

      std::vector<double> logits(n_class, 0.0);
      for (std::size_t c = 0; c < n_class; ++c)
        for (std::size_t p = 0; p < n_proto; ++p)
          logits[c] += model.head.weights(c, p) * scores[p];

      std::vector<double> prob = logits;
      detail::softmax_inplace(prob);
      double loss = -std::log(std::max(prob[ex.label], 1e-300));
      loss_sum += loss;
      if (static_cast<std::size_t>(
              std::max_element(logits.begin(), logits.end()) - logits.begin()) == ex.label)
        ++correct;

      // dL/dlogits = softmax - onehot
      std::vector<double> dlogits = prob;
      dlogits[ex.label] -= 1.0;

      // head gradient and ds
      std::vector<double> ds(n_proto, 0.0);
      for (std::size_t c = 0; c < n_class; ++c)
        for (std::size_t p = 0; p < n_proto; ++p) {
          ds[p] += model.head.weights(c, p) * dlogits[c];
        }

      // seed gradient on the feature map + prototype reference gradients
      Tensor seed(out.vec());
      std::vector<std::vector<double>> dref(n_proto);
      for (std::size_t p = 0; p < n_proto; ++p) {
        if (ds[p] == 0.0) continue;
        double dd2 = ds[p] * similarity_d2_derivative(d2_at[p], model.similarity);
        const auto& ref = model.prototypes[p].reference;
        dref[p].assign(ref.size(), 0.0);
        std::size_t offset = loc[p];
        for (std::size_t d = 0; d < ref.size(); ++d) {
          double diff = features[d * plane + offset] - ref[d];
          seed[d * plane + offset] += dd2 * 2.0 * diff;
          dref[p][d] = -dd2 * 2.0 * diff;
        }
      }

      ParameterGradients pg = parameter_gradients(model.net, trace, seed);

      // SGD step
      const double lr = settings.lr;
      for (std::size_t c = 0; c < n_class; ++c)
        for (std::size_t p = 0; p < n_proto; ++p)
          model.head.weights(c, p) -= lr * dlogits[c] * scores[p];
      for (std::size_t p = 0; p < n_proto; ++p)
        if (!dref[p].empty())
          for (std::size_t d = 0; d < dref[p].size(); ++d)
            model.prototypes[p].reference[d] -= lr * dref[p][d];
      for (std::size_t li = 0; li < model.net.layers.size(); ++li)
        if (model.net.layers[li].has_weights() && pg.per_layer[li].size() > 0)
          for (std::size_t wi = 0; wi < pg.per_layer[li].size(); ++wi)
            model.net.layers[li].weights[wi] -= lr * pg.per_layer[li][wi];
    }

    double mean_loss = loss_sum / static_cast<double>(train.size());
    require(std::isfinite(mean_loss), ErrorKind::training_diverged,
            "train_toy: loss is not finite at epoch " + std::to_string(epoch));
    report.epoch_loss.push_back(mean_loss);
    report.epoch_accuracy.push_back(static_cast<double>(correct) /
                                    static_cast<double>(train.size()));
  }

  if (settings.project_after) project_prototypes(model, train);
  return report;
}

// Fresh model: He-initialized convs, zero biases, prototypes warm-started from
// latent vectors of randomly chosen same-class training images, head seeded
// with the class pattern (+1 own class, -0.5 others).
struct ModelInit {
  std::size_t num_classes = 4;
  std::size_t prototypes_per_class = 2;
};

inline void he_init_conv(LayerSpec& layer, RngStream& stream) {
  double fan_in = static_cast<double>(layer.in_channels * layer.kernel_h * layer.kernel_w);
  double scale = std::sqrt(2.0 / fan_in);
  for (auto& v : layer.weights.data()) v = scale * stream.next_normal();
}

inline PrototypeModel initialize_model(Network net, const SimilaritySettings& similarity,
                                       const ModelInit& init,
                                       const std::vector<LabeledImage>& train,
                                       const std::vector<std::string>& class_names,
                                       const Rng& rng) {
  require(!train.empty(), ErrorKind::invalid_argument, "initialize_model: empty train set");
  PrototypeModel model;
  model.net = std::move(net);
  model.similarity = similarity;
  model.class_names = class_names;

  auto wstream = rng.stream("conv-init");
  for (auto& layer : model.net.layers)
    if (layer.kind == LayerKind::conv2d) he_init_conv(layer, wstream);
  // add_bias layers start at zero

  // index training images by class
  std::vector<std::vector<std::size_t>> by_class(init.num_classes);
  for (std::size_t t = 0; t < train.size(); ++t) {
    require(train[t].label < init.num_classes, ErrorKind::invalid_argument,
            "initialize_model: label out of range");
    by_class[train[t].label].push_back(t);
  }
  for (std::size_t c = 0; c < init.num_classes; ++c)
    require(!by_class[c].empty(), ErrorKind::invalid_argument,
            "initialize_model: class " + std::to_string(c) + " missing from train split");

  const Shape3 out = model.net.output_shape();
  const std::size_t plane = out.h * out.w;
  const std::size_t n_proto = init.num_classes * init.prototypes_per_class;
  model.prototypes.resize(n_proto);
  for (std::size_t i = 0; i < n_proto; ++i) {
    auto stream = rng.stream("proto-init", i);
    std::size_t cls = i % init.num_classes;
    std::size_t t = by_class[cls][stream.next_below(by_class[cls].size())];
    Tensor features = forward(model.net, train[t].image).features();
    // warm start at the location with the largest feature norm: glyph-like
    // structure tends to dominate the norm even at random initialization
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t p = 0; p < plane; ++p) {
      double norm = 0.0;
      for (std::size_t d = 0; d < out.c; ++d)
        norm += features[d * plane + p] * features[d * plane + p];
      if (norm > best_norm) {
        best_norm = norm;
        best = p;
      }
    }
    auto& proto = model.prototypes[i];
    proto.index = i;
    proto.class_assignment = static_cast<int>(cls);
    proto.source_image_id = train[t].image_id;
    proto.row = best / out.w;
    proto.col = best % out.w;
    proto.reference.resize(out.c);
    for (std::size_t d = 0; d < out.c; ++d)
      proto.reference[d] = features[d * plane + best];
  }

  model.head = DecisionHead(init.num_classes, n_proto);
  for (std::size_t c = 0; c < init.num_classes; ++c)
    for (std::size_t p = 0; p < n_proto; ++p)
      model.head.weights(c, p) =
          model.prototypes[p].class_assignment == static_cast<int>(c) ? 1.0 : -0.5;

  model.validate();
  return model;
}

inline double evaluate_accuracy(const PrototypeModel& model,
                                const std::vector<LabeledImage>& examples) {
  require(!examples.empty(), ErrorKind::invalid_argument, "evaluate_accuracy: empty set");
  std::size_t correct = 0;
  for (const auto& ex : examples)
    if (predicted_class(predict(model, ex.image)) == ex.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

} // namespace psan

#endif
