#include "beamsel/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "beamsel/errors.hpp"
#include "beamsel/io.hpp"
#include "beamsel/rng.hpp"

namespace beamsel {

using nlohmann::json;

namespace {

constexpr int kKernel = 2;  // all conv layers are 2x2, stride 1, same padding

struct Shape {
  bool spatial = false;
  int h = 0, w = 0, c = 0;  // spatial form
  int units = 0;            // flat form

  int flat() const { return spatial ? h * w * c : units; }
};

bool is_weighted(LayerKind k) {
  return k == LayerKind::Conv || k == LayerKind::FullyConnected ||
         k == LayerKind::Output;
}

// Shape of each layer's output; index 0 is the input layer itself.
std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers) {
  if (layers.empty() || layers.front().kind != LayerKind::Input)
    throw ConfigError("network must start with an input layer");
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerKind::Input:
        if (i != 0) throw ConfigError("input layer must come first");
        if (l.rows < 1 || l.cols < 1 || l.channels < 1)
          throw ConfigError("bad input shape");
        shapes.push_back({true, l.rows, l.cols, l.channels, 0});
        break;
      case LayerKind::Conv: {
        const Shape& in = shapes.back();
        if (!in.spatial) throw ConfigError("conv layer needs a spatial input");
        if (l.filters < 1) throw ConfigError("conv needs filters");
        shapes.push_back({true, in.h, in.w, l.filters, 0});
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::Dropout:
        shapes.push_back(shapes.back());
        break;
      case LayerKind::FullyConnected:
      case LayerKind::Output:
        if (l.units < 1) throw ConfigError("dense layer needs units");
        shapes.push_back({false, 0, 0, 0, l.units});
        break;
    }
  }
  return shapes;
}

// Patch matrix: one column per output position, rows ordered by
// (kernel row, kernel col, channel). Padding is after only, so the window
// anchored at (r, c) covers (r..r+1, c..c+1) with out-of-range taps zero.
RMat im2col(const RMat& a, int h, int w, int c, int batch) {
  const int hw = h * w;
  RMat k_mat = RMat::Zero(kKernel * kKernel * c, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const Eigen::Index out = static_cast<Eigen::Index>(b) * hw + r * w + col;
        for (int kr = 0; kr < kKernel; ++kr) {
          const int rr = r + kr;
          if (rr >= h) continue;
          for (int kc = 0; kc < kKernel; ++kc) {
            const int cc = col + kc;
            if (cc >= w) continue;
            const Eigen::Index src = static_cast<Eigen::Index>(b) * hw + rr * w + cc;
            const int base = (kr * kKernel + kc) * c;
            for (int ch = 0; ch < c; ++ch)
              k_mat(base + ch, out) = a(ch, src);
          }
        }
      }
  return k_mat;
}

// Adjoint of im2col: scatter patch gradients back onto the input grid.
RMat col2im(const RMat& dk, int h, int w, int c, int batch) {
  const int hw = h * w;
  RMat da = RMat::Zero(c, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const Eigen::Index out = static_cast<Eigen::Index>(b) * hw + r * w + col;
        for (int kr = 0; kr < kKernel; ++kr) {
          const int rr = r + kr;
          if (rr >= h) continue;
          for (int kc = 0; kc < kKernel; ++kc) {
            const int cc = col + kc;
            if (cc >= w) continue;
            const Eigen::Index src = static_cast<Eigen::Index>(b) * hw + rr * w + cc;
            const int base = (kr * kKernel + kc) * c;
            for (int ch = 0; ch < c; ++ch)
              da(ch, src) += dk(base + ch, out);
          }
        }
      }
  return da;
}

// Samples within a spatial activation occupy contiguous column blocks, so a
// per-sample column-major flatten is a straight memory remap.
RMat flatten(const RMat& a, const Shape& s, int batch) {
  const int per = s.h * s.w;
  RMat out(static_cast<Eigen::Index>(s.c) * per, batch);
  for (int b = 0; b < batch; ++b)
    out.col(b) = Eigen::Map<const RVec>(
        a.data() + static_cast<std::ptrdiff_t>(b) * per * s.c,
        static_cast<Eigen::Index>(per) * s.c);
  return out;
}

RMat unflatten(const RMat& flat, const Shape& s, int batch) {
  const int per = s.h * s.w;
  RMat out(s.c, static_cast<Eigen::Index>(batch) * per);
  for (int b = 0; b < batch; ++b)
    Eigen::Map<RVec>(out.data() + static_cast<std::ptrdiff_t>(b) * per * s.c,
                     static_cast<Eigen::Index>(per) * s.c) = flat.col(b);
  return out;
}

void softmax_inplace(RMat& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    RVec col = z.col(c);
    const double m = col.maxCoeff();
    col = (col.array() - m).exp();
    z.col(c) = col / col.sum();
  }
}

struct ForwardCache {
  // acts[i] is the output of layer i; masks[i] holds ReLU/dropout masks.
  std::vector<RMat> acts;
  std::vector<RMat> masks;
  int batch = 0;
};

RMat inputs_to_activation(const std::vector<InputTensor>& xs,
                          const std::vector<std::size_t>& idx,
                          const LayerSpec& input) {
  const int hw = input.rows * input.cols;
  RMat a(input.channels, static_cast<Eigen::Index>(idx.size()) * hw);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& t = xs[idx[b]];
    if (t.rows != input.rows || t.cols != input.cols)
      throw ShapeMismatch("input tensor shape does not match the network");
    for (int r = 0; r < input.rows; ++r)
      for (int c = 0; c < input.cols; ++c)
        for (int ch = 0; ch < input.channels; ++ch)
          a(ch, static_cast<Eigen::Index>(b) * hw + r * input.cols + c) =
              t.at(r, c, ch);
  }
  return a;
}

// Forward over a batch. `dropout_rng` enables training-mode inverted dropout.
ForwardCache forward_batch(const CnnModel& model,
                           const std::vector<Shape>& shapes, RMat input,
                           int batch, Rng* dropout_rng) {
  ForwardCache cache;
  cache.batch = batch;
  cache.acts.resize(model.layers.size());
  cache.masks.resize(model.layers.size());
  cache.acts[0] = std::move(input);

  std::size_t wi = 0;
  for (std::size_t i = 1; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    const RMat& prev = cache.acts[i - 1];
    const Shape& in_shape = shapes[i - 1];
    switch (layer.kind) {
      case LayerKind::Input:
        throw ConfigError("input layer must come first");
      case LayerKind::Conv: {
        const RMat k_mat = im2col(prev, in_shape.h, in_shape.w, in_shape.c, batch);
        RMat out = model.weights[wi] * k_mat;
        out.colwise() += model.biases[wi];
        cache.masks[i] = k_mat;  // reused by the backward pass
        cache.acts[i] = std::move(out);
        ++wi;
        break;
      }
      case LayerKind::ReLU:
        cache.acts[i] = prev.cwiseMax(0.0);
        cache.masks[i] = (prev.array() > 0.0).cast<double>();
        break;
      case LayerKind::Dropout:
        if (dropout_rng) {
          RMat mask(prev.rows(), prev.cols());
          const double keep = 1.0 - layer.drop_p;
          for (Eigen::Index c = 0; c < mask.cols(); ++c)
            for (Eigen::Index r = 0; r < mask.rows(); ++r)
              mask(r, c) =
                  dropout_rng->uniform(0.0, 1.0) < keep ? 1.0 / keep : 0.0;
          cache.acts[i] = prev.cwiseProduct(mask);
          cache.masks[i] = std::move(mask);
        } else {
          cache.acts[i] = prev;
        }
        break;
      case LayerKind::FullyConnected:
      case LayerKind::Output: {
        const RMat in_flat =
            in_shape.spatial ? flatten(prev, in_shape, batch) : prev;
        RMat out = model.weights[wi] * in_flat;
        out.colwise() += model.biases[wi];
        if (layer.kind == LayerKind::Output && model.head == Head::Class)
          softmax_inplace(out);
        cache.acts[i] = std::move(out);
        ++wi;
        break;
      }
    }
  }
  return cache;
}

struct Gradients {
  std::vector<RMat> d_weights;
  std::vector<RVec> d_biases;
};

// Backward from d_out = dLoss/dZ at the output layer (softmax already folded
// in for the class head). Mean-over-batch scaling is the caller's job.
Gradients backward_batch(const CnnModel& model,
                         const std::vector<Shape>& shapes,
                         const ForwardCache& cache, RMat d_out) {
  Gradients g;
  g.d_weights.resize(model.weights.size());
  g.d_biases.resize(model.biases.size());

  std::size_t wi = model.weights.size();
  RMat grad = std::move(d_out);
  for (std::size_t i = model.layers.size(); i-- > 1;) {
    const auto& layer = model.layers[i];
    const Shape& in_shape = shapes[i - 1];
    switch (layer.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Conv: {
        --wi;
        const RMat& k_mat = cache.masks[i];
        g.d_weights[wi] = grad * k_mat.transpose();
        g.d_biases[wi] = grad.rowwise().sum();
        const RMat dk = model.weights[wi].transpose() * grad;
        grad = col2im(dk, in_shape.h, in_shape.w, in_shape.c, cache.batch);
        break;
      }
      case LayerKind::ReLU:
        grad = grad.cwiseProduct(cache.masks[i]);
        break;
      case LayerKind::Dropout:
        if (cache.masks[i].size() > 0) grad = grad.cwiseProduct(cache.masks[i]);
        break;
      case LayerKind::FullyConnected:
      case LayerKind::Output: {
        --wi;
        const RMat in_flat = in_shape.spatial
                                 ? flatten(cache.acts[i - 1], in_shape, cache.batch)
                                 : cache.acts[i - 1];
        g.d_weights[wi] = grad * in_flat.transpose();
        g.d_biases[wi] = grad.rowwise().sum();
        RMat d_in = model.weights[wi].transpose() * grad;
        grad = in_shape.spatial ? unflatten(d_in, in_shape, cache.batch)
                                : std::move(d_in);
        break;
      }
    }
  }
  return g;
}

double cross_entropy(const RMat& probs, const std::vector<std::uint32_t>& ys,
                     const std::vector<std::size_t>& idx) {
  double loss = 0.0;
  for (Eigen::Index c = 0; c < probs.cols(); ++c)
    loss -= std::log(std::max(probs(ys[idx[static_cast<std::size_t>(c)]], c),
                              1e-300));
  return loss / static_cast<double>(probs.cols());
}

}  // namespace

std::vector<LayerSpec> canonical_stack(int rows, int cols, int out_units) {
  std::vector<LayerSpec> layers;
  layers.push_back({LayerKind::Input, rows, cols, 3});
  for (int i = 0; i < 3; ++i) {
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.filters = 64;
    layers.push_back(conv);
    layers.push_back({LayerKind::ReLU});
  }
  for (int i = 0; i < 2; ++i) {
    LayerSpec fc;
    fc.kind = LayerKind::FullyConnected;
    fc.units = 512;
    layers.push_back(fc);
    layers.push_back({LayerKind::ReLU});
    layers.push_back({LayerKind::Dropout});
  }
  LayerSpec out;
  out.kind = LayerKind::Output;
  out.units = out_units;
  layers.push_back(out);
  return layers;
}

void CnnModel::validate() const {
  const auto shapes = infer_shapes(layers);
  std::size_t wi = 0;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (!is_weighted(layers[i].kind)) continue;
    if (wi >= weights.size()) throw ConfigError("missing weight tensors");
    const Shape& in = shapes[i - 1];
    const Eigen::Index fan_in = layers[i].kind == LayerKind::Conv
                                    ? kKernel * kKernel * in.c
                                    : in.flat();
    const Eigen::Index fan_out = layers[i].kind == LayerKind::Conv
                                     ? layers[i].filters
                                     : layers[i].units;
    if (weights[wi].rows() != fan_out || weights[wi].cols() != fan_in ||
        biases[wi].size() != fan_out)
      throw ShapeMismatch("weight tensor inconsistent with the layer chain");
    if (!weights[wi].allFinite() || !biases[wi].allFinite())
      throw NumericalError("non-finite model weights");
    ++wi;
  }
  if (wi != weights.size()) throw ConfigError("extra weight tensors");
}

CnnModel make_model(const std::vector<LayerSpec>& layers, Head head,
                    std::uint64_t init_seed) {
  CnnModel model;
  model.layers = layers;
  model.head = head;
  model.init_seed = init_seed;
  const auto shapes = infer_shapes(layers);
  Rng rng(init_seed);
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (!is_weighted(layers[i].kind)) continue;
    const Shape& in = shapes[i - 1];
    int fan_in, fan_out, rows;
    if (layers[i].kind == LayerKind::Conv) {
      fan_in = kKernel * kKernel * in.c;
      fan_out = kKernel * kKernel * layers[i].filters;
      rows = layers[i].filters;
    } else {
      fan_in = in.flat();
      fan_out = layers[i].units;
      rows = layers[i].units;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    RMat w(rows, layers[i].kind == LayerKind::Conv ? kKernel * kKernel * in.c
                                                   : fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        w(r, c) = rng.uniform(-limit, limit);
    model.weights.push_back(std::move(w));
    model.biases.push_back(RVec::Zero(rows));
  }
  return model;
}

RVec forward(const CnnModel& model, const InputTensor& x) {
  const auto shapes = infer_shapes(model.layers);
  const auto cache = forward_batch(
      model, shapes, inputs_to_activation({x}, {0}, model.layers.front()), 1,
      nullptr);
  // Batch of one: the whole final activation belongs to this sample. Spatial
  // outputs flatten column-major (channel fastest, then position).
  const RMat& out = cache.acts.back();
  return Eigen::Map<const RVec>(out.data(), out.size());
}

RVec predict(const CnnModel& model, const InputTensor& x) {
  RVec out = forward(model, x);
  if (model.head == Head::Regress && !model.target_mean.empty()) {
    if (out.size() != static_cast<Eigen::Index>(model.target_mean.size()))
      throw ShapeMismatch("standardization parameters do not match the output");
    for (Eigen::Index i = 0; i < out.size(); ++i)
      out(i) = out(i) * model.target_std[static_cast<std::size_t>(i)] +
               model.target_mean[static_cast<std::size_t>(i)];
  }
  return out;
}

void TrainConfig::validate() const {
  if (lr < 0.0) throw ConfigError("negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("bad momentum");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ConfigError("val_fraction must lie in (0, 1)");
}

namespace {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

Split stratified_split(const std::vector<std::uint32_t>& ys,
                       double val_fraction, std::uint64_t seed) {
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ys.size(); ++i) by_class[ys[i]].push_back(i);
  Split split;
  Rng rng(seed);
  for (auto& [cls, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const auto n_train = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
        1, std::lround((1.0 - val_fraction) * static_cast<double>(idx.size()))));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? split.train : split.val).push_back(idx[i]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

Split plain_split(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  const auto n_train = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
      1, std::lround((1.0 - val_fraction) * static_cast<double>(n))));
  Split split;
  split.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

// Shared SGD-with-momentum loop. `loss_grad` fills d_out (already divided by
// the batch size) and returns (loss, correct-count) for the batch.
using LossGrad = std::function<std::pair<double, double>(
    const RMat& out, const std::vector<std::size_t>& idx, RMat& d_out)>;

std::vector<EpochMetrics> sgd_train(
    CnnModel& model, const std::vector<InputTensor>& xs, const Split& split,
    const TrainConfig& cfg, const LossGrad& loss_grad,
    const std::function<std::pair<double, double>(
        const RMat& out, const std::vector<std::size_t>& idx)>& evaluate,
    const MetricsSink& sink) {
  cfg.validate();
  const auto shapes = infer_shapes(model.layers);

  std::vector<RMat> vel_w;
  std::vector<RVec> vel_b;
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    vel_w.push_back(RMat::Zero(model.weights[i].rows(), model.weights[i].cols()));
    vel_b.push_back(RVec::Zero(model.biases[i].size()));
  }

  Rng order_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> train_idx = split.train;
  const int batch =
      std::min<int>(cfg.batch, static_cast<int>(train_idx.size()));

  std::vector<EpochMetrics> metrics;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng.engine());
    double loss_sum = 0.0, correct_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += batch) {
      const std::size_t stop = std::min(train_idx.size(),
                                        start + static_cast<std::size_t>(batch));
      const std::vector<std::size_t> idx(train_idx.begin() + static_cast<std::ptrdiff_t>(start),
                                         train_idx.begin() + static_cast<std::ptrdiff_t>(stop));
      auto cache = forward_batch(model, shapes,
                                 inputs_to_activation(xs, idx, model.layers.front()),
                                 static_cast<int>(idx.size()), &dropout_rng);
      RMat d_out;
      const auto [loss, correct] = loss_grad(cache.acts.back(), idx, d_out);
      if (!std::isfinite(loss)) throw DivergedLoss("training loss is not finite");
      loss_sum += loss * static_cast<double>(idx.size());
      correct_sum += correct;
      seen += idx.size();

      const auto grads = backward_batch(model, shapes, cache, std::move(d_out));
      for (std::size_t l = 0; l < model.weights.size(); ++l) {
        vel_w[l] = cfg.momentum * vel_w[l] - cfg.lr * grads.d_weights[l];
        vel_b[l] = cfg.momentum * vel_b[l] - cfg.lr * grads.d_biases[l];
        model.weights[l] += vel_w[l];
        model.biases[l] += vel_b[l];
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_accuracy = correct_sum / static_cast<double>(seen);
    if (!split.val.empty()) {
      auto cache = forward_batch(
          model, shapes, inputs_to_activation(xs, split.val, model.layers.front()),
          static_cast<int>(split.val.size()), nullptr);
      const auto [vl, vc] = evaluate(cache.acts.back(), split.val);
      m.val_loss = vl;
      m.val_accuracy = vc / static_cast<double>(split.val.size());
    }
    metrics.push_back(m);
    if (sink) sink(m);
    if (cfg.early_stop_train_accuracy &&
        m.train_accuracy >= *cfg.early_stop_train_accuracy)
      break;
  }
  return metrics;
}

}  // namespace

std::vector<EpochMetrics> train_classifier(CnnModel& model,
                                           const std::vector<InputTensor>& xs,
                                           const std::vector<std::uint32_t>& ys,
                                           const TrainConfig& cfg,
                                           const MetricsSink& sink) {
  if (xs.empty() || xs.size() != ys.size())
    throw ConfigError("classifier dataset is empty or inconsistent");
  if (model.head != Head::Class) throw ConfigError("model head is not a classifier");
  const Split split = stratified_split(ys, cfg.val_fraction, derive_seed(cfg.seed, 3));

  auto count_correct = [&ys](const RMat& out, const std::vector<std::size_t>& idx) {
    double correct = 0.0;
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      Eigen::Index arg = 0;
      out.col(c).maxCoeff(&arg);
      if (static_cast<std::uint32_t>(arg) == ys[idx[static_cast<std::size_t>(c)]])
        correct += 1.0;
    }
    return correct;
  };

  auto loss_grad = [&](const RMat& out, const std::vector<std::size_t>& idx,
                       RMat& d_out) {
    d_out = out;
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      d_out(ys[idx[static_cast<std::size_t>(c)]], c) -= 1.0;
    d_out *= inv;
    return std::make_pair(cross_entropy(out, ys, idx), count_correct(out, idx));
  };
  auto evaluate = [&](const RMat& out, const std::vector<std::size_t>& idx) {
    return std::make_pair(cross_entropy(out, ys, idx), count_correct(out, idx));
  };
  return sgd_train(model, xs, split, cfg, loss_grad, evaluate, sink);
}

std::vector<EpochMetrics> train_regressor(
    CnnModel& model, const std::vector<InputTensor>& xs,
    const std::vector<std::vector<double>>& targets, const TrainConfig& cfg,
    const MetricsSink& sink) {
  if (xs.empty() || xs.size() != targets.size())
    throw ConfigError("regression dataset is empty or inconsistent");
  if (model.head != Head::Regress) throw ConfigError("model head is not a regressor");
  const auto g = targets.front().size();
  const Split split = plain_split(xs.size(), cfg.val_fraction, derive_seed(cfg.seed, 3));

  // Standardize targets over the training split; stored for prediction time.
  model.target_mean.assign(g, 0.0);
  model.target_std.assign(g, 0.0);
  for (const std::size_t i : split.train)
    for (std::size_t k = 0; k < g; ++k) model.target_mean[k] += targets[i][k];
  for (double& m : model.target_mean) m /= static_cast<double>(split.train.size());
  for (const std::size_t i : split.train)
    for (std::size_t k = 0; k < g; ++k) {
      const double d = targets[i][k] - model.target_mean[k];
      model.target_std[k] += d * d;
    }
  for (double& s : model.target_std) {
    s = std::sqrt(s / static_cast<double>(split.train.size()));
    if (s < 1e-8) s = 1.0;  // constant dimension, leave unscaled
  }

  auto standardized = [&](std::size_t sample, std::size_t k) {
    return (targets[sample][k] - model.target_mean[k]) / model.target_std[k];
  };
  auto mse = [&](const RMat& out, const std::vector<std::size_t>& idx) {
    double loss = 0.0;
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      for (Eigen::Index k = 0; k < out.rows(); ++k) {
        const double d = out(k, c) - standardized(idx[static_cast<std::size_t>(c)],
                                                  static_cast<std::size_t>(k));
        loss += d * d;
      }
    return loss / (static_cast<double>(out.cols()) * static_cast<double>(g));
  };

  auto loss_grad = [&](const RMat& out, const std::vector<std::size_t>& idx,
                       RMat& d_out) {
    d_out.resize(out.rows(), out.cols());
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      for (Eigen::Index k = 0; k < out.rows(); ++k)
        d_out(k, c) = out(k, c) - standardized(idx[static_cast<std::size_t>(c)],
                                               static_cast<std::size_t>(k));
    d_out *= 2.0 / (static_cast<double>(idx.size()) * static_cast<double>(g));
    return std::make_pair(mse(out, idx), 0.0);
  };
  auto evaluate = [&](const RMat& out, const std::vector<std::size_t>& idx) {
    return std::make_pair(mse(out, idx), 0.0);
  };
  return sgd_train(model, xs, split, cfg, loss_grad, evaluate, sink);
}

namespace {

double loss_of(const CnnModel& model, const std::vector<Shape>& shapes,
               const InputTensor& x,
               const std::function<double(const RVec&)>& loss) {
  const auto cache = forward_batch(
      model, shapes, inputs_to_activation({x}, {0}, model.layers.front()), 1,
      nullptr);
  return loss(cache.acts.back().col(0));
}

double gradient_check_impl(const CnnModel& model, const InputTensor& x,
                           const std::function<double(const RVec&)>& loss,
                           const std::function<RVec(const RVec&)>& d_loss,
                           int n_weights, std::uint64_t seed) {
  const auto shapes = infer_shapes(model.layers);
  const auto cache = forward_batch(
      model, shapes, inputs_to_activation({x}, {0}, model.layers.front()), 1,
      nullptr);
  RMat d_out = d_loss(cache.acts.back().col(0));
  const auto grads =
      backward_batch(model, shapes, cache, std::move(d_out));

  CnnModel probe = model;
  const double h = 1e-4;
  auto rel_err = [](double a, double b) {
    const double denom = std::max(std::abs(a) + std::abs(b), 1e-8);
    return std::abs(a - b) / denom;
  };

  Rng rng(seed);
  double max_err = 0.0;
  for (int k = 0; k < n_weights; ++k) {
    const auto layer = rng.integer(model.weights.size());
    const bool bias = rng.integer(8) == 0;
    double* slot;
    double analytic;
    if (bias) {
      const auto i = rng.integer(static_cast<std::uint64_t>(model.biases[layer].size()));
      slot = &probe.biases[layer](static_cast<Eigen::Index>(i));
      analytic = grads.d_biases[layer](static_cast<Eigen::Index>(i));
    } else {
      const auto i = rng.integer(static_cast<std::uint64_t>(model.weights[layer].size()));
      slot = probe.weights[layer].data() + i;
      analytic = *(grads.d_weights[layer].data() + i);
    }
    const double w0 = *slot;
    *slot = w0 + h;
    const double lp = loss_of(probe, shapes, x, loss);
    *slot = w0 - h;
    const double lm = loss_of(probe, shapes, x, loss);
    *slot = w0;
    const double central = (lp - lm) / (2.0 * h);
    double err = rel_err(central, analytic);
    if (err > 1e-3) {
      // Weights that flip a ReLU within +-h have no two-sided derivative;
      // accept when the analytic value matches a one-sided slope instead.
      const double l0 = loss_of(probe, shapes, x, loss);
      const double right = (lp - l0) / h;
      const double left = (l0 - lm) / h;
      if (std::min(rel_err(right, analytic), rel_err(left, analytic)) < 1e-3)
        continue;
      // A kink strictly inside (w0-h, w0+h) contaminates both one-sided
      // slopes as well. The loss is piecewise smooth, so shrinking the step
      // moves a smooth estimate by O(h^2); a large change exposes the kink.
      // A backward-pass bug cannot hide here: it yields step-stable central
      // differences that still disagree with the analytic value.
      const double hf = h / 4.0;
      *slot = w0 + hf;
      const double lpf = loss_of(probe, shapes, x, loss);
      *slot = w0 - hf;
      const double lmf = loss_of(probe, shapes, x, loss);
      *slot = w0;
      const double fine = (lpf - lmf) / (2.0 * hf);
      if (rel_err(central, fine) > 1e-3) continue;
      err = rel_err(fine, analytic);
    }
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace

double gradient_check_class(const CnnModel& model, const InputTensor& x,
                            std::uint32_t label, int n_weights,
                            std::uint64_t seed) {
  auto loss = [label](const RVec& probs) {
    return -std::log(std::max(probs(label), 1e-300));
  };
  auto d_loss = [label](const RVec& probs) {
    RVec d = probs;
    d(label) -= 1.0;
    return d;
  };
  return gradient_check_impl(model, x, loss, d_loss, n_weights, seed);
}

double gradient_check_regress(const CnnModel& model, const InputTensor& x,
                              const std::vector<double>& target, int n_weights,
                              std::uint64_t seed) {
  const Eigen::Map<const RVec> t(target.data(),
                                 static_cast<Eigen::Index>(target.size()));
  auto loss = [&t](const RVec& out) {
    return (out - t).squaredNorm() / static_cast<double>(t.size());
  };
  auto d_loss = [&t](const RVec& out) {
    return RVec(2.0 / static_cast<double>(t.size()) * (out - t));
  };
  return gradient_check_impl(model, x, loss, d_loss, n_weights, seed);
}

CnnModel quantize(const CnnModel& model, int bits) {
  if (bits < 1 || bits > 32) throw ConfigError("bits must lie in [1, 32]");
  CnnModel q = model;
  q.quant = QuantizationSpec{bits, {}};
  for (std::size_t l = 0; l < q.weights.size(); ++l) {
    RMat& w = q.weights[l];
    RVec& b = q.biases[l];
    if (bits == 1) {
      const double s =
          (w.cwiseAbs().sum() + b.cwiseAbs().sum()) /
          static_cast<double>(w.size() + b.size());
      q.quant->scales.push_back(s);
      w = w.unaryExpr([s](double v) { return v >= 0.0 ? s : -s; });
      b = b.unaryExpr([s](double v) { return v >= 0.0 ? s : -s; });
      continue;
    }
    const double max_abs = std::max(w.cwiseAbs().maxCoeff(),
                                    b.size() > 0 ? b.cwiseAbs().maxCoeff() : 0.0);
    const double levels = std::pow(2.0, bits - 1) - 1.0;
    const double scale = max_abs > 0.0 ? max_abs / levels : 1.0;
    q.quant->scales.push_back(scale);
    auto snap = [scale, levels](double v) {
      return std::clamp(std::round(v / scale), -levels, levels) * scale;
    };
    w = w.unaryExpr(snap);
    b = b.unaryExpr(snap);
  }
  return q;
}

namespace {

json layer_to_json(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Input:
      return json{{"kind", "input"}, {"rows", l.rows}, {"cols", l.cols},
                  {"channels", l.channels}};
    case LayerKind::Conv:
      return json{{"kind", "conv"}, {"filters", l.filters}};
    case LayerKind::ReLU:
      return json{{"kind", "relu"}};
    case LayerKind::FullyConnected:
      return json{{"kind", "fc"}, {"units", l.units}};
    case LayerKind::Dropout:
      return json{{"kind", "dropout"}, {"p", l.drop_p}};
    case LayerKind::Output:
      return json{{"kind", "output"}, {"units", l.units}};
  }
  throw ConfigError("unknown layer kind");
}

LayerSpec layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  LayerSpec l;
  if (kind == "input") {
    l.kind = LayerKind::Input;
    l.rows = j.at("rows").get<int>();
    l.cols = j.at("cols").get<int>();
    l.channels = j.at("channels").get<int>();
  } else if (kind == "conv") {
    l.kind = LayerKind::Conv;
    l.filters = j.at("filters").get<int>();
  } else if (kind == "relu") {
    l.kind = LayerKind::ReLU;
  } else if (kind == "fc") {
    l.kind = LayerKind::FullyConnected;
    l.units = j.at("units").get<int>();
  } else if (kind == "dropout") {
    l.kind = LayerKind::Dropout;
    l.drop_p = j.at("p").get<double>();
  } else if (kind == "output") {
    l.kind = LayerKind::Output;
    l.units = j.at("units").get<int>();
  } else {
    throw ConfigError("unknown layer kind: " + kind);
  }
  return l;
}

// Packs unsigned codes of `bits` bits each, LSB first within bytes.
class BitPacker {
 public:
  explicit BitPacker(int bits) : bits_(bits) {}
  void push(std::uint64_t code) {
    for (int i = 0; i < bits_; ++i) {
      if ((code >> i) & 1ULL) acc_ |= (1U << fill_);
      if (++fill_ == 8) {
        bytes_.push_back(static_cast<char>(acc_));
        acc_ = 0;
        fill_ = 0;
      }
    }
  }
  std::vector<char> finish() {
    if (fill_ > 0) {
      bytes_.push_back(static_cast<char>(acc_));
      acc_ = 0;
      fill_ = 0;
    }
    return std::move(bytes_);
  }

 private:
  int bits_;
  std::vector<char> bytes_;
  unsigned acc_ = 0;
  int fill_ = 0;
};

class BitReader {
 public:
  BitReader(const std::vector<char>& bytes, int bits)
      : bytes_(bytes), bits_(bits) {}
  std::uint64_t next() {
    std::uint64_t code = 0;
    for (int i = 0; i < bits_; ++i) {
      const std::size_t byte = pos_ / 8;
      if (byte >= bytes_.size()) throw ConfigError("codes.bin truncated");
      if ((static_cast<unsigned char>(bytes_[byte]) >> (pos_ % 8)) & 1U)
        code |= (1ULL << i);
      ++pos_;
    }
    return code;
  }

 private:
  const std::vector<char>& bytes_;
  int bits_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_model(const CnnModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json layers = json::array();
  for (const auto& l : model.layers) layers.push_back(layer_to_json(l));
  json meta{{"format_version", 1},
            {"head", model.head == Head::Class ? "class" : "regress"},
            {"init_seed", model.init_seed},
            {"layers", layers},
            {"target_mean", model.target_mean},
            {"target_std", model.target_std}};
  if (model.quant)
    meta["quant"] = json{{"bits", model.quant->bits},
                         {"scales", model.quant->scales}};
  std::ofstream js(dir / "model.json");
  if (!js) throw ConfigError("cannot write model.json");
  js << meta.dump(2) << "\n";

  if (!model.quant) {
    std::ofstream os(dir / "weights.bin", std::ios::binary);
    if (!os) throw ConfigError("cannot write weights.bin");
    std::vector<float> buf;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      buf.clear();
      const RMat& w = model.weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c)
          buf.push_back(static_cast<float>(w(r, c)));
      for (Eigen::Index i = 0; i < model.biases[l].size(); ++i)
        buf.push_back(static_cast<float>(model.biases[l](i)));
      write_f32(os, buf);
    }
    return;
  }

  const int bits = model.quant->bits;
  BitPacker packer(bits);
  const double offset = bits >= 2 ? std::pow(2.0, bits - 1) - 1.0 : 0.0;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const double scale = model.quant->scales[l];
    auto encode = [&](double v) {
      if (bits == 1) return static_cast<std::uint64_t>(v >= 0.0 ? 1 : 0);
      return static_cast<std::uint64_t>(std::llround(v / scale) +
                                        static_cast<long long>(offset));
    };
    const RMat& w = model.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) packer.push(encode(w(r, c)));
    for (Eigen::Index i = 0; i < model.biases[l].size(); ++i)
      packer.push(encode(model.biases[l](i)));
  }
  const auto bytes = packer.finish();
  std::ofstream os(dir / "codes.bin", std::ios::binary);
  if (!os) throw ConfigError("cannot write codes.bin");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CnnModel load_model(const std::filesystem::path& dir) {
  std::ifstream js(dir / "model.json");
  if (!js) throw ConfigError("cannot open " + (dir / "model.json").string());
  const json meta = json::parse(js);
  if (meta.at("format_version").get<int>() != 1)
    throw ConfigError("unsupported model format version");

  CnnModel model;
  for (const auto& l : meta.at("layers")) model.layers.push_back(layer_from_json(l));
  model.head = meta.at("head").get<std::string>() == "class" ? Head::Class
                                                             : Head::Regress;
  model.init_seed = meta.at("init_seed").get<std::uint64_t>();
  model.target_mean = meta.at("target_mean").get<std::vector<double>>();
  model.target_std = meta.at("target_std").get<std::vector<double>>();

  // Rebuild weight shapes from the layer chain.
  const auto shapes = infer_shapes(model.layers);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> w_shapes;
  for (std::size_t i = 1; i < model.layers.size(); ++i) {
    if (!is_weighted(model.layers[i].kind)) continue;
    const Shape& in = shapes[i - 1];
    if (model.layers[i].kind == LayerKind::Conv)
      w_shapes.emplace_back(model.layers[i].filters, kKernel * kKernel * in.c);
    else
      w_shapes.emplace_back(model.layers[i].units, in.flat());
  }

  if (meta.contains("quant")) {
    QuantizationSpec q;
    q.bits = meta.at("quant").at("bits").get<int>();
    q.scales = meta.at("quant").at("scales").get<std::vector<double>>();
    model.quant = q;
    std::ifstream is(dir / "codes.bin", std::ios::binary);
    if (!is) throw ConfigError("cannot open codes.bin");
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    BitReader reader(bytes, q.bits);
    const double offset = q.bits >= 2 ? std::pow(2.0, q.bits - 1) - 1.0 : 0.0;
    for (std::size_t l = 0; l < w_shapes.size(); ++l) {
      const double scale = q.scales[l];
      auto decode = [&]() {
        const auto code = reader.next();
        if (q.bits == 1) return code ? scale : -scale;
        return (static_cast<double>(static_cast<long long>(code) -
                                    static_cast<long long>(offset))) *
               scale;
      };
      RMat w(w_shapes[l].first, w_shapes[l].second);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = decode();
      RVec b(w_shapes[l].first);
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = decode();
      model.weights.push_back(std::move(w));
      model.biases.push_back(std::move(b));
    }
  } else {
    const auto raw = read_f32(dir / "weights.bin");
    std::size_t k = 0;
    for (const auto& [rows, cols] : w_shapes) {
      RMat w(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
          if (k >= raw.size()) throw ConfigError("weights.bin truncated");
          w(r, c) = raw[k++];
        }
      RVec b(rows);
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (k >= raw.size()) throw ConfigError("weights.bin truncated");
        b(i) = raw[k++];
      }
      model.weights.push_back(std::move(w));
      model.biases.push_back(std::move(b));
    }
    if (k != raw.size()) throw ConfigError("weights.bin has trailing data");
  }
  model.validate();
  return model;
}

std::pair<SubarrayConfig, HybridBeamformers> predict_pipeline(
    const CnnModel& cnn_as, const CnnModel& cnn_rf, const CMat& h_tilde,
    const SystemDims& dims, const std::vector<SubarrayConfig>& class_table) {
  if (class_table.empty()) throw ConfigError("empty class table");
  const RVec probs = predict(cnn_as, InputTensor::from_channel(h_tilde));
  Eigen::Index arg = 0;
  probs.maxCoeff(&arg);
  if (arg >= static_cast<Eigen::Index>(class_table.size()))
    throw ShapeMismatch("classifier output exceeds the class table");
  const SubarrayConfig& cfg = class_table[static_cast<std::size_t>(arg)];

  const RVec z = predict(
      cnn_rf, InputTensor::from_channel(select_rows(h_tilde, cfg.indices)));
  const std::vector<double> label(z.data(), z.data() + z.size());
  return {cfg, reconstruct_beamformers(label, dims)};
}

}  // namespace beamsel
