#include "softdiamond/model.hpp"

#include <algorithm>
#include <cmath>

#include "softdiamond/rng.hpp"

namespace softdiamond::net {

namespace {

constexpr char kMagic[] = "SDMC";
constexpr std::uint32_t kCheckpointVersion = 1;

Shape with_batch(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

void add_param(std::vector<Tensor>& params, std::vector<ParamInfo>& info,
               std::vector<std::size_t>& owned, std::size_t layer, const char* name, Shape shape,
               bool prior) {
  owned.push_back(params.size());
  params.emplace_back(std::move(shape));
  info.push_back({layer, name, prior});
}

}  // namespace

ModelBuilder::ModelBuilder(Shape input_shape) {
  if (input_shape.empty()) throw ShapeMismatch("input shape must have rank >= 1");
  for (auto d : input_shape) {
    if (d < 1) throw ShapeMismatch("input extents must be >= 1");
  }
  model_.shapes_.push_back(std::move(input_shape));
}

ModelBuilder& ModelBuilder::add(const LayerSpec& spec) {
  Model& m = model_;
  const Shape in = m.shapes_.back();
  const std::size_t layer = m.layers_.size();
  const std::string where = "layer " + std::to_string(layer) + " (" + to_string(spec.kind) + "): ";
  std::vector<std::size_t> owned;
  std::vector<std::size_t> state;
  Shape out;
  switch (spec.kind) {
    case LayerKind::Dense: {
      if (in.size() != 1) throw ShapeMismatch(where + "needs flat input, got " + shape_string(in));
      if (spec.units < 1) throw ShapeMismatch(where + "units must be >= 1");
      add_param(m.params_, m.info_, owned, layer, "weight", {spec.units, in[0]}, true);
      add_param(m.params_, m.info_, owned, layer, "bias", {spec.units}, false);
      out = {spec.units};
      break;
    }
    case LayerKind::Conv2D: {
      if (in.size() != 3) throw ShapeMismatch(where + "needs [C, H, W] input, got " + shape_string(in));
      if (spec.out_channels < 1 || spec.kernel < 1 || spec.stride < 1) {
        throw ShapeMismatch(where + "channels, kernel and stride must be >= 1");
      }
      if (in[1] + 2 * spec.padding < spec.kernel || in[2] + 2 * spec.padding < spec.kernel) {
        throw ShapeMismatch(where + "kernel larger than padded input " + shape_string(in));
      }
      add_param(m.params_, m.info_, owned, layer, "weight",
                {spec.out_channels, in[0], spec.kernel, spec.kernel}, true);
      add_param(m.params_, m.info_, owned, layer, "bias", {spec.out_channels}, false);
      out = {spec.out_channels, (in[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1,
             (in[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1};
      break;
    }
    case LayerKind::BatchNorm: {
      if (in.size() != 1 && in.size() != 3) {
        throw ShapeMismatch(where + "needs [C] or [C, H, W] input, got " + shape_string(in));
      }
      if (!(spec.bn_momentum > 0.0 && spec.bn_momentum <= 1.0) || !(spec.bn_eps > 0.0)) {
        throw ShapeMismatch(where + "momentum must lie in (0, 1] and eps > 0");
      }
      add_param(m.params_, m.info_, owned, layer, "gamma", {in[0]}, false);
      add_param(m.params_, m.info_, owned, layer, "beta", {in[0]}, false);
      m.params_[owned[0]].fill(1.0);
      state.push_back(m.state_.size());
      m.state_.emplace_back(Shape{in[0]}, 0.0);
      state.push_back(m.state_.size());
      m.state_.emplace_back(Shape{in[0]}, 1.0);
      out = in;
      break;
    }
    case LayerKind::ReLU:
      out = in;
      break;
    case LayerKind::MaxPool: {
      if (in.size() != 3) throw ShapeMismatch(where + "needs [C, H, W] input, got " + shape_string(in));
      if (spec.pool < 1 || spec.stride < 1 || in[1] < spec.pool || in[2] < spec.pool) {
        throw ShapeMismatch(where + "pool window does not fit " + shape_string(in));
      }
      out = {in[0], (in[1] - spec.pool) / spec.stride + 1, (in[2] - spec.pool) / spec.stride + 1};
      break;
    }
    case LayerKind::ResidualAdd: {
      if (spec.skip_from < 0 || spec.skip_from >= static_cast<std::int64_t>(m.shapes_.size())) {
        throw ShapeMismatch(where + "skip source " + std::to_string(spec.skip_from) +
                            " is not an earlier activation");
      }
      const Shape& skip = m.shapes_[static_cast<std::size_t>(spec.skip_from)];
      if (skip != in) {
        throw ShapeMismatch(where + "skip shape " + shape_string(skip) + " != " + shape_string(in));
      }
      out = in;
      break;
    }
    case LayerKind::Flatten:
      out = {shape_size(in)};
      break;
    case LayerKind::Softmax:
      if (in.size() != 1) throw ShapeMismatch(where + "needs flat input, got " + shape_string(in));
      out = in;
      break;
    default:
      throw ShapeMismatch(where + "unknown layer kind");
  }
  m.layers_.push_back(spec);
  m.layer_params_.push_back(std::move(owned));
  m.layer_state_.push_back(std::move(state));
  m.shapes_.push_back(std::move(out));
  return *this;
}

Model ModelBuilder::build() const {
  Model m = model_;
  m.dropout_sites_.clear();
  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    if (m.layers_[i].kind != LayerKind::ReLU) continue;
    std::size_t j = i + 1;
    while (j < m.layers_.size() && m.layers_[j].kind == LayerKind::Flatten) ++j;
    if (j < m.layers_.size() && m.layers_[j].kind == LayerKind::Dense) m.dropout_sites_.push_back(i);
  }
  return m;
}

std::vector<bool> Model::prior_mask() const {
  std::vector<bool> mask(info_.size());
  for (std::size_t i = 0; i < info_.size(); ++i) mask[i] = info_[i].prior;
  return mask;
}

void Model::set_prior_mask(const std::vector<bool>& mask) {
  if (mask.size() != info_.size()) throw ShapeMismatch("prior mask size does not match parameters");
  for (std::size_t i = 0; i < info_.size(); ++i) info_[i].prior = mask[i];
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::size_t Model::prior_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (info_[i].prior) n += params_[i].size();
  }
  return n;
}

void Model::update_running_stats(const ForwardCache& cache) {
  if (!cache.training) return;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind != LayerKind::BatchNorm) continue;
    const auto& bn = cache.layers.at(i).bn;
    const Shape& act = cache.activations.at(i).shape();
    const double count = static_cast<double>(shape_size(act) / act.at(1));
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    const double mom = layers_[i].bn_momentum;
    Tensor& mean = state_[layer_state_[i][0]];
    Tensor& var = state_[layer_state_[i][1]];
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - mom) * mean[c] + mom * bn.mean[c];
      var[c] = (1.0 - mom) * var[c] + mom * bn.var[c] * unbias;
    }
  }
}

void Model::init_xavier_uniform(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    const Shape& in = shapes_[i];
    const Shape& out = shapes_[i + 1];
    Rng rng = make_rng(seed, "xavier", i);
    if (spec.kind == LayerKind::Dense || spec.kind == LayerKind::Conv2D) {
      const double area = spec.kind == LayerKind::Conv2D
                              ? static_cast<double>(spec.kernel * spec.kernel)
                              : 1.0;
      const double fan_in = static_cast<double>(in[0]) * area;
      const double fan_out = static_cast<double>(out[0]) * area;
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      Tensor& w = params_[layer_params_[i][0]];
      for (auto& v : w.data()) v = bound * (2.0 * uniform01(rng) - 1.0);
      params_[layer_params_[i][1]].fill(0.0);
    } else if (spec.kind == LayerKind::BatchNorm) {
      params_[layer_params_[i][0]].fill(1.0);
      params_[layer_params_[i][1]].fill(0.0);
      state_[layer_state_[i][0]].fill(0.0);
      state_[layer_state_[i][1]].fill(1.0);
    }
  }
}

Model init_xavier_uniform(Model model, std::uint64_t seed) {
  model.init_xavier_uniform(seed);
  return model;
}

ForwardCache forward(const Model& model, const Tensor& batch, const ForwardOptions& options) {
  if (batch.rank() != model.input_shape().size() + 1 ||
      batch.shape() != with_batch(batch.dim(0), model.input_shape())) {
    throw ShapeMismatch("batch " + shape_string(batch.shape()) + " does not match model input " +
                        shape_string(model.input_shape()));
  }
  const std::size_t n = batch.dim(0);
  const auto& layers = model.layers();
  ForwardCache cache;
  cache.training = options.training;
  cache.activations.reserve(layers.size() + 1);
  cache.activations.push_back(batch);
  cache.layers.resize(layers.size());
  const bool dropout = options.training && options.dropout_rate > 0.0;
  Rng drop_rng = make_rng(options.dropout_seed, "dropout");

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    const Tensor& x = cache.activations[i];
    const auto& p = model.layer_params(i);
    Tensor y;
    switch (spec.kind) {
      case LayerKind::Dense:
        y = ops::dense_forward(x, model.params()[p[0]], model.params()[p[1]]);
        break;
      case LayerKind::Conv2D:
        y = ops::conv2d_forward(x, model.params()[p[0]], model.params()[p[1]], spec.stride,
                                spec.padding);
        break;
      case LayerKind::BatchNorm: {
        const auto& s = model.layer_state(i);
        auto r = ops::batchnorm_forward(x, model.params()[p[0]], model.params()[p[1]], spec.bn_eps,
                                        options.training, model.state()[s[0]], model.state()[s[1]]);
        y = std::move(r.y);
        cache.layers[i].bn = std::move(r.cache);
        break;
      }
      case LayerKind::ReLU: {
        y = ops::relu_forward(x);
        const auto& sites = model.dropout_sites();
        if (dropout && std::find(sites.begin(), sites.end(), i) != sites.end()) {
          const double keep = 1.0 - options.dropout_rate;
          auto& mask = cache.layers[i].dropout_mask;
          mask.resize(y.size());
          for (std::size_t j = 0; j < y.size(); ++j) {
            mask[j] = uniform01(drop_rng) < keep ? 1.0 / keep : 0.0;
            y[j] *= mask[j];
          }
        }
        break;
      }
      case LayerKind::MaxPool: {
        auto r = ops::maxpool_forward(x, spec.pool, spec.stride);
        y = std::move(r.y);
        cache.layers[i].argmax = std::move(r.argmax);
        break;
      }
      case LayerKind::ResidualAdd:
        y = ops::residual_add(x, cache.activations[static_cast<std::size_t>(spec.skip_from)]);
        break;
      case LayerKind::Flatten:
        y = x.reshaped({n, shape_size(model.activation_shapes()[i])});
        break;
      case LayerKind::Softmax:
        y = ops::softmax_forward(x);
        break;
    }
    cache.activations.push_back(std::move(y));
  }
  return cache;
}

namespace {

void accumulate(Tensor& into, const Tensor& add) {
  if (into.empty()) {
    into = add;
    return;
  }
  for (std::size_t i = 0; i < add.size(); ++i) into[i] += add[i];
}

// Back-propagates from activation `start` (whose gradient is given) down to
// the input. Layers at or above `start` are skipped.
Gradients propagate(const Model& model, const ForwardCache& cache, std::size_t start,
                    Tensor d_start) {
  const auto& layers = model.layers();
  Gradients grads;
  grads.reserve(model.params().size());
  for (const auto& prm : model.params()) grads.emplace_back(prm.shape());
  std::vector<Tensor> d_act(layers.size() + 1);
  d_act[start] = std::move(d_start);

  for (std::size_t li = start; li-- > 0;) {
    const LayerSpec& spec = layers[li];
    Tensor& dy = d_act[li + 1];
    if (dy.empty()) continue;  // activation does not reach the output
    const Tensor& x = cache.activations[li];
    const auto& p = model.layer_params(li);
    Tensor dx;
    switch (spec.kind) {
      case LayerKind::Dense: {
        auto g = ops::dense_backward(x, model.params()[p[0]], dy);
        grads[p[0]] = std::move(g.dw);
        grads[p[1]] = std::move(g.db);
        dx = std::move(g.dx);
        break;
      }
      case LayerKind::Conv2D: {
        auto g = ops::conv2d_backward(x, model.params()[p[0]], dy, spec.stride, spec.padding);
        grads[p[0]] = std::move(g.dw);
        grads[p[1]] = std::move(g.db);
        dx = std::move(g.dx);
        break;
      }
      case LayerKind::BatchNorm: {
        auto g = ops::batchnorm_backward(dy, model.params()[p[0]], cache.layers[li].bn, cache.training);
        grads[p[0]] = std::move(g.dgamma);
        grads[p[1]] = std::move(g.dbeta);
        dx = std::move(g.dx);
        break;
      }
      case LayerKind::ReLU: {
        const auto& mask = cache.layers[li].dropout_mask;
        if (!mask.empty()) {
          for (std::size_t j = 0; j < dy.size(); ++j) dy[j] *= mask[j];
        }
        dx = ops::relu_backward(x, dy);
        break;
      }
      case LayerKind::MaxPool:
        dx = ops::maxpool_backward(x.shape(), cache.layers[li].argmax, dy);
        break;
      case LayerKind::ResidualAdd:
        accumulate(d_act[static_cast<std::size_t>(spec.skip_from)], dy);
        dx = dy;
        break;
      case LayerKind::Flatten:
        dx = dy.reshaped(x.shape());
        break;
      case LayerKind::Softmax:
        dx = ops::softmax_backward(cache.activations[li + 1], dy);
        break;
    }
    accumulate(d_act[li], dx);
    d_act[li + 1] = Tensor();
  }
  return grads;
}

}  // namespace

Gradients backward_from_output(const Model& model, const ForwardCache& cache, const Tensor& d_output) {
  if (cache.activations.size() != model.layers().size() + 1) {
    throw ShapeMismatch("forward cache does not belong to this model");
  }
  if (d_output.shape() != cache.output().shape()) {
    throw ShapeMismatch("output gradient " + shape_string(d_output.shape()) + " vs output " +
                        shape_string(cache.output().shape()));
  }
  return propagate(model, cache, model.layers().size(), d_output);
}

Gradients backward(const Model& model, const ForwardCache& cache, const Tensor& targets) {
  const auto& layers = model.layers();
  if (layers.empty() || layers.back().kind != LayerKind::Softmax) {
    throw ShapeMismatch("backward with targets needs a model ending in Softmax");
  }
  if (cache.activations.size() != layers.size() + 1) {
    throw ShapeMismatch("forward cache does not belong to this model");
  }
  const Tensor& a = cache.output();
  if (targets.shape() != a.shape()) {
    throw ShapeMismatch("targets " + shape_string(targets.shape()) + " vs output " +
                        shape_string(a.shape()));
  }
  // d/dz of (1/N) sum ln softmax(z)[y] = (target - a) / N.
  const double inv_n = 1.0 / static_cast<double>(a.dim(0));
  Tensor dz(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) dz[i] = (targets[i] - a[i]) * inv_n;
  return propagate(model, cache, layers.size() - 1, std::move(dz));
}

double mean_log_likelihood(const Tensor& probabilities, const Tensor& targets) {
  if (probabilities.shape() != targets.shape() || probabilities.rank() != 2) {
    throw ShapeMismatch("log-likelihood needs matching [N, K] tensors");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != 0.0) sum += targets[i] * std::log(std::max(probabilities[i], 1e-300));
  }
  return sum / static_cast<double>(probabilities.dim(0));
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ShapeMismatch("label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    t[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

Model micro_resnet(const MicroResNetConfig& c) {
  ModelBuilder b(c.input);
  // input module
  b.add(LayerSpec::conv2d(c.stem_channels, 3, 1, 1)).add(LayerSpec::batchnorm()).add(LayerSpec::relu());
  // convolution module
  b.add(LayerSpec::conv2d(c.channels, 3, 1, 1)).add(LayerSpec::batchnorm()).add(LayerSpec::relu());
  b.add(LayerSpec::maxpool(2));
  // residual module
  const std::int64_t skip = b.current();
  b.add(LayerSpec::conv2d(c.channels, 3, 1, 1)).add(LayerSpec::batchnorm()).add(LayerSpec::relu());
  b.add(LayerSpec::conv2d(c.channels, 3, 1, 1)).add(LayerSpec::batchnorm()).add(LayerSpec::relu());
  b.add(LayerSpec::residual_add(skip));
  // output module
  if (c.output_pool > 1) b.add(LayerSpec::maxpool(c.output_pool));
  b.add(LayerSpec::flatten()).add(LayerSpec::dense(c.classes)).add(LayerSpec::softmax());
  return b.build();
}

Model mlp(const Shape& input, const std::vector<std::size_t>& hidden, std::size_t classes) {
  ModelBuilder b(input);
  b.add(LayerSpec::flatten());
  for (auto h : hidden) b.add(LayerSpec::dense(h)).add(LayerSpec::relu());
  b.add(LayerSpec::dense(classes)).add(LayerSpec::softmax());
  return b.build();
}

io::Bytes Model::serialize() const {
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(input_shape().size()));
  for (auto d : input_shape()) w.u64(d);
  w.u32(static_cast<std::uint32_t>(layers_.size()));
  for (const auto& s : layers_) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u64(s.units);
    w.u64(s.out_channels);
    w.u64(s.kernel);
    w.u64(s.stride);
    w.u64(s.padding);
    w.u64(s.pool);
    w.i64(s.skip_from);
    w.f64(s.bn_momentum);
    w.f64(s.bn_eps);
  }
  auto tensors = [&w](const std::vector<Tensor>& ts) {
    w.u32(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
      w.u32(static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) w.u64(d);
      w.f64s(t.data());
    }
  };
  tensors(params_);
  for (const auto& i : info_) w.u8(i.prior ? 1 : 0);
  tensors(state_);
  w.seal();
  return std::move(w).take();
}

Model Model::deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(io::verify_sealed(bytes));
  if (r.raw(4) != std::string_view(kMagic, 4)) throw FormatError("BadMagic", "not a model checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  Shape input(r.u32());
  for (auto& d : input) d = r.u64();
  ModelBuilder builder(input);
  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec s;
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::Softmax)) {
      throw FormatError("BadLayer", "unknown layer kind " + std::to_string(kind));
    }
    s.kind = static_cast<LayerKind>(kind);
    s.units = r.u64();
    s.out_channels = r.u64();
    s.kernel = r.u64();
    s.stride = r.u64();
    s.padding = r.u64();
    s.pool = r.u64();
    s.skip_from = r.i64();
    s.bn_momentum = r.f64();
    s.bn_eps = r.f64();
    builder.add(s);
  }
  Model m = builder.build();
  auto tensors = [&r](std::vector<Tensor>& into, const char* what) {
    if (r.u32() != into.size()) throw FormatError("BadCheckpoint", std::string(what) + " count mismatch");
    for (auto& t : into) {
      Shape s(r.u32());
      for (auto& d : s) d = r.u64();
      if (s != t.shape()) throw FormatError("BadCheckpoint", std::string(what) + " shape mismatch");
      t = Tensor(s, r.f64s(shape_size(s)));
    }
  };
  tensors(m.params_, "parameter");
  for (auto& i : m.info_) i.prior = r.u8() != 0;
  tensors(m.state_, "state");
  if (r.remaining() != 0) throw FormatError("TrailingBytes", "unexpected bytes after checkpoint");
  return m;
}

}  // namespace softdiamond::net
