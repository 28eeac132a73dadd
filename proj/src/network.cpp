#include "icnet/network.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "icnet/io.hpp"

namespace icnet::net {
namespace {

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::down: return "down";
    case LayerKind::deconv: return "deconv";
    case LayerKind::head: return "head";
  }
  return "?";
}

LayerKind parse_kind(const std::string& name) {
  if (name == "conv") return LayerKind::conv;
  if (name == "down") return LayerKind::down;
  if (name == "deconv") return LayerKind::deconv;
  if (name == "head") return LayerKind::head;
  throw FormatError("checkpoint: unknown layer kind '" + name + "'");
}

Layer make_layer(std::string name, LayerKind kind, std::size_t in, std::size_t out) {
  const std::size_t k = kind == LayerKind::deconv ? 2 : 3;
  return Layer{std::move(name), kind, ad::Tensor({out, in, k, k, k}, 0.0), ad::Tensor({out}, 0.0)};
}

ad::Var apply(const Layer& layer, ad::Var w, ad::Var b, ad::Var x) {
  switch (layer.kind) {
    case LayerKind::conv: return ad::relu(ad::conv3d(x, w, b, 1));
    case LayerKind::down: return ad::relu(ad::conv3d(x, w, b, 2));
    case LayerKind::deconv: return ad::deconv3d(x, w, b);
    case LayerKind::head: return ad::tanh(ad::conv3d(x, w, b, 1));
  }
  return x;
}

}  // namespace

void FcnConfig::validate() const {
  if (n < 1) throw DataError("network: n must be at least 1");
  if (depth < 1) throw DataError("network: depth must be at least 1");
  if (depth > 8) throw DataError("network: depth above 8 is not supported");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DataError("network: tau must be a positive finite number");
}

void FcnConfig::check_input(const GridShape& shape) const {
  const std::size_t step = std::size_t{1} << depth;
  for (int axis = 0; axis < 3; ++axis) {
    if (shape.extent(axis) % step != 0) {
      throw ShapeError("network: extent " + std::to_string(shape.extent(axis)) + " on axis " + std::to_string(axis) +
                       " is not divisible by 2^depth = " + std::to_string(step));
    }
  }
}

std::size_t FcnParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.weight.size() + layer.bias.size();
  return total;
}

std::vector<Layer> architecture(const FcnConfig& config) {
  config.validate();
  std::vector<Layer> layers;
  const auto width = [&](std::size_t level) { return config.n << level; };
  std::size_t channels = 2;
  for (std::size_t d = 0; d < config.depth; ++d) {
    layers.push_back(make_layer("down" + std::to_string(d) + ".conv", LayerKind::conv, channels, width(d)));
    layers.push_back(make_layer("down" + std::to_string(d) + ".pool", LayerKind::down, width(d), width(d)));
    channels = width(d);
  }
  for (std::size_t d = config.depth; d-- > 0;) {
    layers.push_back(make_layer("up" + std::to_string(d) + ".deconv", LayerKind::deconv, channels, width(d)));
    layers.push_back(make_layer("up" + std::to_string(d) + ".conv", LayerKind::conv, 2 * width(d), width(d)));
    channels = width(d);
  }
  layers.push_back(make_layer("head", LayerKind::head, channels, 3));
  return layers;
}

FcnParams init_params(const FcnConfig& config, std::uint64_t seed) {
  FcnParams params{architecture(config)};
  std::mt19937_64 rng(seed);
  for (auto& layer : params.layers) {
    if (layer.kind == LayerKind::head && config.zero_head) continue;
    const auto& d = layer.weight.dims;
    const double fan_in = static_cast<double>(d[1] * d[2] * d[3] * d[4]);
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.data) w = dist(rng);
  }
  return params;
}

BoundParams bind(ad::Tape& tape, const FcnParams& params, bool trainable) {
  BoundParams bound;
  for (const auto& layer : params.layers) {
    bound.weights.push_back(trainable ? tape.variable(layer.weight) : tape.constant(layer.weight));
    bound.biases.push_back(trainable ? tape.variable(layer.bias) : tape.constant(layer.bias));
  }
  return bound;
}

FcnParams gradients(const ad::Tape& tape, const BoundParams& bound, const FcnParams& like) {
  FcnParams grads = like;
  for (std::size_t i = 0; i < grads.layers.size(); ++i) {
    grads.layers[i].weight = tape.grad(bound.weights[i]);
    grads.layers[i].bias = tape.grad(bound.biases[i]);
  }
  return grads;
}

ad::Var fcn_forward(const BoundParams& params, const FcnConfig& config, ad::Var a, ad::Var b) {
  const auto& ad_dims = a.dims();
  if (ad_dims.size() != 4 || ad_dims[0] != 1 || b.dims() != ad_dims) {
    throw ShapeError("fcn_forward: inputs must be single-channel tensors of equal shape, got " +
                     a.value().shape_string() + " and " + b.value().shape_string());
  }
  config.validate();
  config.check_input(GridShape{ad_dims[1], ad_dims[2], ad_dims[3]});
  const std::size_t expected = 4 * config.depth + 1;
  if (params.weights.size() != expected) {
    throw ShapeError("fcn_forward: parameter set has " + std::to_string(params.weights.size()) + " layers, expected " +
                     std::to_string(expected));
  }
  const std::vector<Layer> layers = architecture(config);

  std::size_t li = 0;
  auto run = [&](ad::Var x) {
    ad::Var y = apply(layers[li], params.weights[li], params.biases[li], x);
    ++li;
    return y;
  };

  ad::Var x = ad::concat_channels(a, b);
  std::vector<ad::Var> skips;
  for (std::size_t d = 0; d < config.depth; ++d) {
    x = run(x);
    skips.push_back(x);
    x = run(x);
  }
  for (std::size_t d = config.depth; d-- > 0;) {
    x = run(x);
    x = ad::concat_channels(x, skips[d]);
    x = run(x);
  }
  return ad::scale(run(x), config.tau);
}

std::pair<ad::Var, ad::Var> fcn_bidirectional(const BoundParams& params, const FcnConfig& config, ad::Var a,
                                              ad::Var b) {
  return {fcn_forward(params, config, a, b), fcn_forward(params, config, b, a)};
}

Flow predict(const FcnParams& params, const FcnConfig& config, const Volume& a, const Volume& b) {
  ad::Tape tape;
  const BoundParams bound = bind(tape, params, false);
  return fcn_forward(bound, config, tape.constant(ad::Tensor::from_volume(a)), tape.constant(ad::Tensor::from_volume(b)))
      .value()
      .to_volume();
}

std::pair<Flow, Flow> predict_bidirectional(const FcnParams& params, const FcnConfig& config, const Volume& a,
                                            const Volume& b) {
  return {predict(params, config, a, b), predict(params, config, b, a)};
}

void save_checkpoint(const std::filesystem::path& dir, const FcnParams& params, const FcnConfig& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  std::ostringstream manifest;
  manifest << std::setprecision(std::numeric_limits<double>::max_digits10);
  manifest << kCheckpointMagic << '\n'
           << "n " << config.n << '\n'
           << "depth " << config.depth << '\n'
           << "tau " << config.tau << '\n'
           << "layers " << params.layers.size() << '\n';
  for (const auto& layer : params.layers) {
    const auto& d = layer.weight.dims;
    manifest << "layer " << layer.name << ' ' << kind_name(layer.kind) << " weight " << d[0] << ' ' << d[1] << ' '
             << d[2] << ' ' << d[3] << ' ' << d[4] << " bias " << layer.bias.dims[0] << '\n';

    io::IcvolRecord w;
    w.dims = {d[2], d[3], d[4]};
    w.channels = d[0] * d[1];
    w.dtype = io::Dtype::f64;
    w.values = layer.weight.data;
    io::write_icvol(dir / (layer.name + ".weight.icvol"), w);

    io::IcvolRecord b;
    b.dims = {1, 1, 1};
    b.channels = layer.bias.dims[0];
    b.dtype = io::Dtype::f64;
    b.values = layer.bias.data;
    io::write_icvol(dir / (layer.name + ".bias.icvol"), b);
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
  out << manifest.str();
  if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
}

std::pair<FcnParams, FcnConfig> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw IoError("cannot open " + (dir / "manifest.txt").string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw FormatError(dir.string() + ": not a checkpoint (bad manifest header)");
  }
  FcnConfig config;
  config.zero_head = false;
  std::size_t layer_count = 0;
  auto expect = [&](const char* key, auto& value) {
    std::string k;
    if (!std::getline(in, line)) throw FormatError(dir.string() + ": manifest ends before '" + key + "'");
    std::istringstream fields(line);
    if (!(fields >> k >> value) || k != key) throw FormatError(dir.string() + ": manifest expected '" + key + "'");
  };
  expect("n", config.n);
  expect("depth", config.depth);
  expect("tau", config.tau);
  expect("layers", layer_count);
  config.validate();

  FcnParams params{architecture(config)};
  if (params.layers.size() != layer_count) throw FormatError(dir.string() + ": layer count disagrees with config");
  for (auto& layer : params.layers) {
    if (!std::getline(in, line)) throw FormatError(dir.string() + ": manifest missing layer " + layer.name);
    std::istringstream fields(line);
    std::string tag, name, kind, wtag, btag;
    std::size_t d[5] = {}, bd = 0;
    fields >> tag >> name >> kind >> wtag >> d[0] >> d[1] >> d[2] >> d[3] >> d[4] >> btag >> bd;
    if (!fields || tag != "layer" || wtag != "weight" || btag != "bias" || name != layer.name ||
        parse_kind(kind) != layer.kind) {
      throw FormatError(dir.string() + ": manifest entry for " + layer.name + " is malformed");
    }
    if (std::vector<std::size_t>(d, d + 5) != layer.weight.dims || bd != layer.bias.dims[0]) {
      throw FormatError(dir.string() + ": tensor shapes for " + layer.name + " disagree with config");
    }
    const io::IcvolRecord w = io::read_icvol(dir / (layer.name + ".weight.icvol"));
    const io::IcvolRecord b = io::read_icvol(dir / (layer.name + ".bias.icvol"));
    if (w.values.size() != layer.weight.size() || b.values.size() != layer.bias.size()) {
      throw FormatError(dir.string() + ": tensor file size mismatch for " + layer.name);
    }
    layer.weight.data = w.values;
    layer.bias.data = b.values;
    for (double v : layer.weight.data) {
      if (!std::isfinite(v)) throw FormatError(dir.string() + ": non-finite weight in " + layer.name);
    }
  }
  return {std::move(params), config};
}

}  // namespace icnet::net
