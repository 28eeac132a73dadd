#include "icnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "icnet/eval.hpp"
#include "icnet/sampler.hpp"

namespace icnet::train {
namespace {

void check_dataset(std::span<const Volume> dataset) {
  if (dataset.size() < 2) throw DataError("training needs at least 2 volumes, got " + std::to_string(dataset.size()));
  for (const auto& v : dataset) {
    if (v.channels() != 1) throw ShapeError("training volumes must be single-channel");
    require_same_shape(dataset.front().shape(), v.shape(), "training dataset");
  }
}

void check_finite(const loss::LossReport& r, std::size_t iteration) {
  if (!std::isfinite(r.total)) {
    throw NumericError("loss became non-finite at iteration " + std::to_string(iteration));
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || !std::isfinite(v)) throw DataError("config: '" + key + "' expects a number, got '" + value + "'");
  return v;
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
  if (value.empty() || !std::all_of(value.begin(), value.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw DataError("config: '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw DataError("config: '" + key + "' is out of range");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw DataError("config: '" + key + "' expects true or false, got '" + value + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::like(const net::FcnParams& params) {
  AdamState s;
  for (const auto& layer : params.layers) {
    s.first.emplace_back(layer.weight.size(), 0.0);
    s.first.emplace_back(layer.bias.size(), 0.0);
    s.second.emplace_back(layer.weight.size(), 0.0);
    s.second.emplace_back(layer.bias.size(), 0.0);
  }
  return s;
}

void adam_step(net::FcnParams& params, const net::FcnParams& grads, AdamState& state, double learning_rate,
               const AdamHyper& hyper) {
  if (grads.layers.size() != params.layers.size() || state.first.size() != 2 * params.layers.size()) {
    throw ShapeError("adam_step: parameters, gradients and state are not aligned");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (int part = 0; part < 2; ++part) {
      auto& p = part == 0 ? params.layers[l].weight.data : params.layers[l].bias.data;
      const auto& g = part == 0 ? grads.layers[l].weight.data : grads.layers[l].bias.data;
      auto& m = state.first[2 * l + static_cast<std::size_t>(part)];
      auto& v = state.second[2 * l + static_cast<std::size_t>(part)];
      if (g.size() != p.size() || m.size() != p.size()) throw ShapeError("adam_step: tensor sizes differ");
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  weights.validate();
  fcn.validate();
  if (!(learning_rate > 0.0) || !(refine_learning_rate > 0.0)) throw DataError("learning rates must be positive");
  if (iterations < 1) throw DataError("iterations must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw DataError("validation_fraction must lie in (0, 1)");
  }
  if (validation_interval < 1) throw DataError("validation_interval must be at least 1");
}

TrainConfig parse_train_config(const std::string& text, TrainConfig c) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "alpha") c.weights.alpha = parse_real(key, value);
    else if (key == "beta") c.weights.beta = parse_real(key, value);
    else if (key == "gamma") c.weights.gamma = parse_real(key, value);
    else if (key == "reduction") {
      if (value == "sum") c.reduction = loss::Reduction::sum;
      else if (value == "mean") c.reduction = loss::Reduction::mean;
      else throw DataError("config: reduction must be 'sum' or 'mean'");
    }
    else if (key == "learning_rate") c.learning_rate = parse_real(key, value);
    else if (key == "iterations") c.iterations = parse_count(key, value);
    else if (key == "validation_fraction") c.validation_fraction = parse_real(key, value);
    else if (key == "validation_interval") c.validation_interval = parse_count(key, value);
    else if (key == "validation_pairs") c.validation_pairs = parse_count(key, value);
    else if (key == "seed") c.seed = parse_count(key, value);
    else if (key == "n") c.fcn.n = parse_count(key, value);
    else if (key == "depth") c.fcn.depth = parse_count(key, value);
    else if (key == "tau") c.fcn.tau = parse_real(key, value);
    else if (key == "zero_head") c.fcn.zero_head = parse_bool(key, value);
    else if (key == "refine_learning_rate") c.refine_learning_rate = parse_real(key, value);
    else if (key == "refine_iterations") c.refine_iterations = parse_count(key, value);
    else if (key == "adam_beta1") c.adam.beta1 = parse_real(key, value);
    else if (key == "adam_beta2") c.adam.beta2 = parse_real(key, value);
    else if (key == "adam_epsilon") c.adam.epsilon = parse_real(key, value);
    else throw DataError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config(buffer.str(), base);
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "alpha = " << c.weights.alpha << '\n'
      << "beta = " << c.weights.beta << '\n'
      << "gamma = " << c.weights.gamma << '\n'
      << "reduction = " << (c.reduction == loss::Reduction::sum ? "sum" : "mean") << '\n'
      << "learning_rate = " << c.learning_rate << '\n'
      << "iterations = " << c.iterations << '\n'
      << "validation_fraction = " << c.validation_fraction << '\n'
      << "validation_interval = " << c.validation_interval << '\n'
      << "validation_pairs = " << c.validation_pairs << '\n'
      << "seed = " << c.seed << '\n'
      << "n = " << c.fcn.n << '\n'
      << "depth = " << c.fcn.depth << '\n'
      << "tau = " << c.fcn.tau << '\n'
      << "zero_head = " << (c.fcn.zero_head ? "true" : "false") << '\n'
      << "refine_learning_rate = " << c.refine_learning_rate << '\n'
      << "refine_iterations = " << c.refine_iterations << '\n'
      << "adam_beta1 = " << c.adam.beta1 << '\n'
      << "adam_beta2 = " << c.adam.beta2 << '\n'
      << "adam_epsilon = " << c.adam.epsilon << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Curves

std::string curve_csv_header() { return "iteration,split,sim,smo,inv,ant,total,folding_count"; }

std::string curve_csv_row(const CurveRow& row) {
  const auto& r = row.report;
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << row.iteration << ','
      << (row.validation ? "validation" : "train") << ',' << r.sim << ',' << r.smo << ',' << r.inv << ',' << r.ant
      << ',' << r.total << ',' << r.folding_count;
  return out.str();
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurveRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << curve_csv_header() << '\n';
  for (const auto& row : rows) out << curve_csv_row(row) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Training

Split make_split(std::size_t n, const TrainConfig& config) {
  Split split;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (n >= 4) {
    std::mt19937_64 rng(config.seed ^ 0x5eed5eed5eedULL);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 2, n - 2);
    split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
    for (std::size_t i = 0; i < split.validation.size(); ++i) {
      for (std::size_t j = i + 1; j < split.validation.size(); ++j) {
        if (split.validation_pairs.size() < config.validation_pairs) {
          split.validation_pairs.emplace_back(split.validation[i], split.validation[j]);
        }
      }
    }
  } else {
    split.train = order;
  }
  return split;
}

PairGradient pair_gradient(const net::FcnParams& params, const TrainConfig& config, const Volume& a, const Volume& b) {
  ad::Tape tape;
  const net::BoundParams bound = net::bind(tape, params, true);
  const ad::Var va = tape.constant(ad::Tensor::from_volume(a));
  const ad::Var vb = tape.constant(ad::Tensor::from_volume(b));
  const auto [f_ab, f_ba] = net::fcn_bidirectional(bound, config.fcn, va, vb);
  const loss::LossTerms terms = loss::loss_total(va, vb, f_ab, f_ba, config.weights, config.reduction);
  tape.backward(terms.total);
  return {loss::make_report(terms, f_ab.value().to_volume(), f_ba.value().to_volume()),
          net::gradients(tape, bound, params)};
}

loss::LossReport evaluate_pair(const net::FcnParams& params, const TrainConfig& config, const Volume& a,
                               const Volume& b) {
  const auto [f_ab, f_ba] = net::predict_bidirectional(params, config.fcn, a, b);
  return loss::evaluate(a, b, f_ab, f_ba, config.weights, config.reduction);
}

TrainResult train(std::span<const Volume> dataset, const TrainConfig& config,
                  const std::optional<net::FcnParams>& initial, const RowCallback& on_row) {
  config.validate();
  check_dataset(dataset);
  config.fcn.check_input(dataset.front().shape());

  TrainResult result;
  result.split = make_split(dataset.size(), config);
  result.params = initial ? *initial : net::init_params(config.fcn, config.seed);
  AdamState state = AdamState::like(result.params);
  std::mt19937_64 rng(config.seed);

  const auto& train_idx = result.split.train;
  auto emit = [&](CurveRow row) {
    if (on_row) on_row(row);
    result.curve.push_back(std::move(row));
  };
  auto validate_now = [&](std::size_t iteration) {
    const auto& pairs = result.split.validation_pairs;
    if (pairs.empty()) return;
    loss::LossReport mean{};
    for (const auto& [i, j] : pairs) {
      const auto r = evaluate_pair(result.params, config, dataset[i], dataset[j]);
      mean.sim += r.sim;
      mean.smo += r.smo;
      mean.inv += r.inv;
      mean.ant += r.ant;
      mean.total += r.total;
      mean.folding_count += r.folding_count;
    }
    const double k = static_cast<double>(pairs.size());
    mean.sim /= k;
    mean.smo /= k;
    mean.inv /= k;
    mean.ant /= k;
    mean.total /= k;
    mean.folding_count = (mean.folding_count + pairs.size() / 2) / pairs.size();
    emit(CurveRow{iteration, true, mean});
  };

  for (std::size_t it = 0; it < config.iterations; ++it) {
    if (it % config.validation_interval == 0) validate_now(it);
    std::size_t i = 0, j = 1;
    if (train_idx.size() >= 2) {
      std::uniform_int_distribution<std::size_t> first(0, train_idx.size() - 1);
      std::uniform_int_distribution<std::size_t> second(0, train_idx.size() - 2);
      i = first(rng);
      j = second(rng);
      if (j >= i) ++j;
    }
    PairGradient step = pair_gradient(result.params, config, dataset[train_idx[i]], dataset[train_idx[j]]);
    check_finite(step.report, it);
    emit(CurveRow{it, false, step.report});
    adam_step(result.params, step.grads, state, config.learning_rate, config.adam);
  }
  validate_now(config.iterations);
  return result;
}

net::FcnParams refine(const net::FcnParams& params, const TrainConfig& config, const Volume& a, const Volume& b) {
  require_same_shape(a.shape(), b.shape(), "refine");
  net::FcnParams adapted = params;
  AdamState state = AdamState::like(adapted);
  for (std::size_t it = 0; it < config.refine_iterations; ++it) {
    PairGradient step = pair_gradient(adapted, config, a, b);
    check_finite(step.report, it);
    adam_step(adapted, step.grads, state, config.refine_learning_rate, config.adam);
  }
  return adapted;
}

// ---------------------------------------------------------------------------
// Grid search

std::vector<double> decade_grid() {
  std::vector<double> grid;
  for (int e = -5; e <= 5; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

std::vector<GridPoint> grid_search(std::span<const Volume> dataset, std::span<const LabelMap> labels,
                                   const TrainConfig& config, std::span<const double> alphas,
                                   std::span<const double> betas) {
  check_dataset(dataset);
  const bool use_labels = !labels.empty();
  if (use_labels && labels.size() != dataset.size()) {
    throw DataError("grid_search: need one label map per volume");
  }
  const Split split = make_split(dataset.size(), config);
  if (split.validation_pairs.empty()) throw DataError("grid_search: dataset too small for a validation split");

  std::vector<GridPoint> points;
  for (double alpha : alphas) {
    for (double beta : betas) {
      TrainConfig c = config;
      c.weights.alpha = alpha;
      c.weights.beta = beta;
      const TrainResult trained = train(dataset, c);
      GridPoint point{alpha, beta, 0, 0.0};
      double acc = 0.0;
      std::size_t terms = 0;
      for (const auto& [i, j] : split.validation_pairs) {
        const auto [f_ab, f_ba] = net::predict_bidirectional(trained.params, c.fcn, dataset[i], dataset[j]);
        point.folds += loss::folding_count(f_ab) + loss::folding_count(f_ba);
        if (use_labels) {
          // F_ab resamples i's labels onto j's grid; F_ba the reverse
          const LabelMap onto_i = sampler::warp_nearest(labels[j], f_ba);
          const LabelMap onto_j = sampler::warp_nearest(labels[i], f_ab);
          for (const auto& [pred, truth] : {std::pair{&onto_i, &labels[i]}, std::pair{&onto_j, &labels[j]}}) {
            for (auto label : eval::foreground_labels(*truth)) {
              acc += eval::overlap_metrics(*pred, *truth, label).dsc;
              ++terms;
            }
          }
        } else {
          acc -= loss::evaluate(dataset[i], dataset[j], f_ab, f_ba, c.weights, c.reduction).sim;
          ++terms;
        }
      }
      point.score = terms ? acc / static_cast<double>(terms) : 0.0;
      points.push_back(point);
    }
  }
  std::stable_sort(points.begin(), points.end(), [](const GridPoint& x, const GridPoint& y) {
    if (x.folds != y.folds) return x.folds < y.folds;
    return x.score > y.score;
  });
  return points;
}

}  // namespace icnet::train
