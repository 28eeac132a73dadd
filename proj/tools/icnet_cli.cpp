// icnet: command-line driver for synthesis, training, registration and evaluation.

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icnet/dataset.hpp"
#include "icnet/error.hpp"
#include "icnet/eval.hpp"
#include "icnet/experiment.hpp"
#include "icnet/io.hpp"
#include "icnet/network.hpp"
#include "icnet/runtime.hpp"
#include "icnet/sampler.hpp"
#include "icnet/synth.hpp"
#include "icnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace icnet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      if (errno == EEXIST) {
        throw DataError(dir.string() + " is in use by another run (delete " + path_.string() + " if it is stale)");
      }
      throw IoError("cannot create " + path_.string() + ": " + std::strerror(errno));
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

GridShape parse_shape(const std::string& text) {
  // accept "24", "24x24x24" and "24,24,24"
  std::vector<std::size_t> dims;
  std::string normalized = text;
  for (char& c : normalized) {
    if (c == 'x' || c == ',') c = ' ';
  }
  std::istringstream fields(normalized);
  std::string part;
  while (fields >> part) {
    if (part.find_first_not_of("0123456789") != std::string::npos || part.size() > 9) {
      throw UsageError("--shape expects N or NxNxN, got '" + text + "'");
    }
    dims.push_back(std::stoul(part));
  }
  if (dims.size() == 1) dims = {dims[0], dims[0], dims[0]};
  if (dims.size() != 3) throw UsageError("--shape expects N or NxNxN, got '" + text + "'");
  GridShape shape{dims[0], dims[1], dims[2]};
  shape.validate();
  return shape;
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw UsageError(flag + " expects a comma-separated list of numbers");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + " is empty");
  return out;
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return out.str();
}

train::TrainConfig config_from(const std::string& path) {
  return path.empty() ? train::TrainConfig{} : train::load_train_config(path);
}

void write_run_manifest(const fs::path& dir, const train::TrainConfig& config, std::size_t volumes) {
  std::ofstream out(dir / "run.txt", std::ios::binary | std::ios::trunc);
  out << "ICNET-RUN 1\n"
      << "checkpoint_format ICNET-CHECKPOINT 1\n"
      << "curve_format " << train::curve_csv_header() << '\n'
      << "volumes " << volumes << '\n'
      << train::format_train_config(config);
  if (!out) throw IoError("cannot write " + (dir / "run.txt").string());
}

// Flow that resamples `moving` onto the grid of `fixed`.
Flow flow_onto(const net::FcnParams& params, const net::FcnConfig& config, const Volume& moving, const Volume& fixed) {
  require_same_shape(moving.shape(), fixed.shape(), "registration");
  return net::predict(params, config, moving, fixed);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Inverse-consistent deformable registration with a fully convolutional network"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with ground-truth deformations");
  const data::DatasetSpec synth_defaults;
  std::uint64_t synth_seed = synth_defaults.seed;
  std::string synth_shape = "24";
  std::size_t synth_pairs = synth_defaults.pairs;
  double synth_max_disp = synth_defaults.max_disp;
  std::size_t synth_blobs = synth_defaults.num_blobs;
  double synth_sigma_min = synth_defaults.widths.min;
  double synth_sigma_max = synth_defaults.widths.max;
  double synth_jitter = synth_defaults.jitter;
  std::string synth_out;
  synth_cmd->add_option("--seed", synth_seed, "Random seed");
  synth_cmd->add_option("--shape", synth_shape, "Grid shape, N or NxNxN");
  synth_cmd->add_option("--pairs", synth_pairs, "Number of pairs");
  synth_cmd->add_option("--max-disp", synth_max_disp, "Largest ground-truth displacement (voxels)");
  synth_cmd->add_option("--num-blobs", synth_blobs, "Blobs per volume");
  synth_cmd->add_option("--sigma-min", synth_sigma_min, "Smallest blob width (voxels)");
  synth_cmd->add_option("--sigma-max", synth_sigma_max, "Largest blob width (voxels)");
  synth_cmd->add_option("--jitter", synth_jitter, "Per-subject template jitter (voxels)");
  synth_cmd->add_option("out", synth_out, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a network on a directory of volumes");
  std::string train_data, train_config, train_out, train_curves;
  std::optional<std::uint64_t> train_seed;
  bool train_quiet = false;
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--config", train_config, "key = value configuration file");
  train_cmd->add_option("--out", train_out, "Checkpoint directory")->required();
  train_cmd->add_option("--curves", train_curves, "Loss-curve CSV")->required();
  train_cmd->add_option("--seed", train_seed, "Overrides the configuration seed");
  train_cmd->add_flag("--quiet", train_quiet, "No progress output");

  // register
  auto* reg_cmd = app.add_subcommand("register", "Register a pair of volumes with a trained network");
  std::string reg_ckpt, reg_a, reg_b, reg_flow_ab, reg_flow_ba, reg_warped, reg_warped_ba, reg_config;
  bool reg_refine = false;
  std::optional<std::size_t> reg_refine_iters;
  std::optional<double> reg_refine_lr;
  reg_cmd->add_option("--ckpt", reg_ckpt, "Checkpoint directory")->required();
  reg_cmd->add_option("--a", reg_a, "Volume A")->required();
  reg_cmd->add_option("--b", reg_b, "Volume B")->required();
  reg_cmd->add_flag("--refine", reg_refine, "Adapt the network to this pair first");
  reg_cmd->add_option("--config", reg_config, "Loss weights and refinement settings");
  reg_cmd->add_option("--refine-iterations", reg_refine_iters, "Refinement steps (default 100)");
  reg_cmd->add_option("--refine-lr", reg_refine_lr, "Refinement learning rate (default 1e-5)");
  reg_cmd->add_option("--out-flow-ab", reg_flow_ab, "Flow warping A onto B")->required();
  reg_cmd->add_option("--out-flow-ba", reg_flow_ba, "Flow warping B onto A")->required();
  reg_cmd->add_option("--out-warped", reg_warped, "A warped onto B")->required();
  reg_cmd->add_option("--out-warped-ba", reg_warped_ba, "B warped onto A");

  // segment / landmarks
  auto* seg_cmd = app.add_subcommand("segment", "Multi-atlas segmentation by majority vote");
  std::string seg_ckpt, seg_atlases, seg_test, seg_out;
  seg_cmd->add_option("--ckpt", seg_ckpt, "Checkpoint directory")->required();
  seg_cmd->add_option("--atlases", seg_atlases, "Directory of <name>.icvol + <name>_labels.icvol")->required();
  seg_cmd->add_option("--test", seg_test, "Volume to segment")->required();
  seg_cmd->add_option("--out", seg_out, "Output label map")->required();

  auto* lm_cmd = app.add_subcommand("landmarks", "Propagate atlas landmarks onto a test volume");
  std::string lm_ckpt, lm_atlases, lm_test, lm_out;
  lm_cmd->add_option("--ckpt", lm_ckpt, "Checkpoint directory")->required();
  lm_cmd->add_option("--atlases", lm_atlases, "Directory of atlases with <name>_landmarks.txt")->required();
  lm_cmd->add_option("--test", lm_test, "Test volume")->required();
  lm_cmd->add_option("--out", lm_out, "Output landmark file")->required();

  // metrics
  auto* met_cmd = app.add_subcommand("metrics", "Segmentation and landmark metrics");
  std::string met_pred, met_truth, met_lm_pred, met_lm_truth, met_out, met_image = "test";
  met_cmd->add_option("--pred", met_pred, "Predicted label map");
  met_cmd->add_option("--truth", met_truth, "Reference label map");
  met_cmd->add_option("--landmarks-pred", met_lm_pred, "Predicted landmarks");
  met_cmd->add_option("--landmarks-truth", met_lm_truth, "Reference landmarks");
  met_cmd->add_option("--image", met_image, "Image identifier for the CSV");
  met_cmd->add_option("--out", met_out, "Metrics CSV")->required();

  // folding
  auto* fold_cmd = app.add_subcommand("folding", "Count folding locations in a flow");
  std::string fold_flow;
  fold_cmd->add_option("--flow", fold_flow, "Flow volume (3 channels)")->required();

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "Train full, no-inverse and no-antifold variants and compare");
  std::string abl_data, abl_out, abl_config;
  std::size_t abl_heldout = 5;
  std::optional<std::uint64_t> abl_seed;
  abl_cmd->add_option("--data", abl_data, "Synthetic dataset directory")->required();
  abl_cmd->add_option("--out", abl_out, "Output directory")->required();
  abl_cmd->add_option("--config", abl_config, "Base configuration");
  abl_cmd->add_option("--heldout", abl_heldout, "Number of held-out pairs (taken from the end)");
  abl_cmd->add_option("--seed", abl_seed, "Overrides the configuration seed");

  // export-slice
  auto* exp_cmd = app.add_subcommand("export-slice", "Write one slice as PGM (scalar) or PPM (flow)");
  std::string exp_in, exp_axis = "z", exp_out;
  std::size_t exp_index = 0;
  exp_cmd->add_option("--in", exp_in, "Input volume")->required();
  exp_cmd->add_option("--axis", exp_axis, "x, y or z");
  exp_cmd->add_option("--index", exp_index, "Slice index")->required();
  exp_cmd->add_option("--out", exp_out, "Output image")->required();

  // grid-search
  auto* grid_cmd = app.add_subcommand("grid-search", "Select alpha and beta on the validation split");
  std::string grid_data, grid_out, grid_config, grid_alphas, grid_betas;
  grid_cmd->add_option("--data", grid_data, "Dataset directory")->required();
  grid_cmd->add_option("--out", grid_out, "Result CSV")->required();
  grid_cmd->add_option("--config", grid_config, "Base configuration");
  grid_cmd->add_option("--alphas", grid_alphas, "Comma-separated alphas (default 1e-5 ... 1e5)");
  grid_cmd->add_option("--betas", grid_betas, "Comma-separated betas (default 1e-5 ... 1e5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "icnet: usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*synth_cmd) {
      data::DatasetSpec spec;
      spec.seed = synth_seed;
      spec.shape = parse_shape(synth_shape);
      spec.pairs = synth_pairs;
      spec.max_disp = synth_max_disp;
      spec.num_blobs = synth_blobs;
      spec.widths = {synth_sigma_min, synth_sigma_max};
      spec.jitter = synth_jitter;
      spec.widths.validate();
      if (spec.pairs < 1) throw UsageError("--pairs must be at least 1");
      if (spec.num_blobs < 1) throw UsageError("--num-blobs must be at least 1");
      RunLock lock(synth_out);
      data::write_dataset(synth_out, spec, data::generate_pairs(spec));
      std::cout << "wrote " << spec.pairs << " pairs to " << synth_out << '\n';
    } else if (*train_cmd) {
      train::TrainConfig config = config_from(train_config);
      if (train_seed) config.seed = *train_seed;
      const std::vector<Volume> volumes = data::load_training_volumes(train_data);
      RunLock lock(train_out);
      const auto progress = [&](const train::CurveRow& row) {
        if (!train_quiet && row.validation) {
          std::cerr << "iteration " << row.iteration << " validation total " << row.report.total << " folds "
                    << row.report.folding_count << '\n';
        }
      };
      const train::TrainResult result = train::train(volumes, config, std::nullopt, progress);
      net::save_checkpoint(train_out, result.params, config.fcn);
      write_run_manifest(train_out, config, volumes.size());
      train::write_curve_csv(train_curves, result.curve);
      std::cout << "trained " << config.iterations << " iterations on " << volumes.size() << " volumes\n";
    } else if (*reg_cmd) {
      const auto [params, fcn] = net::load_checkpoint(reg_ckpt);
      const Volume a = io::load_volume(reg_a);
      const Volume b = io::load_volume(reg_b);
      require_same_shape(a.shape(), b.shape(), "register");
      net::FcnParams used = params;
      if (reg_refine) {
        train::TrainConfig config = config_from(reg_config);
        config.fcn = fcn;
        if (reg_refine_iters) config.refine_iterations = *reg_refine_iters;
        if (reg_refine_lr) config.refine_learning_rate = *reg_refine_lr;
        config.validate();
        used = train::refine(params, config, a, b);
      }
      const auto [f_ab, f_ba] = net::predict_bidirectional(used, fcn, a, b);
      io::save_volume(f_ab, reg_flow_ab, io::Dtype::f64);
      io::save_volume(f_ba, reg_flow_ba, io::Dtype::f64);
      io::save_volume(sampler::warp(a, f_ab), reg_warped, io::Dtype::f64);
      if (!reg_warped_ba.empty()) io::save_volume(sampler::warp(b, f_ba), reg_warped_ba, io::Dtype::f64);
    } else if (*seg_cmd) {
      const auto [params, fcn] = net::load_checkpoint(seg_ckpt);
      const Volume test = io::load_volume(seg_test);
      std::vector<LabelMap> warped;
      for (const auto& atlas : data::load_atlases(seg_atlases)) {
        warped.push_back(sampler::warp_nearest(atlas.labels, flow_onto(params, fcn, atlas.image, test)));
      }
      io::save_labels(eval::multi_atlas_segment(warped), seg_out);
    } else if (*lm_cmd) {
      const auto [params, fcn] = net::load_checkpoint(lm_ckpt);
      const Volume test = io::load_volume(lm_test);
      std::vector<eval::AtlasLandmarks> mapped;
      for (const auto& atlas : data::load_atlases(lm_atlases)) {
        if (!atlas.landmarks) continue;
        // warps the test image toward the atlas; lives on the atlas grid
        mapped.push_back({flow_onto(params, fcn, test, atlas.image), *atlas.landmarks});
      }
      if (mapped.empty()) throw DataError(lm_atlases + ": no atlas has a <name>_landmarks.txt file");
      io::save_landmarks(eval::propagate_landmarks(mapped), lm_out);
    } else if (*met_cmd) {
      if (met_pred.empty() != met_truth.empty()) throw UsageError("--pred and --truth go together");
      if (met_lm_pred.empty() != met_lm_truth.empty()) {
        throw UsageError("--landmarks-pred and --landmarks-truth go together");
      }
      if (met_pred.empty() && met_lm_pred.empty()) throw UsageError("nothing to evaluate");
      std::vector<eval::MetricRow> rows;
      if (!met_pred.empty()) {
        rows = eval::label_metrics(met_image, io::load_labels(met_pred), io::load_labels(met_truth));
      }
      if (!met_lm_pred.empty()) {
        const auto lm = eval::landmark_metrics(met_image, io::load_landmarks(met_lm_pred), io::load_landmarks(met_lm_truth));
        rows.insert(rows.end(), lm.begin(), lm.end());
      }
      eval::write_metrics_csv(met_out, rows);
    } else if (*fold_cmd) {
      const Volume flow = io::load_volume(fold_flow);
      require_flow(flow, "folding");
      const auto per_axis = loss::folding_count_per_axis(flow);
      std::cout << "folding_count " << loss::folding_count(flow) << '\n'
                << "axis_x " << per_axis[0] << '\n'
                << "axis_y " << per_axis[1] << '\n'
                << "axis_z " << per_axis[2] << '\n';
    } else if (*abl_cmd) {
      experiment::AblationOptions options;
      options.config = config_from(abl_config);
      if (abl_seed) options.config.seed = *abl_seed;
      options.heldout = abl_heldout;
      const data::Dataset ds = data::load_dataset(abl_data);
      RunLock lock(abl_out);
      const auto variants = experiment::run_ablation(ds.pairs, options, [](const std::string& name) {
        std::cerr << "training variant " << name << '\n';
      });
      for (const auto& v : variants) {
        const fs::path dir = fs::path(abl_out) / v.name;
        net::save_checkpoint(dir, v.trained.params, v.config.fcn);
        write_run_manifest(dir, v.config, 2 * (ds.pairs.size() - options.heldout));
        train::write_curve_csv(dir / "curves.csv", v.trained.curve);
      }
      experiment::write_ablation_table(fs::path(abl_out) / "ablation.csv", variants);
      std::cout << "variant       pairs_folded  mean_sim      mean_inv      mean_landmark_error\n";
      for (const auto& v : variants) {
        std::size_t folded = 0;
        double sim = 0.0, inv = 0.0, lm = 0.0;
        for (const auto& o : v.outcomes) {
          folded += o.report.folding_count > 0;
          sim += o.report.sim;
          inv += o.report.inv;
          lm += o.landmark_error;
        }
        const double k = static_cast<double>(v.outcomes.size());
        std::cout << std::left << std::setw(14) << v.name << std::setw(14)
                  << (std::to_string(folded) + "/" + std::to_string(v.outcomes.size())) << std::setw(14) << sim / k
                  << std::setw(14) << inv / k << lm / k << '\n';
      }
    } else if (*exp_cmd) {
      const Volume vol = io::load_volume(exp_in);
      const auto bounds = io::export_slice(vol, io::parse_axis(exp_axis), exp_index, exp_out);
      std::cout << "bounds";
      for (const auto& b : bounds.per_channel) std::cout << ' ' << fmt(b[0]) << ' ' << fmt(b[1]);
      std::cout << '\n';
    } else if (*grid_cmd) {
      const train::TrainConfig config = config_from(grid_config);
      std::vector<Volume> volumes;
      std::vector<LabelMap> labels;
      if (fs::exists(fs::path(grid_data) / "manifest.txt")) {
        for (const auto& np : data::load_dataset(grid_data).pairs) {
          volumes.push_back(np.pair.a);
          volumes.push_back(np.pair.b);
          labels.push_back(np.pair.labels_a);
          labels.push_back(np.pair.labels_b);
        }
      } else {
        volumes = data::load_training_volumes(grid_data);
      }
      const auto alphas = grid_alphas.empty() ? train::decade_grid() : parse_list(grid_alphas, "--alphas");
      const auto betas = grid_betas.empty() ? train::decade_grid() : parse_list(grid_betas, "--betas");
      const auto points = train::grid_search(volumes, labels, config, alphas, betas);
      std::ofstream out(grid_out, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write " + grid_out);
      out << "rank,alpha,beta,folds,score\n";
      for (std::size_t r = 0; r < points.size(); ++r) {
        out << r + 1 << ',' << fmt(points[r].alpha) << ',' << fmt(points[r].beta) << ',' << points[r].folds << ','
            << fmt(points[r].score) << '\n';
      }
      if (!out) throw IoError("write failed for " + grid_out);
      std::cout << "best alpha " << fmt(points.front().alpha) << " beta " << fmt(points.front().beta) << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "icnet: usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "icnet: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "icnet: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "icnet: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "icnet: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
