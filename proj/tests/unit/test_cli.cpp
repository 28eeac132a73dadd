#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <sstream>

#include "icnet/dataset.hpp"
#include "icnet/io.hpp"
#include "icnet/network.hpp"
#include "scratch.hpp"

using namespace icnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; arguments are passed through the shell.
Run icnet_cli(const std::string& args) {
  const std::string cmd = std::string("'") + ICNET_CLI_PATH + "' " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const char* kTinyConfig =
    "n = 2\n"
    "depth = 1\n"
    "iterations = 6\n"
    "validation_interval = 3\n"
    "validation_pairs = 1\n"
    "validation_fraction = 0.3\n";

// Small dataset on disk plus a checkpoint whose head is zero.
struct Workspace {
  ScratchDir dir;
  explicit Workspace(const std::string& tag) : dir(tag) {
    data::DatasetSpec spec;
    spec.shape = {12, 12, 12};
    spec.pairs = 3;
    spec.max_disp = 1.0;
    spec.num_blobs = 4;
    data::write_dataset(dir / "data", spec, data::generate_pairs(spec));
    write_file(dir / "tiny.cfg", kTinyConfig);
    net::FcnConfig fcn;
    fcn.n = 2;
    fcn.depth = 1;
    net::save_checkpoint(dir / "zero", net::init_params(fcn, 1), fcn);
  }
  fs::path pair(const std::string& file) const { return dir / "data" / "pair_000" / file; }
};

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(icnet_cli("").code, 2);
  EXPECT_EQ(icnet_cli("frobnicate").code, 2);
  EXPECT_EQ(icnet_cli("folding").code, 2);
  EXPECT_EQ(icnet_cli("synth --shape 8x8 /tmp/never").code, 2);
  EXPECT_EQ(icnet_cli("--help").code, 0);
}

TEST(Cli, DataErrorsExitThree) {
  Workspace ws("cli_data");
  EXPECT_EQ(icnet_cli("folding --flow " + q(ws.dir / "missing.icvol")).code, 3);
  EXPECT_EQ(icnet_cli("folding --flow " + q(ws.pair("A.icvol"))).code, 3);  // one channel
  write_file(ws.dir / "typo.cfg", "alhpa = 1\n");
  EXPECT_EQ(icnet_cli("train --data " + q(ws.dir / "data") + " --config " + q(ws.dir / "typo.cfg") + " --out " +
                      q(ws.dir / "ck") + " --curves " + q(ws.dir / "c.csv"))
                .code,
            3);
  fs::create_directories(ws.dir / "busy");
  write_file(ws.dir / "busy" / ".lock", "");
  EXPECT_EQ(icnet_cli("train --quiet --data " + q(ws.dir / "data") + " --config " + q(ws.dir / "tiny.cfg") +
                      " --out " + q(ws.dir / "busy") + " --curves " + q(ws.dir / "c.csv"))
                .code,
            3);
}

TEST(Cli, NonFiniteTrainingExitsFour) {
  Workspace ws("cli_numeric");
  write_file(ws.dir / "wild.cfg", std::string(kTinyConfig) + "zero_head = false\nlearning_rate = 1e300\n");
  EXPECT_EQ(icnet_cli("train --quiet --data " + q(ws.dir / "data") + " --config " + q(ws.dir / "wild.cfg") +
                      " --out " + q(ws.dir / "ck") + " --curves " + q(ws.dir / "c.csv"))
                .code,
            4);
}

TEST(Cli, SynthWritesLoadableDataset) {
  ScratchDir dir("cli_synth");
  const auto r = icnet_cli("synth --seed 3 --shape 8 --pairs 2 --max-disp 1 --num-blobs 3 " + q(dir / "d"));
  ASSERT_EQ(r.code, 0);
  const auto ds = data::load_dataset(dir / "d");
  EXPECT_EQ(ds.pairs.size(), 2u);
  EXPECT_EQ(ds.spec.seed, 3u);
  EXPECT_EQ(ds.spec.shape, (GridShape{8, 8, 8}));
  EXPECT_FALSE(fs::exists(dir / "d" / ".lock"));
}

TEST(Cli, RegisterWithZeroHeadIsIdentity) {
  Workspace ws("cli_register");
  const auto r = icnet_cli("register --ckpt " + q(ws.dir / "zero") + " --a " + q(ws.pair("A.icvol")) + " --b " +
                           q(ws.pair("B.icvol")) + " --out-flow-ab " + q(ws.dir / "fab.icvol") + " --out-flow-ba " +
                           q(ws.dir / "fba.icvol") + " --out-warped " + q(ws.dir / "w.icvol"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(io::load_volume(ws.dir / "w.icvol"), io::load_volume(ws.pair("A.icvol")));
  const Volume fab = io::load_volume(ws.dir / "fab.icvol");
  for (double x : fab.data()) EXPECT_EQ(x, 0.0);
  const auto f = icnet_cli("folding --flow " + q(ws.dir / "fba.icvol"));
  EXPECT_EQ(f.code, 0);
  EXPECT_NE(f.out.find("folding_count 0\n"), std::string::npos);
}

TEST(Cli, FoldingReportsPerAxis) {
  ScratchDir dir("cli_fold");
  Flow f(GridShape{3, 3, 3}, 3);
  f.at(1, 1, 1, 1) = -2.0;
  io::save_volume(f, dir / "f.icvol");
  const auto r = icnet_cli("folding --flow " + q(dir / "f.icvol"));
  EXPECT_EQ(r.out, "folding_count 1\naxis_x 0\naxis_y 1\naxis_z 0\n");
}

TEST(Cli, MetricsOnIdenticalMapsGiveUnitDice) {
  Workspace ws("cli_metrics");
  const auto r = icnet_cli("metrics --pred " + q(ws.pair("A_labels.icvol")) + " --truth " +
                           q(ws.pair("A_labels.icvol")) + " --landmarks-pred " + q(ws.pair("A_landmarks.txt")) +
                           " --landmarks-truth " + q(ws.pair("A_landmarks.txt")) + " --out " + q(ws.dir / "m.csv"));
  ASSERT_EQ(r.code, 0);
  std::istringstream csv(read_file(ws.dir / "m.csv"));
  std::string line;
  std::size_t dsc_rows = 0;
  while (std::getline(csv, line)) {
    if (line.find(",DSC,") != std::string::npos) {
      ++dsc_rows;
      EXPECT_EQ(line.substr(line.rfind(',') + 1), "1");
    }
    if (line.find(",error,") != std::string::npos) EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
  }
  EXPECT_GT(dsc_rows, 0u);
  EXPECT_EQ(icnet_cli("metrics --pred " + q(ws.pair("A_labels.icvol")) + " --out " + q(ws.dir / "m.csv")).code, 2);
}

TEST(Cli, SegmentAndLandmarksWithZeroHead) {
  Workspace ws("cli_atlas");
  fs::create_directories(ws.dir / "atlases");
  for (const char* side : {"A", "B"}) {
    fs::copy_file(ws.pair(std::string(side) + ".icvol"), ws.dir / "atlases" / (std::string(side) + ".icvol"));
    fs::copy_file(ws.pair(std::string(side) + "_labels.icvol"),
                  ws.dir / "atlases" / (std::string(side) + "_labels.icvol"));
    fs::copy_file(ws.pair(std::string(side) + "_landmarks.txt"),
                  ws.dir / "atlases" / (std::string(side) + "_landmarks.txt"));
  }
  const std::string common = " --ckpt " + q(ws.dir / "zero") + " --atlases " + q(ws.dir / "atlases") + " --test " +
                             q(ws.pair("A.icvol"));
  ASSERT_EQ(icnet_cli("segment" + common + " --out " + q(ws.dir / "seg.icvol")).code, 0);
  // identity flows: the vote of {A, B} labels, ties to the smaller label
  const LabelMap la = io::load_labels(ws.pair("A_labels.icvol")), lb = io::load_labels(ws.pair("B_labels.icvol"));
  const LabelMap seg = io::load_labels(ws.dir / "seg.icvol");
  for (std::size_t i = 0; i < seg.voxels(); ++i)
    EXPECT_EQ(seg.labels()[i], std::min(la.labels()[i], lb.labels()[i]));

  ASSERT_EQ(icnet_cli("landmarks" + common + " --out " + q(ws.dir / "lm.txt")).code, 0);
  const auto pa = io::load_landmarks(ws.pair("A_landmarks.txt")), pb = io::load_landmarks(ws.pair("B_landmarks.txt"));
  const auto got = io::load_landmarks(ws.dir / "lm.txt");
  ASSERT_EQ(got.size(), pa.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(got[i][k], 0.5 * (pa[i][k] + pb[i][k]), 1e-12);
}

TEST(Cli, TrainingIsReproducible) {
  Workspace ws("cli_train");
  const auto train = [&](const std::string& tag) {
    return icnet_cli("train --quiet --data " + q(ws.dir / "data") + " --config " + q(ws.dir / "tiny.cfg") +
                     " --out " + q(ws.dir / ("ck_" + tag)) + " --curves " + q(ws.dir / (tag + ".csv")))
        .code;
  };
  ASSERT_EQ(train("one"), 0);
  ASSERT_EQ(train("two"), 0);
  EXPECT_EQ(read_file(ws.dir / "one.csv"), read_file(ws.dir / "two.csv"));
  for (const auto& entry : fs::directory_iterator(ws.dir / "ck_one")) {
    const auto name = entry.path().filename();
    if (name == "run.txt") continue;
    EXPECT_EQ(read_file(entry.path()), read_file(ws.dir / "ck_two" / name)) << name;
  }
  EXPECT_EQ(read_file(ws.dir / "one.csv").rfind("iteration,split,", 0), 0u);
}

TEST(Cli, RefineAndExportSlice) {
  Workspace ws("cli_refine");
  const auto r = icnet_cli("register --refine --refine-iterations 2 --ckpt " + q(ws.dir / "zero") + " --a " +
                           q(ws.pair("A.icvol")) + " --b " + q(ws.pair("B.icvol")) + " --out-flow-ab " +
                           q(ws.dir / "fab.icvol") + " --out-flow-ba " + q(ws.dir / "fba.icvol") + " --out-warped " +
                           q(ws.dir / "w.icvol") + " --out-warped-ba " + q(ws.dir / "wba.icvol"));
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(ws.dir / "wba.icvol"));
  const auto e = icnet_cli("export-slice --in " + q(ws.dir / "fab.icvol") + " --axis z --index 4 --out " +
                           q(ws.dir / "s.ppm"));
  EXPECT_EQ(e.code, 0);
  EXPECT_EQ(read_file(ws.dir / "s.ppm").rfind("P6\n12 12\n255\n", 0), 0u);
  EXPECT_EQ(icnet_cli("export-slice --in " + q(ws.dir / "fab.icvol") + " --axis z --index 12 --out " +
                      q(ws.dir / "s.ppm"))
                .code,
            3);
}

TEST(Cli, AblateWritesTableAndVariants) {
  Workspace ws("cli_ablate");
  const auto r = icnet_cli("ablate --data " + q(ws.dir / "data") + " --config " + q(ws.dir / "tiny.cfg") +
                           " --heldout 1 --out " + q(ws.dir / "abl"));
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(ws.dir / "abl" / "ablation.csv"));
  for (const char* v : {"full", "no_inverse", "no_antifold"})
    EXPECT_TRUE(fs::exists(ws.dir / "abl" / v / "manifest.txt")) << v;
  EXPECT_NE(r.out.find("no_antifold"), std::string::npos);
}
