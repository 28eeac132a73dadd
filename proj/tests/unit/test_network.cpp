#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "icnet/io.hpp"
#include "icnet/network.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace icnet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

net::FcnConfig small_config(std::size_t depth = 2, std::size_t n = 2) {
  net::FcnConfig c;
  c.n = n;
  c.depth = depth;
  c.zero_head = false;
  return c;
}

Volume random_image(const GridShape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_volume(s, 1, rng, -2.0, 2.0);
}

// Flattens every weight and bias into leaves, in layer order.
std::vector<Tensor> param_leaves(const net::FcnParams& p) {
  std::vector<Tensor> out;
  for (const auto& l : p.layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

net::BoundParams bind_leaves(const std::vector<Var>& v, std::size_t offset, std::size_t layers) {
  net::BoundParams b;
  for (std::size_t i = 0; i < layers; ++i) {
    b.weights.push_back(v[offset + 2 * i]);
    b.biases.push_back(v[offset + 2 * i + 1]);
  }
  return b;
}

}  // namespace

TEST(Architecture, LayerNamesAndShapes) {
  const auto layers = net::architecture(small_config(2, 4));
  std::vector<std::string> names;
  for (const auto& l : layers) names.push_back(l.name);
  EXPECT_EQ(names, (std::vector<std::string>{"down0.conv", "down0.pool", "down1.conv", "down1.pool", "up1.deconv",
                                             "up1.conv", "up0.deconv", "up0.conv", "head"}));
  EXPECT_EQ(layers[0].weight.dims, (std::vector<std::size_t>{4, 2, 3, 3, 3}));
  EXPECT_EQ(layers[2].weight.dims, (std::vector<std::size_t>{8, 4, 3, 3, 3}));
  EXPECT_EQ(layers[4].weight.dims, (std::vector<std::size_t>{8, 8, 2, 2, 2}));
  EXPECT_EQ(layers[5].weight.dims, (std::vector<std::size_t>{8, 16, 3, 3, 3}));
  EXPECT_EQ(layers[8].weight.dims, (std::vector<std::size_t>{3, 4, 3, 3, 3}));
}

TEST(Init, DeterministicBoundedZeroBias) {
  const auto c = small_config(2, 3);
  const auto p = net::init_params(c, 42);
  EXPECT_EQ(p, net::init_params(c, 42));
  EXPECT_NE(p, net::init_params(c, 43));
  for (const auto& l : p.layers) {
    const auto& d = l.weight.dims;
    const double bound = std::sqrt(6.0 / static_cast<double>(d[1] * d[2] * d[3] * d[4]));
    for (double w : l.weight.data) EXPECT_LE(std::abs(w), bound);
    for (double b : l.bias.data) EXPECT_EQ(b, 0.0);
  }
}

TEST(Init, ZeroHeadOptionGivesIdentityFlow) {
  auto c = small_config();
  c.zero_head = true;
  const auto p = net::init_params(c, 1);
  for (double w : p.layers.back().weight.data) EXPECT_EQ(w, 0.0);
  const GridShape s{8, 8, 8};
  const Flow f = net::predict(p, c, random_image(s, 1), random_image(s, 2));
  for (double x : f.data()) EXPECT_EQ(x, 0.0);
}

TEST(Forward, AllZeroParametersGiveZeroFlow) {
  const auto c = small_config();
  auto p = net::init_params(c, 1);
  for (auto& l : p.layers) {
    std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
  }
  const Flow f = net::predict(p, c, random_image({8, 8, 8}, 3), random_image({8, 8, 8}, 4));
  for (double x : f.data()) EXPECT_EQ(x, 0.0);
}

TEST(Forward, OutputShapeMatchesInputDepthTwo) {
  const auto c = small_config(2, 2);
  const GridShape s{16, 16, 16};
  const Flow f = net::predict(net::init_params(c, 5), c, random_image(s, 5), random_image(s, 6));
  EXPECT_EQ(f.shape(), s);
  EXPECT_EQ(f.channels(), 3u);
  const GridShape r{16, 8, 12};
  EXPECT_EQ(net::predict(net::init_params(c, 5), c, random_image(r, 5), random_image(r, 6)).shape(), r);
}

TEST(Forward, OutputBoundedByTau) {
  auto c = small_config(1, 2);
  c.tau = 7.0;
  auto p = net::init_params(c, 7);
  for (auto& l : p.layers)
    for (double& w : l.weight.data) w *= 40.0;  // saturate the head
  const Flow f = net::predict(p, c, random_image({8, 8, 8}, 7), random_image({8, 8, 8}, 8));
  double peak = 0.0;
  for (double x : f.data()) peak = std::max(peak, std::abs(x));
  EXPECT_LE(peak, 7.0);
  EXPECT_GT(peak, 6.0);
}

TEST(Forward, RejectsIndivisibleExtents) {
  const auto c = small_config(2, 2);
  const GridShape s{12, 10, 12};
  EXPECT_THROW(net::predict(net::init_params(c, 1), c, random_image(s, 1), random_image(s, 2)), ShapeError);
  EXPECT_THROW(net::predict(net::init_params(c, 1), c, random_image({8, 8, 8}, 1), random_image({8, 8, 16}, 2)),
               ShapeError);
}

TEST(Bidirectional, SwapAndSymmetry) {
  const auto c = small_config(1, 2);
  const auto p = net::init_params(c, 9);
  const Volume a = random_image({8, 8, 8}, 10), b = random_image({8, 8, 8}, 11);
  const auto [ab, ba] = net::predict_bidirectional(p, c, a, b);
  const auto [ba2, ab2] = net::predict_bidirectional(p, c, b, a);
  EXPECT_EQ(ab, ab2);
  EXPECT_EQ(ba, ba2);
  EXPECT_EQ(ab, net::predict(p, c, a, b));
  const auto [s1, s2] = net::predict_bidirectional(p, c, a, a);
  EXPECT_EQ(s1, s2);
}

TEST(Bidirectional, SharedParameterGradientSumsBothPasses) {
  const auto c = small_config(1, 2);
  const auto p = net::init_params(c, 12);
  const std::size_t L = p.layers.size();
  const Tensor a = Tensor::from_volume(random_image({4, 4, 4}, 13));
  const Tensor b = Tensor::from_volume(random_image({4, 4, 4}, 14));
  std::mt19937_64 rng(15);
  const Tensor w1 = oracle::random_tensor({3, 4, 4, 4}, rng), w2 = oracle::random_tensor({3, 4, 4, 4}, rng);
  const auto fn = [&](Tape& tape, const std::vector<Var>& v) {
    const auto bound = bind_leaves(v, 0, L);
    const auto [fab, fba] = net::fcn_bidirectional(bound, c, tape.constant(a), tape.constant(b));
    return ad::add(ad::masked_weighted_sum(fab, w1), ad::masked_weighted_sum(fba, w2));
  };
  const auto check = oracle::check_gradient(fn, param_leaves(p), 16, 4);
  EXPECT_LT(check.max_relative_error, 1e-5);

  // the shared gradient is the sum of the two one-directional gradients
  auto one_way = [&](bool forward) {
    Tape tape;
    const auto bound = net::bind(tape, p);
    const Var av = tape.constant(a), bv = tape.constant(b);
    const Var f = forward ? net::fcn_forward(bound, c, av, bv) : net::fcn_forward(bound, c, bv, av);
    tape.backward(ad::masked_weighted_sum(f, forward ? w1 : w2));
    return net::gradients(tape, bound, p);
  };
  Tape tape;
  const auto bound = net::bind(tape, p);
  const auto [fab, fba] = net::fcn_bidirectional(bound, c, tape.constant(a), tape.constant(b));
  tape.backward(ad::add(ad::masked_weighted_sum(fab, w1), ad::masked_weighted_sum(fba, w2)));
  const auto both = net::gradients(tape, bound, p);
  const auto g1 = one_way(true), g2 = one_way(false);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t i = 0; i < both.layers[l].weight.size(); ++i)
      EXPECT_NEAR(both.layers[l].weight.data[i], g1.layers[l].weight.data[i] + g2.layers[l].weight.data[i], 1e-10);
}

TEST(Checkpoint, RoundTripIsExact) {
  ScratchDir dir("ckpt");
  auto c = small_config(2, 3);
  c.tau = 5.5;
  const auto p = net::init_params(c, 17);
  net::save_checkpoint(dir / "ck", p, c);
  const auto [p2, c2] = net::load_checkpoint(dir / "ck");
  EXPECT_EQ(p2, p);
  EXPECT_EQ(c2.n, 3u);
  EXPECT_EQ(c2.depth, 2u);
  EXPECT_EQ(c2.tau, 5.5);
  const std::string manifest = read_file(dir / "ck" / "manifest.txt");
  EXPECT_EQ(manifest.rfind(net::kCheckpointMagic, 0), 0u);
  EXPECT_NE(manifest.find("down0.conv"), std::string::npos);
}

TEST(Checkpoint, DamagedFilesAreRejected) {
  ScratchDir dir("ckpt_bad");
  const auto c = small_config(1, 2);
  net::save_checkpoint(dir / "ck", net::init_params(c, 1), c);
  EXPECT_THROW(net::load_checkpoint(dir / "missing"), IoError);
  // a tensor file whose size disagrees with the manifest
  io::save_volume(Volume(GridShape{2, 2, 2}, 1), dir / "ck" / "head.weight.icvol", io::Dtype::f64);
  EXPECT_THROW(net::load_checkpoint(dir / "ck"), FormatError);
  write_file(dir / "ck" / "manifest.txt", "not a checkpoint\n");
  EXPECT_THROW(net::load_checkpoint(dir / "ck"), FormatError);
}
