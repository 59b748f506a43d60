#include <random>

#include "doctest.h"
#include "igs/decoder.hpp"
#include "test_util.hpp"

using namespace igs;
using igs::testing::rel_error;

TEST_CASE("default decoder shape is 15 -> 168 -> 168 -> D") {
  const MlpDecoder d = MlpDecoder::create(15, {kHiddenWidth, kHiddenWidth}, raw_attribute_dim(1), 1);
  CHECK(d.layers().size() == 3);
  CHECK(d.in_dim() == 15);
  CHECK(d.out_dim() == 20);
  CHECK(d.hidden_dims() == std::vector<int>{168, 168});
  CHECK(d.parameter_count() == 15 * 168 + 168 + 168 * 168 + 168 + 168 * 20 + 20);
}

TEST_CASE("decode_level: zero weights give the output bias") {
  MlpDecoder d = MlpDecoder::create(15, {8, 8}, 20, 2);
  for (DenseLayer& l : d.layers()) l.weight.setZero();
  const VecX b = d.layers().back().bias;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) CHECK(decode_level(d, VecX::Random(15)) == b);
}

TEST_CASE("decode_level: dead ReLUs give the output bias") {
  MlpDecoder d = MlpDecoder::create(3, {4, 4}, 2, 3);
  d.layers()[0].weight.setZero();
  d.layers()[0].bias.setConstant(-1.0);
  d.layers()[1].bias.setConstant(-1.0);
  CHECK(decode_level(d, VecX::Random(3)) == d.layers().back().bias);
}

TEST_CASE("decode_level: hand-computed 2-unit network on a one-hot input") {
  // in 3 -> hidden 2 -> hidden 2 -> out 1, identity-like middle layer.
  std::vector<DenseLayer> layers(3);
  layers[0].weight.resize(2, 3);
  layers[0].weight << 1.5, -2.0, 0.5,  //
      -1.0, 3.0, 0.25;
  layers[0].bias = VecX::Zero(2);
  layers[1].weight = MatX::Identity(2, 2);
  layers[1].bias = VecX::Zero(2);
  layers[2].weight.resize(1, 2);
  layers[2].weight << 2.0, 1.0;
  layers[2].bias = VecX::Constant(1, 0.5);
  const MlpDecoder d(layers);
  // One-hot e_1 selects column 1 of layer 1: (-2, 3) -> ReLU -> (0, 3) -> out 0*2 + 3*1 + 0.5.
  VecX e1 = VecX::Zero(3);
  e1[1] = 1.0;
  CHECK(decode_level(d, e1)[0] == doctest::Approx(3.5));
  VecX e0 = VecX::Zero(3);
  e0[0] = 1.0;  // column 0: (1.5, -1) -> (1.5, 0) -> 3.0 + 0.5
  CHECK(decode_level(d, e0)[0] == doctest::Approx(3.5));
  VecX e2 = VecX::Zero(3);
  e2[2] = 2.0;  // (1, 0.5) -> 2 + 0.5 + 0.5
  CHECK(decode_level(d, e2)[0] == doctest::Approx(3.0));
}

TEST_CASE("decoder_backward: zero upstream and linear degenerate case") {
  MlpDecoder d = MlpDecoder::create(4, {6}, 3, 4);
  MlpGradients g = d.zero_gradients();
  const VecX f = VecX::Random(4);
  const VecX df = decoder_backward(d, f, VecX::Zero(3), g);
  CHECK(df.isZero(0.0));
  for (const MatX& w : g.weight) CHECK(w.isZero(0.0));

  MlpDecoder lin = MlpDecoder::create(4, {}, 3, 5);
  MlpGradients gl = lin.zero_gradients();
  const VecX up = VecX::Random(3);
  const VecX dfl = decoder_backward(lin, f, up, gl);
  CHECK(gl.weight[0].isApprox(up * f.transpose()));
  CHECK(gl.bias[0].isApprox(up));
  CHECK(dfl.isApprox(lin.layers()[0].weight.transpose() * up));
}

TEST_CASE("decoder_backward matches central finite differences") {
  MlpDecoder d = MlpDecoder::create(15, {kHiddenWidth, kHiddenWidth}, 20, 6);
  for (DenseLayer& l : d.layers()) l.bias.array() += 0.05;
  std::mt19937_64 rng(8);
  VecX f = VecX::Random(15);
  const VecX up = VecX::Random(20);
  MlpGradients g = d.zero_gradients();
  const VecX df = decoder_backward(d, f, up, g);
  auto loss = [&]() { return up.dot(decode_level(d, f)); };

  std::vector<double*> params;
  std::vector<double> an;
  for (Eigen::Index i = 0; i < 15; ++i) {
    params.push_back(&f[i]);
    an.push_back(df[i]);
  }
  std::uniform_int_distribution<int> pick(0, 1 << 30);
  for (std::size_t k = 0; k < d.layers().size(); ++k) {
    MatX& w = d.layers()[k].weight;
    for (int s = 0; s < 40; ++s) {
      const Eigen::Index i = pick(rng) % w.size();
      params.push_back(&w.data()[i]);
      an.push_back(g.weight[k].data()[i]);
    }
    VecX& b = d.layers()[k].bias;
    for (int s = 0; s < 10; ++s) {
      const Eigen::Index i = pick(rng) % b.size();
      params.push_back(&b[i]);
      an.push_back(g.bias[k][i]);
    }
  }
  const VecX fd = igs::testing::central_diff(loss, params, 1e-6);
  CHECK(rel_error(Eigen::Map<VecX>(an.data(), static_cast<Eigen::Index>(an.size())), fd) < 1e-5);
}

TEST_CASE("accumulate: identity, residual identity and slot-wise sums") {
  const VecX a = VecX::Random(20);
  const std::vector<VecX> one = {a};
  CHECK(accumulate(one) == a);
  const std::vector<VecX> with_zero = {a, VecX::Zero(20), VecX::Zero(20)};
  CHECK(accumulate(with_zero) == a);
  const VecX x = (VecX(3) << 1, 2, 3).finished(), y = (VecX(3) << 10, 20, 30).finished(),
             z = (VecX(3) << 100, 200, 300).finished();
  const std::vector<VecX> three = {x, y, z};
  CHECK(accumulate(three) == (VecX(3) << 111, 222, 333).finished());
  CHECK_THROWS_AS(accumulate(std::vector<VecX>{}), Error);
}

TEST_CASE("activate: documented values and invariants") {
  VecX raw = VecX::Zero(20);
  raw[kRotationSlot] = 2.0;
  const GaussianAttributes a = activate(raw);
  CHECK(a.opacity == 0.5);
  CHECK(a.scale_exp == Vec3::Constant(-7.0));
  CHECK(a.rotation == Vec4(1, 0, 0, 0));
  CHECK(a.sh.size() == 12);

  const auto before = diagnostics().degenerate_rotations.load();
  VecX degenerate = VecX::Zero(20);
  CHECK(activate(degenerate).rotation == Vec4(1, 0, 0, 0));
  CHECK(diagnostics().degenerate_rotations.load() == before + 1);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int i = 0; i < 1000; ++i) {
    VecX r(20);
    for (Eigen::Index k = 0; k < 20; ++k) r[k] = n(rng);
    CHECK_NOTHROW(activate(r).validate());
  }
}

TEST_CASE("activate_backward matches finite differences") {
  std::mt19937_64 rng(10);
  VecX raw = VecX::Random(20);
  const double dop = 0.7;
  const Vec3 ds(0.1, -0.3, 0.2);
  const Vec4 dq(0.5, -0.2, 0.1, 0.9);
  const VecX dsh = VecX::Random(12);
  auto f = [&]() {
    const GaussianAttributes a = activate(raw);
    return dop * a.opacity + ds.dot(a.scale_exp) + dq.dot(a.rotation) + dsh.dot(a.sh);
  };
  const VecX an = activate_backward(raw, dop, ds, dq, dsh);
  std::vector<double*> params;
  for (Eigen::Index i = 0; i < 20; ++i) params.push_back(&raw[i]);
  CHECK(rel_error(an, igs::testing::central_diff(f, params, 1e-6)) < 1e-7);
}

TEST_CASE("scale_exp_to_raw inverts the scale activation") {
  for (double s : {-11.0, -7.0, -4.5, -2.5}) {
    VecX raw = VecX::Zero(8 + 3);
    raw[kRotationSlot] = 1.0;
    raw.segment<3>(kScaleSlot).setConstant(scale_exp_to_raw(s));
    CHECK(activate(raw).scale_exp[0] == doctest::Approx(s));
  }
}
