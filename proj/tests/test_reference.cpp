#include <gtest/gtest.h>

#include "support.hpp"

using namespace voxfuse;
using namespace vftest;

namespace {

constexpr double kResidualChecksum = 776.052786767;
constexpr double kResidualSquares = 396.582808559;

// Convolution as an explicit sum over (output, input, offset) coordinate lists.
StandardTensor listed_conv(const StandardTensor& in, const StandardTensor& k, const StandardTensor& bias, Dim3 st) {
  const auto si = in.shape5();
  const auto sk = k.shape5();
  const Shape5 so{si.b, sk.b, (si.x - sk.x) / st.x + 1, (si.y - sk.y) / st.y + 1, (si.z - sk.z) / st.z + 1};
  std::vector<std::array<std::int64_t, 3>> offsets;
  for (std::int64_t i = 0; i < sk.x; ++i)
    for (std::int64_t j = 0; j < sk.y; ++j)
      for (std::int64_t l = 0; l < sk.z; ++l) offsets.push_back({i, j, l});
  StandardTensor out({so.b, so.f, so.x, so.y, so.z});
  for (std::int64_t b = 0; b < so.b; ++b)
    for (std::int64_t m = 0; m < so.f; ++m)
      for (std::int64_t x = 0; x < so.x; ++x)
        for (std::int64_t y = 0; y < so.y; ++y)
          for (std::int64_t z = 0; z < so.z; ++z) {
            long double acc = bias.data()[static_cast<std::size_t>(m)];
            for (std::int64_t n = 0; n < si.f; ++n)
              for (const auto& o : offsets)
                acc += static_cast<long double>(in.at(b, n, x * st.x + o[0], y * st.y + o[1], z * st.z + o[2])) *
                       k.at(m, n, o[0], o[1], o[2]);
            out.at(b, m, x, y, z) = static_cast<float>(acc);
          }
  return out;
}

}  // namespace

TEST(Reference, HandComputedPlanarCase) {
  // Two 3x3 input planes against a 2x2 kernel per plane.
  StandardTensor in({1, 2, 3, 3, 1});
  for (int i = 0; i < 18; ++i) in.data()[i] = static_cast<float>(i + 1);
  StandardTensor k({1, 2, 2, 2, 1});
  const float kv[] = {1, 0, 0, -1, 2, 1, 0, 0};
  std::copy(std::begin(kv), std::end(kv), k.data().begin());
  const auto out = reference::ref_conv3d(in, k, std::vector<float>{1.0f}, Dim3::all(1), {});
  ASSERT_EQ(out.dims(), (std::vector<std::int64_t>{1, 1, 2, 2, 1}));
  // plane 0: a - e; plane 1: 2a + b; plus bias
  EXPECT_EQ(out.at(0, 0, 0, 0, 0), (1 - 5) + (2 * 10 + 11) + 1);
  EXPECT_EQ(out.at(0, 0, 0, 1, 0), (2 - 6) + (2 * 11 + 12) + 1);
  EXPECT_EQ(out.at(0, 0, 1, 0, 0), (4 - 8) + (2 * 13 + 14) + 1);
  EXPECT_EQ(out.at(0, 0, 1, 1, 0), (5 - 9) + (2 * 14 + 15) + 1);
}

TEST(Reference, UnitKernelIsIdentity) {
  std::mt19937 rng(40);
  const auto in = random_tensor({2, 1, 4, 5, 3}, rng);
  EXPECT_EQ(reference::ref_conv3d(in, StandardTensor({1, 1, 1, 1, 1}, 1.0f), {}, Dim3::all(1), {}), in);
}

TEST(Reference, AllOnesSumsWindowPlusBias) {
  const auto out = reference::ref_conv3d(StandardTensor({1, 1, 5, 5, 5}, 1.0f), StandardTensor({1, 1, 3, 3, 3}, 1.0f),
                                         std::vector<float>{0.5f}, Dim3::all(1), {});
  for (float v : out.data()) EXPECT_EQ(v, 27.5f);
  const auto padded = reference::ref_conv3d(StandardTensor({1, 1, 3, 3, 3}, 1.0f), StandardTensor({1, 1, 3, 3, 3}, 1.0f),
                                            {}, Dim3::all(1), Dim3::all(1));
  EXPECT_EQ(padded.at(0, 0, 1, 1, 1), 27.0f);
  EXPECT_EQ(padded.at(0, 0, 0, 0, 0), 8.0f);
  EXPECT_EQ(padded.at(0, 0, 0, 1, 1), 18.0f);
}

TEST(Reference, ConvolutionMatchesCoordinateListSum) {
  std::mt19937 rng(41);
  int cases = 0;
  for (int ex = 1; ex <= 5; ++ex)
    for (int kx = 1; kx <= std::min(ex, 3); ++kx)
      for (int sx = 1; sx <= 2; ++sx) {
        const int ey = 1 + (ex + kx) % 5, ez = 6 - ex;
        const int ky = std::min(ey, 1 + (kx + sx) % 3), kz = std::min(ez, 1 + ex % 3);
        const auto in = random_tensor({1, 1 + ex % 3, ex, ey, ez}, rng);
        const auto k = random_tensor({1 + kx % 2, in.shape5().f, kx, ky, kz}, rng);
        const auto bias = random_tensor({k.shape5().b}, rng);
        const Dim3 st{sx, 1 + ex % 2, 1};
        EXPECT_LE(max_abs_diff(reference::ref_conv3d(in, k, bias.data(), st, {}), listed_conv(in, k, bias, st)), 1e-6);
        ++cases;
      }
  EXPECT_GT(cases, 20);
}

TEST(Reference, DeconvolutionIsAdjointOfConvolution) {
  // <deconv(x), y> == <x, conv(y)> for a stride-s kernel without bias.
  std::mt19937 rng(42);
  const auto x = random_tensor({1, 3, 3, 2, 4}, rng);
  const auto k = random_tensor({2, 3, 2, 3, 2}, rng);  // deconv: (out, in, k)
  const Dim3 st{2, 2, 1};
  const auto dx = reference::ref_deconv3d(x, k, {}, st, {});
  const auto y = random_tensor(dx.dims(), rng);
  StandardTensor kt({3, 2, 2, 3, 2});
  for (int m = 0; m < 3; ++m)
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
          for (int l = 0; l < 2; ++l) kt.at(m, n, i, j, l) = k.at(n, m, i, j, l);
  const auto cy = reference::ref_conv3d(y, kt, {}, st, {});
  ASSERT_EQ(cy.dims(), x.dims());
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < dx.numel(); ++i) lhs += double{dx.data()[i]} * y.data()[i];
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += double{x.data()[i]} * cy.data()[i];
  EXPECT_NEAR(lhs, rhs, 1e-4);
}

TEST(Reference, ActivationsAndLinearLayers) {
  EXPECT_EQ(reference::ref_activation_value(OpKind::ReLU, -2.0f), 0.0f);
  EXPECT_EQ(reference::ref_activation_value(OpKind::ReLU, 2.0f), 2.0f);
  EXPECT_EQ(reference::ref_activation_value(OpKind::ELU, 0.0f), 0.0f);
  EXPECT_NEAR(reference::ref_activation_value(OpKind::ELU, -1.0f, 2.0f), 2.0 * (std::exp(-1.0) - 1.0), 1e-7);
  EXPECT_EQ(reference::ref_activation_value(OpKind::Sigmoid, 0.0f), 0.5f);
  const StandardTensor one({1, 2, 1, 1, 1}, 3.0f);
  const auto bn = reference::ref_bn(one, std::vector<float>{1.0f, 3.0f}, std::vector<float>{4.0f, 1.0f}, 0.0f);
  EXPECT_NEAR(bn.data()[0], 1.0f, 1e-7);
  EXPECT_NEAR(bn.data()[1], 0.0f, 1e-7);
  const auto sc = reference::ref_scale(one, std::vector<float>{2.0f, -1.0f}, std::vector<float>{0.5f, 0.0f});
  EXPECT_EQ(sc.data()[0], 6.5f);
  EXPECT_EQ(sc.data()[1], -3.0f);
}

TEST(Reference, UnoptimisedEngineAgrees) {
  for (std::uint32_t seed = 200; seed < 215; ++seed) {
    const auto m = random_network(seed);
    const auto in = seeded_inputs(m.spec, seed);
    EXPECT_LE(max_abs_diff(execute(compile(m.spec, m.weights, PassOptions::none()).plan, in),
                           reference::ref_run(m.spec, m.weights, in)),
              1e-5)
        << seed;
  }
}

// Fixed checksum of the residual network at a small size; changes here mean
// the zoo generator, the seeded weights or the oracle changed.
TEST(Reference, ResidualChecksumIsStable) {
  const auto m = zoo_model(ZooVariant::Residual, 2, Dim3::all(8), 7);
  const auto out = reference::ref_run(m.spec, m.weights, seeded_inputs(m.spec, 7));
  double sum = 0, sq = 0;
  for (const auto& t : out)
    for (float v : t.data()) {
      sum += v;
      sq += double{v} * v;
    }
  RecordProperty("checksum", std::to_string(sum));
  EXPECT_NEAR(sum, kResidualChecksum, 1e-3);
  EXPECT_NEAR(sq, kResidualSquares, 1e-3);
}
