#include <gtest/gtest.h>

#include "support.hpp"

using namespace voxfuse;
using namespace vftest;

namespace {

std::vector<float> vec(const StandardTensor& t) { return {t.data().begin(), t.data().end()}; }

BlockedTensor blocked(const StandardTensor& t, int s) { return to_blocked(t, SimdWidth(s)); }

StandardTensor engine_conv(const StandardTensor& in, const StandardTensor& k, const StandardTensor& bias, int s,
                           ConvOptions opt = {}) {
  return from_blocked(conv3d(blocked(in, s), kernel_to_blocked(k, SimdWidth(s)), bias.data(), opt));
}

// Float scalar loops with the engine's operation order.
StandardTensor scalar_linear(const StandardTensor& in, const std::vector<float>& m, const std::vector<float>& a) {
  StandardTensor out(in.dims());
  const auto s = in.shape5();
  for (std::int64_t b = 0; b < s.b; ++b)
    for (std::int64_t f = 0; f < s.f; ++f)
      for (std::int64_t x = 0; x < s.x; ++x)
        for (std::int64_t y = 0; y < s.y; ++y)
          for (std::int64_t z = 0; z < s.z; ++z) out.at(b, f, x, y, z) = in.at(b, f, x, y, z) * m[f] + a[f];
  return out;
}

}  // namespace

TEST(Exp, VectorisedExpIsAccurate) {
  double worst = 0;
  for (float x = -80.0f; x <= 80.0f; x += 0.01337f) {
    const double ref = std::exp(static_cast<double>(x));
    const double got = simd::exp<4>(simd::splat<4>(x))[2];
    worst = std::max(worst, std::abs(got - ref) / ref);
  }
  EXPECT_LT(worst, 4e-7);
  EXPECT_EQ(simd::exp<1>(simd::splat<1>(0.0f))[0], 1.0f);
}

TEST(SubImage, AllOnesSumsTheWindow) {
  for (int s : {2, 4, 16}) {
    const auto in = blocked(StandardTensor({1, 1, 3, 3, 3}, 1.0f), s);
    const BlockedKernel k = kernel_to_blocked(StandardTensor({1, 1, 3, 3, 3}, 1.0f), SimdWidth(s));
    const PackedKernel pk(k);
    BlockedTensor out({1, 1, 1, 1, 1}, SimdWidth(s));
    const auto bias = lane_padded({}, 1, s);
    ConvInvocation inv;
    inv.input = in.cref();
    inv.kernel = &pk;
    inv.bias = bias.span();
    inv.output = out.ref();
    SubImageTask t;
    t.extent = {1, 1, 1};
    subimage_primitive(t, inv);
    EXPECT_EQ(out.at(0, 0, 0, 0, 0), 27.0f);
  }
}

TEST(SubImage, AdditiveInitialisesWithBiasPlusBase) {
  const int s = 4;
  const auto in = blocked(StandardTensor({1, 2, 2, 2, 2}, 3.0f), s);
  const PackedKernel pk(kernel_to_blocked(StandardTensor({3, 2, 1, 1, 1}, 0.0f), SimdWidth(s)));
  const auto base = blocked(StandardTensor({1, 3, 2, 2, 2}, 10.0f), s);
  BlockedTensor out({1, 3, 2, 2, 2}, SimdWidth(s));
  const std::vector<float> b{0.5f, 0.5f, 0.5f};
  const auto bias = lane_padded(b, 3, s);
  const auto scale = lane_padded({}, 3, s, 1.0f);
  ConvInvocation inv;
  inv.input = in.cref();
  inv.kernel = &pk;
  inv.bias = bias.span();
  inv.base = base.cref();
  inv.base_scale = scale.span();
  inv.additive = true;
  inv.output = out.ref();
  conv3d(inv);
  for (float v : vec(from_blocked(out))) EXPECT_EQ(v, 10.5f);
  for (int l = 3; l < s; ++l) EXPECT_EQ(out.data()[l], 0.0f);
}

// Applying the input blocks one at a time over a patch equals the naive
// convolution restricted to that patch.
TEST(SubImage, BlockwiseAccumulationMatchesNaivePatch) {
  std::mt19937 rng(21);
  const int s = 4;
  const auto in = random_tensor({1, 8, 6, 7, 9}, rng);
  const auto k = random_tensor({5, 8, 3, 3, 3}, rng);
  const auto bias = random_tensor({5}, rng);
  const auto want = reference::ref_conv3d(in, k, bias.data(), Dim3::all(1), {});
  const auto bin = blocked(in, s);
  const PackedKernel pk(kernel_to_blocked(k, SimdWidth(s)));
  BlockedTensor out({1, 5, 4, 5, 7}, SimdWidth(s));
  const auto bp = lane_padded(bias.data(), 5, s);
  ConvInvocation inv;
  inv.input = bin.cref();
  inv.kernel = &pk;
  inv.bias = bp.span();
  inv.output = out.ref();
  SubImageTask t;
  t.out_block = 1;
  t.origin = {1, 2, 3};
  t.extent = {2, 3, 4};
  for (int ib = 0; ib < 2; ++ib) {
    t.in_block = ib;
    t.first_input_block = ib == 0;
    t.last_input_block = ib == 1;
    subimage_primitive(t, inv);
  }
  for (int f = 4; f < 5; ++f)
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 5; ++y)
        for (int z = 0; z < 7; ++z) {
          const bool inside = x >= 1 && x < 3 && y >= 2 && y < 5 && z >= 3 && z < 7;
          const float got = out.at(0, f, x, y, z);
          if (inside) EXPECT_NEAR(got, want.at(0, f, x, y, z), 1e-5);
          else EXPECT_EQ(got, 0.0f);
        }
}

TEST(Conv3d, IdentityKernelAddsBias) {
  std::mt19937 rng(22);
  const auto in = random_tensor({2, 1, 4, 3, 5}, rng);
  const auto out = engine_conv(in, StandardTensor({1, 1, 1, 1, 1}, 1.0f), StandardTensor({1}, 0.25f), 4);
  for (std::size_t i = 0; i < in.data().size(); ++i) EXPECT_EQ(out.data()[i], in.data()[i] + 0.25f);
}

TEST(Conv3d, StridedConstantField) {
  ConvOptions opt;
  opt.stride = Dim3::all(2);
  const auto out = engine_conv(StandardTensor({1, 1, 4, 4, 4}, 1.0f), StandardTensor({1, 1, 2, 2, 2}, 1.0f),
                               StandardTensor({1}, 0.5f), 8, opt);
  ASSERT_EQ(out.dims(), (std::vector<std::int64_t>{1, 1, 2, 2, 2}));
  for (float v : out.data()) EXPECT_EQ(v, 8.5f);
}

TEST(Conv3d, RandomMatchesOracle) {
  std::mt19937 rng(23);
  const auto in = random_tensor({1, 5, 8, 8, 8}, rng);
  const auto k = random_tensor({7, 5, 3, 3, 3}, rng);
  const auto bias = random_tensor({7}, rng);
  const auto want = reference::ref_conv3d(in, k, bias.data(), Dim3::all(1), {});
  EXPECT_LE(max_abs_diff(engine_conv(in, k, bias, 4), want), 1e-5);
}

TEST(Conv3d, OracleAcrossWidthsStridesAndPatches) {
  std::mt19937 rng(24);
  for (int s : {1, 2, 4, 8, 16})
    for (int trial = 0; trial < 6; ++trial) {
      std::uniform_int_distribution<int> f(1, 18), e(3, 11), kd(1, 3), sd(1, 2), pd(1, 9);
      const std::int64_t fi = f(rng), fo = f(rng);
      const Dim3 kk{kd(rng), kd(rng), kd(rng)};
      ConvOptions opt;
      opt.stride = {sd(rng), sd(rng), sd(rng)};
      opt.patch = {pd(rng), pd(rng), pd(rng)};
      const auto in = random_tensor({1 + trial % 2, fi, e(rng), e(rng), e(rng)}, rng);
      const auto k = random_tensor({fo, fi, kk.x, kk.y, kk.z}, rng, -0.3f, 0.3f);
      const auto bias = random_tensor({fo}, rng);
      const auto want = reference::ref_conv3d(in, k, bias.data(), opt.stride, {});
      EXPECT_LE(max_abs_diff(engine_conv(in, k, bias, s, opt), want), 1e-5)
          << "s=" << s << " trial " << trial;
    }
}

// act(conv + bias + base) with the activation applied last.
TEST(Conv3d, EpilogueOrderMatchesCompositionalOracle) {
  std::mt19937 rng(25);
  for (auto kind : {OpKind::ReLU, OpKind::ELU, OpKind::Sigmoid})
    for (int s : {4, 16}) {
      const auto in = random_tensor({1, 6, 6, 5, 7}, rng);
      const auto k = random_tensor({9, 6, 3, 3, 3}, rng, -0.3f, 0.3f);
      const auto bias = random_tensor({9}, rng);
      const auto base = random_tensor({1, 9, 4, 3, 5}, rng, -2.0f, 2.0f);
      const auto bb = blocked(base, s);
      ConvOptions opt;
      opt.base = &bb;
      opt.activation = Activation{kind, 0.7f};
      const auto got = engine_conv(in, k, bias, s, opt);
      const auto conv = reference::ref_conv3d(in, k, bias.data(), Dim3::all(1), {});
      const auto want = reference::ref_activation(reference::ref_eltwise(conv, base, EltwiseOp::Sum), kind, 0.7f);
      EXPECT_LE(max_abs_diff(got, want), 1e-5) << to_string(kind) << " s=" << s;
    }
}

TEST(Conv3d, PaddedOutputLeavesHaloZero) {
  std::mt19937 rng(26);
  for (int s : {2, 8}) {
    const auto in = random_tensor({1, 3, 6, 6, 6}, rng);
    const auto k = random_tensor({5, 3, 3, 3, 3}, rng);
    const auto bias = random_tensor({5}, rng, 1.0f, 2.0f);
    ConvOptions opt;
    opt.out_halo = {1, 2, 1};
    opt.activation = Activation{OpKind::Sigmoid};
    const auto out = conv3d(blocked(in, s), kernel_to_blocked(k, SimdWidth(s)), bias.data(), opt);
    const auto dense = conv3d(blocked(in, s), kernel_to_blocked(k, SimdWidth(s)), bias.data(),
                              ConvOptions{.activation = Activation{OpKind::Sigmoid}});
    const auto pad = explicit_zero_pad(dense, {1, 2, 1});
    ASSERT_EQ(out.data().size(), pad.data().size());
    EXPECT_EQ(std::memcmp(out.data().data(), pad.data().data(), pad.data().size_bytes()), 0);
  }
}

TEST(Conv3d, RejectsInconsistentInvocation) {
  const auto in = blocked(StandardTensor({1, 2, 4, 4, 4}), 4);
  const PackedKernel pk(kernel_to_blocked(StandardTensor({2, 2, 3, 3, 3}), SimdWidth(4)));
  BlockedTensor wrong({1, 2, 3, 2, 2}, SimdWidth(4));
  const auto bias = lane_padded({}, 2, 4);
  ConvInvocation inv;
  inv.input = in.cref();
  inv.kernel = &pk;
  inv.bias = bias.span();
  inv.output = wrong.ref();
  EXPECT_THROW(conv3d(inv), Error);
  BlockedTensor right({1, 2, 2, 2, 2}, SimdWidth(4));
  inv.output = right.ref();
  inv.additive = true;
  EXPECT_THROW(conv3d(inv), Error);
}

TEST(Deconv3d, ConstantKernelReplicatesInput) {
  const auto out = from_blocked(deconv3d(blocked(StandardTensor({1, 1, 1, 1, 1}, 3.0f), 4),
                                         kernel_to_blocked(StandardTensor({1, 1, 2, 2, 2}, 1.0f), SimdWidth(4)),
                                         std::vector<float>{0.5f}, Dim3::all(2)));
  ASSERT_EQ(out.dims(), (std::vector<std::int64_t>{1, 1, 2, 2, 2}));
  for (float v : out.data()) EXPECT_EQ(v, 3.5f);
}

TEST(Deconv3d, UnitKernelScalesInput) {
  std::mt19937 rng(27);
  const auto in = random_tensor({1, 1, 3, 4, 5}, rng);
  const auto out = from_blocked(deconv3d(blocked(in, 2), kernel_to_blocked(StandardTensor({1, 1, 1, 1, 1}, 2.0f), SimdWidth(2)),
                                         std::vector<float>{0.0f}, Dim3::all(1)));
  for (std::size_t i = 0; i < in.data().size(); ++i) EXPECT_EQ(out.data()[i], 2.0f * in.data()[i]);
}

TEST(Deconv3d, RandomMatchesScatterOracle) {
  std::mt19937 rng(28);
  for (int s : {2, 4, 8, 16})
    for (int trial = 0; trial < 4; ++trial) {
      std::uniform_int_distribution<int> f(1, 17), e(1, 5), kd(1, 4), sd(1, 3);
      const std::int64_t fi = f(rng), fo = f(rng);
      const Dim3 kk{kd(rng), kd(rng), kd(rng)};
      const Dim3 st{sd(rng), sd(rng), sd(rng)};
      const Dim3 crop{trial == 3 ? std::min(kk.x, st.x) / 2 : 0, 0, 0};
      const auto in = random_tensor({1, fi, e(rng), e(rng), e(rng)}, rng);
      const auto k = random_tensor({fo, fi, kk.x, kk.y, kk.z}, rng, -0.5f, 0.5f);
      const auto bias = random_tensor({fo}, rng);
      const auto want = reference::ref_deconv3d(in, k, bias.data(), st, crop);
      const auto got = from_blocked(deconv3d(blocked(in, s), kernel_to_blocked(k, SimdWidth(s)), bias.data(), st, crop));
      EXPECT_LE(max_abs_diff(got, want), 1e-5) << "s=" << s << " trial " << trial;
    }
}

TEST(Pool, ConstantFieldAndMax) {
  for (auto mode : {PoolMode::Max, PoolMode::Average}) {
    const auto out = from_blocked(pool(blocked(StandardTensor({1, 3, 4, 4, 4}, 2.5f), 4), Dim3::all(2), Dim3::all(2), mode));
    for (float v : out.data()) EXPECT_EQ(v, 2.5f);
  }
  StandardTensor t({1, 1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) t.data()[i] = static_cast<float>(i + 1);
  EXPECT_EQ(from_blocked(pool(blocked(t, 2), Dim3::all(2), Dim3::all(2), PoolMode::Max)).data()[0], 8.0f);
}

TEST(Pool, RandomMatchesOracle) {
  std::mt19937 rng(29);
  for (int s : {2, 4, 8, 16}) {
    const auto in = random_tensor({2, 11, 7, 6, 9}, rng);
    for (auto mode : {PoolMode::Max, PoolMode::Average}) {
      const auto want = reference::ref_pool(in, {2, 3, 2}, {2, 1, 3}, mode);
      const auto got = from_blocked(pool(blocked(in, s), {2, 3, 2}, {2, 1, 3}, mode));
      if (mode == PoolMode::Max) EXPECT_EQ(got, want);
      else EXPECT_LE(max_abs_diff(got, want), 1e-6);
    }
  }
}

TEST(Eltwise, IdentitiesAndIeeeDivision) {
  std::mt19937 rng(30);
  const auto x = random_tensor({1, 5, 3, 3, 3}, rng);
  const auto bx = blocked(x, 4);
  EXPECT_EQ(from_blocked(eltwise(bx, blocked(StandardTensor(x.dims(), 0.0f), 4), EltwiseOp::Sum)), x);
  EXPECT_EQ(from_blocked(eltwise(bx, blocked(StandardTensor(x.dims(), 1.0f), 4), EltwiseOp::Product)), x);
  StandardTensor num({1, 2, 1, 1, 1});
  num.data()[0] = 1.0f;
  const auto q = from_blocked(eltwise(blocked(num, 4), blocked(StandardTensor(num.dims(), 0.0f), 4), EltwiseOp::Division));
  EXPECT_TRUE(std::isinf(q.data()[0]));
  EXPECT_TRUE(std::isnan(q.data()[1]));
  const auto qb = eltwise(blocked(num, 4), blocked(StandardTensor(num.dims(), 0.0f), 4), EltwiseOp::Division);
  EXPECT_EQ(qb.data()[2], 0.0f);
  EXPECT_THROW(eltwise(bx, blocked(StandardTensor({1, 5, 3, 3, 2}), 4), EltwiseOp::Sum), Error);
}

TEST(Eltwise, RandomIsBitExact) {
  std::mt19937 rng(31);
  for (int s : {2, 4, 8, 16}) {
    const auto a = random_tensor({1, 13, 4, 5, 3}, rng);
    const auto b = random_tensor({1, 13, 4, 5, 3}, rng, 0.5f, 2.0f);
    for (auto op : {EltwiseOp::Sum, EltwiseOp::Product, EltwiseOp::Division})
      EXPECT_EQ(from_blocked(eltwise(blocked(a, s), blocked(b, s), op)), reference::ref_eltwise(a, b, op));
  }
}

TEST(MergeCrop, ConcatenatesAndCropsFromTheCentre) {
  std::mt19937 rng(32);
  const auto a = random_tensor({1, 2, 3, 3, 3}, rng);
  const auto b = random_tensor({1, 3, 3, 3, 3}, rng);
  const auto cat = from_blocked(mergecrop(blocked(a, 4), blocked(b, 4)));
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(cat.data()[i], a.data()[i]);
  for (std::int64_t i = 0; i < b.numel(); ++i) EXPECT_EQ(cat.data()[a.numel() + i], b.data()[i]);

  const auto big = random_tensor({1, 1, 20, 20, 20}, rng);
  const auto small = random_tensor({1, 1, 18, 18, 18}, rng);
  const auto m = from_blocked(mergecrop(blocked(big, 2), blocked(small, 2)));
  EXPECT_EQ(m.at(0, 0, 0, 0, 0), big.at(0, 0, 1, 1, 1));
  EXPECT_EQ(m.at(0, 0, 17, 17, 17), big.at(0, 0, 18, 18, 18));
  EXPECT_EQ(m.at(0, 1, 5, 6, 7), small.at(0, 0, 5, 6, 7));
}

TEST(MergeCrop, RandomIsBitExact) {
  std::mt19937 rng(33);
  for (int s : {2, 4, 8, 16}) {
    const auto a = random_tensor({2, 5, 9, 7, 8}, rng);
    const auto b = random_tensor({2, s + 1, 6, 6, 5}, rng);
    EXPECT_EQ(from_blocked(mergecrop(blocked(a, s), blocked(b, s))), reference::ref_mergecrop(a, b));
    EXPECT_EQ(from_blocked(mergecrop(blocked(b, s), blocked(a, s))), reference::ref_mergecrop(b, a));
  }
}

TEST(Standalone, ActivationValues) {
  EXPECT_EQ(activate({OpKind::ELU, 1.0f}, 0.0f), 0.0f);
  EXPECT_EQ(activate({OpKind::ReLU}, -3.0f), 0.0f);
  EXPECT_EQ(activate({OpKind::Sigmoid}, 0.0f), 0.5f);
}

TEST(Standalone, LinearAndReluAreBitExact) {
  std::mt19937 rng(34);
  for (int s : {2, 4, 8, 16}) {
    const auto in = random_tensor({1, 11, 3, 4, 5}, rng, -3.0f, 3.0f);
    const auto m = vec(random_tensor({11}, rng));
    const auto a = vec(random_tensor({11}, rng));
    EXPECT_EQ(from_blocked(standalone_linear(blocked(in, s), m, a)), scalar_linear(in, m, a));
    EXPECT_EQ(from_blocked(standalone_linear(blocked(in, s), std::vector<float>(11, 1.0f), std::vector<float>(11, 0.0f))),
              in);
    EXPECT_EQ(from_blocked(standalone_activation(blocked(in, s), {OpKind::ReLU})),
              reference::ref_activation(in, OpKind::ReLU));
  }
}

TEST(Standalone, ExponentialActivationsWithinRounding) {
  std::mt19937 rng(35);
  for (int s : {2, 8, 16}) {
    const auto in = random_tensor({1, 9, 4, 4, 4}, rng, -8.0f, 8.0f);
    for (auto k : {OpKind::ELU, OpKind::Sigmoid}) {
      const auto got = from_blocked(standalone_activation(blocked(in, s), {k, 1.3f}));
      EXPECT_LE(max_abs_diff(got, reference::ref_activation(in, k, 1.3f)), 1e-6) << to_string(k);
    }
  }
}

TEST(Execute, IdentityNetworkAddsBias) {
  auto m = parsed(input_layer("data", {1, 3, 5, 4, 6}) + conv_layer("c", "data", 3, 1));
  StandardTensor k({3, 3, 1, 1, 1});
  for (int f = 0; f < 3; ++f) k.at(f, f, 0, 0, 0) = 1.0f;
  m.weights.set("c", role::kKernel, k);
  m.weights.set("c", role::kBias, StandardTensor({3}, 0.5f));
  const auto in = seeded_inputs(m.spec, 1);
  const auto out = execute(compile(m.spec, m.weights).plan, in[0]);
  for (std::size_t i = 0; i < out.data().size(); ++i) EXPECT_EQ(out.data()[i], in[0].data()[i] + 0.5f);
}

TEST(Execute, RepeatedRunsAreBitIdenticalAndHalosStayZero) {
  const auto m = zoo_model(ZooVariant::Symmetric, 2, Dim3::all(8));
  const auto c = compile(m.spec, m.weights);
  const auto in = seeded_inputs(m.spec, 3);
  Session session(c.plan);
  const auto first = session.run(in);
  EXPECT_TRUE(session.halos_zero());
  const auto second = session.run(in);
  EXPECT_TRUE(bit_equal(first, second));
  EXPECT_TRUE(session.halos_zero());
  EXPECT_TRUE(bit_equal(first, execute(c.plan, in)));
}

TEST(Execute, RejectsWrongInputShape) {
  const auto m = zoo_model(ZooVariant::Symmetric, 2, Dim3::all(8));
  const auto c = compile(m.spec, m.weights);
  EXPECT_THROW(execute(c.plan, StandardTensor({1, 1, 8, 8, 7})), Error);
  EXPECT_THROW(execute(c.plan, std::vector<StandardTensor>{}), Error);
}

// Randomised networks across lane widths agree with the oracle.
TEST(Execute, RandomNetworksAcrossWidths) {
  for (std::uint32_t seed = 100; seed < 112; ++seed) {
    const auto m = random_network(seed);
    const auto in = seeded_inputs(m.spec, seed);
    const auto want = reference::ref_run(m.spec, m.weights, in);
    for (int s : {2, 4, 8}) {
      PlanOptions po;
      po.simd = SimdWidth(s);
      EXPECT_LE(max_abs_diff(execute(compile(m.spec, m.weights, {}, po).plan, in), want), 1e-4)
          << "seed " << seed << " s=" << s;
    }
  }
}
