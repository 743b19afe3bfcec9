#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "agd/adapters.hpp"
#include "agd/distill.hpp"
#include "agd/errors.hpp"
#include "fixtures.hpp"

using namespace agd;
using namespace agd::adapters;
using agd::testing::SmallWorld;

namespace {

constexpr Architecture kAll[] = {Architecture::cross_attention, Architecture::offset,
                                 Architecture::gating, Architecture::positional};

AdapterConfig config_for(Architecture arch, std::uint64_t seed = 1) {
  AdapterConfig c;
  c.arch = arch;
  c.seed = seed;
  return c;
}

struct Batch {
  nn::Matrix x;
  std::vector<double> sigma, omega;
  std::vector<int> classes;
};

Batch random_batch(std::size_t n, int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  Batch b{nn::Matrix(n, 2), std::vector<double>(n), std::vector<double>(n), std::vector<int>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    b.x(r, 0) = 3.0 * rng.normal();
    b.x(r, 1) = 3.0 * rng.normal();
    b.sigma[r] = std::exp(std::log(0.02) + rng.uniform() * std::log(400.0));
    b.omega[r] = 1.0 + 5.0 * rng.uniform();
    b.classes[r] = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
  }
  return b;
}

nn::Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  nn::Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

}  // namespace

TEST(EncodeConditions, ShapeAndDeterminism) {
  const auto& w = SmallWorld::get();
  const AdapterStack stack(config_for(Architecture::offset), w.base);
  const nn::Matrix a = encode_conditions(stack, w.base, 3.0, 0.5, 1);
  EXPECT_EQ(a.rows(), kConditionRows);
  EXPECT_EQ(a.cols(), stack.config().width);
  EXPECT_EQ(a, encode_conditions(stack, w.base, 3.0, 0.5, 1));
}

TEST(EncodeConditions, DistinctOmegaGivesDistinctRow) {
  const auto& w = SmallWorld::get();
  const AdapterStack stack(config_for(Architecture::offset), w.base);
  const nn::Matrix a = encode_conditions(stack, w.base, 2.0, 0.5, 1);
  const nn::Matrix b = encode_conditions(stack, w.base, 5.0, 0.5, 1);
  double diff = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) diff += std::abs(a(0, j) - b(0, j));
  EXPECT_GT(diff, 1e-6);
  for (std::size_t j = 0; j < a.cols(); ++j) EXPECT_EQ(a(1, j), b(1, j));
}

TEST(AdapterForward, OffsetIgnoresZ) {
  const auto& w = SmallWorld::get();
  const AdapterStack stack(config_for(Architecture::offset), w.base);
  const Adapter& a = stack.layers().front();
  Rng rng(2);
  const nn::Matrix c = encode_conditions(stack, w.base, 3.0, 0.5, 0);
  const nn::Matrix out1 = adapter_forward(a, random_matrix(a.tokens, a.token_width, rng), c);
  const nn::Matrix out2 = adapter_forward(a, random_matrix(a.tokens, a.token_width, rng), c);
  EXPECT_EQ(out1, out2);
  for (std::size_t r = 1; r < out1.rows(); ++r) {
    for (std::size_t j = 0; j < out1.cols(); ++j) EXPECT_EQ(out1(r, j), out1(0, j));
  }
}

TEST(AdapterForward, ClosedGateSilencesGatingAdapter) {
  const auto& w = SmallWorld::get();
  AdapterStack stack(config_for(Architecture::gating), w.base);
  Adapter& a = stack.mutable_layers().front();
  for (double& v : a.gate_v.weight.value.data()) v = -1e4;
  nn::Matrix z(a.tokens, a.token_width, 0.5);
  nn::Matrix c(kConditionRows, stack.config().width, 0.25);
  const nn::Matrix out = adapter_forward(a, z, c);
  for (double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(AdapterForward, CrossAttentionWithOneDistinctKeyReturnsItsValue) {
  const auto& w = SmallWorld::get();
  const AdapterStack stack(config_for(Architecture::cross_attention), w.base);
  const Adapter& a = stack.layers().front();
  Rng rng(3);
  const nn::Matrix row = random_matrix(1, stack.config().width, rng);
  nn::Matrix c(kConditionRows, row.cols());
  for (std::size_t r = 0; r < kConditionRows; ++r) {
    for (std::size_t j = 0; j < row.cols(); ++j) c(r, j) = row(0, j);
  }
  const nn::Matrix want = nn::matmul(row, a.wv.weight.value);
  const nn::Matrix out = adapter_forward(a, random_matrix(a.tokens, a.token_width, rng), c);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t j = 0; j < out.cols(); ++j) EXPECT_NEAR(out(r, j), want(0, j), 1e-12);
  }
}

TEST(AdapterForward, RejectsWrongShapes) {
  const auto& w = SmallWorld::get();
  const AdapterStack stack(config_for(Architecture::offset), w.base);
  const Adapter& a = stack.layers().front();
  EXPECT_THROW(adapter_forward(a, nn::Matrix(a.tokens + 1, a.token_width),
                               nn::Matrix(kConditionRows, stack.config().width)),
               DimensionError);
}

TEST(GuidedForward, ZeroInitStackEqualsBaseBitExactly) {
  const auto& w = SmallWorld::get();
  const Batch b = random_batch(16, w.base.num_classes(), 4);
  const nn::Matrix base = w.base.predict(b.x, b.sigma, b.classes);
  for (auto arch : kAll) {
    AdapterConfig cfg = config_for(arch);
    cfg.init = nn::InitScheme::zero;
    const AdapterStack stack(cfg, w.base);
    const GuidedModel m(w.base, stack);
    EXPECT_EQ(m.predict(b.x, b.sigma, b.classes, b.omega), base) << to_string(arch);
  }
}

TEST(GuidedForward, ZeroedOutputLayersRecoverBase) {
  const auto& w = SmallWorld::get();
  const Batch b = random_batch(16, w.base.num_classes(), 5);
  const nn::Matrix base = w.base.predict(b.x, b.sigma, b.classes);
  for (auto arch : kAll) {
    AdapterStack stack(config_for(arch), w.base);
    const GuidedModel m(w.base, stack);
    EXPECT_NE(m.predict(b.x, b.sigma, b.classes, b.omega), base) << to_string(arch);
    for (auto& a : stack.mutable_layers()) a.zero_output();
    EXPECT_EQ(m.predict(b.x, b.sigma, b.classes, b.omega), base) << to_string(arch);
  }
}

TEST(GuidedForward, OnePassPerPrediction) {
  const auto& w = SmallWorld::get();
  const AdapterStack stack(config_for(Architecture::offset), w.base);
  const GuidedModel m(w.base, stack);
  const diffusion::CfgModel teacher(w.base);
  const Batch b = random_batch(10, w.base.num_classes(), 6);
  (void)m.predict(b.x, b.sigma, b.classes, b.omega);
  (void)teacher.predict(b.x, b.sigma, b.classes, b.omega);
  EXPECT_EQ(m.nfe(), 10u);
  EXPECT_EQ(teacher.nfe(), 20u);
  (void)m.forward({0.1, 0.2}, 0.5, 1, 3.0);
  EXPECT_EQ(m.nfe(), 11u);
}

TEST(GuidedForward, RejectsNullClass) {
  const auto& w = SmallWorld::get();
  const AdapterStack stack(config_for(Architecture::offset), w.base);
  const GuidedModel m(w.base, stack);
  EXPECT_ANY_THROW((void)m.forward({0.0, 0.0}, 1.0, diffusion::kNullClass, 2.0));
}

TEST(GuidedForward, GradientsMatchFiniteDifferencesForEveryArchitecture) {
  diffusion::DenoiserConfig smooth = agd::testing::small_model();
  smooth.activation = nn::Activation::silu;
  diffusion::Denoiser base(smooth, 9);
  base.set_frozen(true);
  for (auto arch : kAll) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      AdapterStack stack(config_for(arch, 300 + seed), base);
      const Batch b = random_batch(3, base.num_classes(), 700 + seed);
      Rng rng(seed);
      const nn::Matrix target = random_matrix(3, 2, rng);
      auto params = stack.parameters();
      const double err = nn::grad_check(
          [&](nn::Tape& t) {
            const nn::Var pred = guided_forward(t, base, stack, b.x, b.sigma, b.classes, b.omega);
            return distill::batch_loss(t, pred, target, b.sigma, distill::LossSpec{});
          },
          params);
      EXPECT_LT(err, 1e-4) << to_string(arch) << " seed " << seed;
    }
  }
}

TEST(AdapterStack, DefaultParameterRatioWithinOneToFivePercent) {
  const diffusion::Denoiser base(diffusion::DenoiserConfig{}, 0);
  const AdapterStack stack(AdapterConfig{}, base);
  const double ratio = stack.parameter_ratio(base);
  EXPECT_GE(ratio, 0.01);
  EXPECT_LE(ratio, 0.05);
  EXPECT_EQ(stack.layers().size(), base.config().depth);
}

TEST(AdapterStack, ArchitecturesShareTheInterface) {
  const auto& w = SmallWorld::get();
  const Batch b = random_batch(5, w.base.num_classes(), 7);
  for (auto arch : kAll) {
    const AdapterStack stack(config_for(arch), w.base);
    const GuidedModel m(w.base, stack);
    const nn::Matrix out = m.predict(b.x, b.sigma, b.classes, b.omega);
    EXPECT_EQ(out.rows(), 5u);
    EXPECT_EQ(out.cols(), 2u);
    EXPECT_TRUE(out.all_finite());
    EXPECT_EQ(stack.base_hash(), w.base.parameter_hash());
  }
}

TEST(AdapterStack, TokensMustDivideTrunkWidth) {
  const auto& w = SmallWorld::get();
  AdapterConfig cfg;
  cfg.tokens = 5;
  EXPECT_THROW(AdapterStack(cfg, w.base), InputError);
}

TEST(AdapterStack, LoadValuesRestoresParameters) {
  const auto& w = SmallWorld::get();
  const AdapterStack a(config_for(Architecture::gating, 1), w.base);
  AdapterStack b(config_for(Architecture::gating, 2), w.base);
  ASSERT_NE(a.parameter_hash(), b.parameter_hash());
  std::vector<nn::Matrix> values;
  for (const auto* p : a.parameters()) values.push_back(p->value);
  b.load_values(values);
  EXPECT_EQ(a.parameter_hash(), b.parameter_hash());
  values.pop_back();
  EXPECT_THROW(b.load_values(values), DimensionError);
}

TEST(Architecture, ParseRoundTrip) {
  for (auto arch : kAll) EXPECT_EQ(parse_architecture(to_string(arch)), arch);
  EXPECT_EQ(parse_init("zero"), nn::InitScheme::zero);
  EXPECT_ANY_THROW(parse_architecture("lora"));
}
