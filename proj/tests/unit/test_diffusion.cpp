#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "agd/dataset.hpp"
#include "agd/errors.hpp"
#include "agd/metrics.hpp"
#include "agd/sampler.hpp"
#include "agd/schedule.hpp"
#include "agd/train_base.hpp"
#include "fixtures.hpp"

using namespace agd;
using namespace agd::diffusion;
using agd::testing::SmallWorld;

namespace {

std::vector<SampleSpec> specs_for(std::size_t n, int cls, double omega, std::uint64_t first = 0) {
  std::vector<SampleSpec> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = {first + i, cls, omega};
  return s;
}

ToyDataset random_mixture(Rng& rng) {
  std::vector<ClassMixture> classes(2);
  for (auto& cls : classes) {
    for (int k = 0; k < 3; ++k) {
      Gaussian2 g;
      g.mean = {2.0 * rng.normal(), 2.0 * rng.normal()};
      const double a = 0.2 + rng.uniform(), b = 0.2 + rng.uniform(), c = 0.3 * rng.normal();
      // L L^T with L = [[a, 0], [c, b]] is symmetric positive definite.
      g.cov = {a * a, a * c, a * c, c * c + b * b};
      g.weight = 1.0 + k;
      cls.components.push_back(g);
    }
    const double w = 6.0;
    for (auto& g : cls.components) g.weight /= w;
  }
  return ToyDataset(classes);
}

// Model whose output turns non-finite below a noise level.
class BlowUp final : public EpsModel {
 protected:
  nn::Matrix eval(const nn::Matrix& x, std::span<const double> sigma, std::span<const int>,
                  std::span<const double>) const override {
    count(x.rows());
    nn::Matrix out(x.rows(), 2);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double v = sigma[r] < 1.0 ? std::nan("") : 0.0;
      out(r, 0) = out(r, 1) = v;
    }
    return out;
  }
};

}  // namespace

TEST(ForwardPerturb, ZeroSigmaKeepsPoint) {
  Rng rng(1);
  const auto [xt, eps] = forward_perturb({1.0, -2.0}, 0.0, rng);
  EXPECT_EQ(xt, (Point{1.0, -2.0}));
}

TEST(ForwardPerturb, UnitSigmaFromOriginIsNoise) {
  Rng rng(2);
  const auto [xt, eps] = forward_perturb({0.0, 0.0}, 1.0, rng);
  EXPECT_EQ(xt, eps);
}

TEST(ForwardPerturb, EmpiricalStdMatchesSigma) {
  Rng rng(3);
  const std::size_t n = 100000;
  double s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [xt, eps] = forward_perturb({0.5, 0.5}, 2.0, rng);
    s2 += (xt[0] - 0.5) * (xt[0] - 0.5);
  }
  EXPECT_NEAR(std::sqrt(s2 / static_cast<double>(n)), 2.0, 0.02);
}

TEST(CfgCombine, OmegaOneReturnsConditional) {
  const Point c{0.3, -1.25};
  EXPECT_EQ(cfg_combine(c, {7.0, 2.0}, 1.0), c);
}

TEST(CfgCombine, EqualBranchesAreFixed) {
  const Point c{0.3, -1.25};
  for (double w : {1.0, 2.5, 9.0}) EXPECT_EQ(cfg_combine(c, c, w), c);
}

TEST(CfgCombine, LinearExample) {
  EXPECT_EQ(cfg_combine({1.0, 0.0}, {0.0, 1.0}, 2.0), (Point{2.0, -1.0}));
}

TEST(CfgCombine, IsAffineInOmega) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    // Dyadic values keep every product exact.
    auto dy = [&] { return std::ldexp(static_cast<double>(rng.below(64)) - 32.0, -3); };
    const Point a{dy(), dy()}, b{dy(), dy()};
    const double w = 1.0 + std::ldexp(static_cast<double>(rng.below(32)), -2);
    const Point got = cfg_combine(a, b, w);
    for (int d = 0; d < 2; ++d) EXPECT_EQ(got[d] - a[d], (w - 1.0) * (a[d] - b[d]));
  }
}

TEST(AnalyticScore, SingleGaussianClosedForm) {
  const auto data = ToyDataset::single_gaussian({1.0, -0.5}, 0.7);
  const Point x{0.2, 0.9};
  for (double sigma : {0.0, 0.3, 4.0}) {
    const Point s = analytic_score(data, x, sigma, 0);
    const double v = 0.49 + sigma * sigma;
    EXPECT_NEAR(s[0], -(0.2 - 1.0) / v, 1e-14);
    EXPECT_NEAR(s[1], -(0.9 + 0.5) / v, 1e-14);
  }
}

TEST(AnalyticScore, VanishesAtCentreOfSymmetricMixture) {
  Gaussian2 a{{-1.5, 0.5}, {0.3, 0.1, 0.1, 0.4}, 0.5};
  Gaussian2 b{{1.5, -0.5}, {0.3, 0.1, 0.1, 0.4}, 0.5};
  const ToyDataset data({ClassMixture{{a, b}}});
  const Point s = analytic_score(data, {0.0, 0.0}, 0.5, 0);
  EXPECT_NEAR(s[0], 0.0, 1e-14);
  EXPECT_NEAR(s[1], 0.0, 1e-14);
}

TEST(AnalyticScore, MatchesFiniteDifferenceOfLogDensity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(50 + seed);
    const ToyDataset data = random_mixture(rng);
    const Point x{2.0 * rng.normal(), 2.0 * rng.normal()};
    const double sigma = 0.1 + rng.uniform();
    for (int c : {0, 1, kNullClass}) {
      const Point s = analytic_score(data, x, sigma, c);
      const double h = 1e-5;
      for (int d = 0; d < 2; ++d) {
        Point xp = x, xm = x;
        xp[d] += h;
        xm[d] -= h;
        const double fd = (data.log_density(xp, sigma, c) - data.log_density(xm, sigma, c)) / (2 * h);
        EXPECT_NEAR(s[d], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "seed " << seed << " c " << c;
      }
    }
  }
}

TEST(AnalyticScore, NullClassIsDensityWeightedAverage) {
  Rng rng(60);
  const ToyDataset data = random_mixture(rng);
  const Point x{0.4, -0.3};
  const double sigma = 0.6;
  double z = 0.0;
  Point want{0.0, 0.0};
  for (int c = 0; c < data.class_count(); ++c) {
    const double p = std::exp(data.log_density(x, sigma, c)) / data.class_count();
    const Point s = analytic_score(data, x, sigma, c);
    want[0] += p * s[0];
    want[1] += p * s[1];
    z += p;
  }
  const Point got = analytic_score(data, x, sigma, kNullClass);
  EXPECT_NEAR(got[0], want[0] / z, 1e-10);
  EXPECT_NEAR(got[1], want[1] / z, 1e-10);
}

TEST(ToyDataset, RingMixturesAreValid) {
  const auto data = ToyDataset::ring(RingSpec{});
  EXPECT_EQ(data.class_count(), 8);
  for (int c = 0; c < 8; ++c) {
    double w = 0.0;
    for (const auto& g : data.mixture(c).components) {
      w += g.weight;
      EXPECT_EQ(g.cov[1], g.cov[2]);
      EXPECT_GT(g.cov[0], 0.0);
      EXPECT_GT(g.cov[0] * g.cov[3] - g.cov[1] * g.cov[2], 0.0);
    }
    EXPECT_NEAR(w, 1.0, 1e-15);
  }
  EXPECT_THROW((void)data.mixture(8), InputError);
}

TEST(NoiseSchedule, GridShape) {
  const NoiseSchedule s;
  const auto& g = s.grid();
  ASSERT_EQ(g.size(), 65u);
  EXPECT_DOUBLE_EQ(g.front(), 10.0);
  EXPECT_DOUBLE_EQ(g[63], 0.01);
  EXPECT_EQ(g.back(), 0.0);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g[i], g[i - 1]);
  EXPECT_EQ(s.sigma(0.0), 0.0);
  EXPECT_EQ(s.sigma(s.t_max()), 10.0);
  EXPECT_EQ(s.sigma_dot(3.0), 1.0);
}

TEST(NoiseSchedule, HashIdentifiesGrid) {
  ScheduleConfig a, b;
  b.steps = 32;
  EXPECT_EQ(NoiseSchedule(a).hash(), NoiseSchedule(a).hash());
  EXPECT_NE(NoiseSchedule(a).hash(), NoiseSchedule(b).hash());
  ScheduleConfig bad;
  bad.steps = 0;
  EXPECT_THROW(NoiseSchedule{bad}, InputError);
}

TEST(Sampler, OracleGaussianMeanWithinThreePercent) {
  const Point mu{1.5, -0.5};
  const double s = 0.2;
  const auto data = ToyDataset::single_gaussian(mu, s);
  const NoiseSchedule schedule;
  const AnalyticModel model(data);
  const auto specs = specs_for(10000, 0, 1.0, 1000);
  const auto set = sample_batch(model, schedule, SamplerKind::deterministic_euler, specs);
  double m[2] = {0, 0}, var = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    m[0] += set.endpoints(i, 0) / 1e4;
    m[1] += set.endpoints(i, 1) / 1e4;
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    var += (std::pow(set.endpoints(i, 0) - m[0], 2) + std::pow(set.endpoints(i, 1) - m[1], 2)) /
           (2.0 * (1e4 - 1.0));
  }
  EXPECT_LT(std::hypot(m[0] - mu[0], m[1] - mu[1]) / std::hypot(mu[0], mu[1]), 0.03);

  // Euler on a single Gaussian is linear: x_N - mu = prod_i a_i (x_0 - mu).
  double a = 1.0;
  const auto& g = schedule.grid();
  for (std::size_t i = 0; i + 1 < g.size(); ++i) a *= 1.0 - (g[i] - g[i + 1]) * g[i] / (g[i] * g[i] + s * s);
  const double want_var = a * a * 100.0;
  EXPECT_NEAR(var / want_var, 1.0, 0.03);
  EXPECT_NEAR(m[0], (1.0 - a) * mu[0], 0.01);
  EXPECT_NEAR(m[1], (1.0 - a) * mu[1], 0.01);
}

TEST(Sampler, OracleConvergesWithMoreSteps) {
  const auto data = ToyDataset::ring(RingSpec{});
  const AnalyticModel model(data);
  Rng rng(7);
  const nn::Matrix real = data.sample_many(2, 1000, rng);
  auto dist = [&](std::size_t steps) {
    ScheduleConfig cfg;
    cfg.steps = steps;
    const auto set = sample_batch(model, NoiseSchedule(cfg), SamplerKind::deterministic_euler,
                                  specs_for(1000, 2, 1.0, 40));
    return eval::energy_distance(set.endpoints, real);
  };
  EXPECT_LT(dist(128), dist(8));
}

TEST(Sampler, SeedReproducibleBitExactly) {
  const auto& w = SmallWorld::get();
  const CfgModel teacher(w.base);
  const auto specs = specs_for(16, 1, 3.0);
  for (auto kind : {SamplerKind::deterministic_euler, SamplerKind::stochastic_em}) {
    const auto a = sample_batch(teacher, w.schedule, kind, specs, true);
    const auto b = sample_batch(teacher, w.schedule, kind, specs, true);
    EXPECT_EQ(a.endpoints, b.endpoints);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      ASSERT_EQ(a.trajectories[i].size(), w.schedule.steps());
      for (std::size_t k = 0; k < a.trajectories[i].size(); ++k) {
        EXPECT_EQ(a.trajectories[i][k].x, b.trajectories[i][k].x);
      }
    }
  }
}

TEST(Sampler, CfgAtOmegaOneEqualsConditional) {
  const auto& w = SmallWorld::get();
  const CfgModel teacher(w.base);
  const ConditionalModel cond(w.base);
  const auto specs = specs_for(32, 0, 1.0, 9);
  for (auto kind : {SamplerKind::deterministic_euler, SamplerKind::stochastic_em}) {
    const auto a = sample_batch(teacher, w.schedule, kind, specs, true);
    const auto b = sample_batch(cond, w.schedule, kind, specs, true);
    EXPECT_EQ(a.endpoints, b.endpoints);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      for (std::size_t k = 0; k < a.trajectories[i].size(); ++k) {
        EXPECT_EQ(a.trajectories[i][k].x, b.trajectories[i][k].x);
        EXPECT_EQ(a.trajectories[i][k].eps, b.trajectories[i][k].eps);
      }
    }
  }
}

TEST(Sampler, NfeCountsEveryForwardPass) {
  const auto& w = SmallWorld::get();
  ScheduleConfig cfg = agd::testing::small_schedule();
  cfg.steps = 32;
  const NoiseSchedule schedule(cfg);
  for (auto kind : {SamplerKind::deterministic_euler, SamplerKind::stochastic_em}) {
    CfgModel t2(w.base);
    ConditionalModel c2(w.base);
    (void)sample(t2, schedule, kind, 1, 2.0, 3);
    (void)sample(c2, schedule, kind, 1, 2.0, 3);
    EXPECT_EQ(t2.nfe(), 64u);
    EXPECT_EQ(c2.nfe(), 32u);
  }
  // The base's own counter sees the same passes.
  Denoiser probe = w.base;
  probe.reset_nfe();
  const CfgModel t3(probe);
  (void)sample_batch(t3, schedule, SamplerKind::deterministic_euler, specs_for(5, 0, 4.0));
  EXPECT_EQ(probe.nfe(), 2u * 5u * 32u);
  EXPECT_EQ(t3.nfe(), probe.nfe());
}

TEST(Sampler, RecordsPredictionUsedAtEachStep) {
  const auto& w = SmallWorld::get();
  const CfgModel teacher(w.base);
  const auto r = sample(teacher, w.schedule, SamplerKind::deterministic_euler, 2, 3.0, 11);
  ASSERT_EQ(r.trajectory.size(), w.schedule.steps());
  EXPECT_EQ(r.trajectory.front().x, initial_noise(11, 10.0));
  for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
    const auto& st = r.trajectory[i];
    EXPECT_EQ(st.sigma, w.schedule.at(i));
    const Point next = i + 1 < r.trajectory.size() ? r.trajectory[i + 1].x : r.x0;
    const double ds = w.schedule.at(i + 1) - w.schedule.at(i);
    EXPECT_EQ(next[0], st.x[0] + ds * st.eps[0]);
    EXPECT_EQ(next[1], st.x[1] + ds * st.eps[1]);
  }
}

TEST(Sampler, NonFiniteStateIsReported) {
  const BlowUp model;
  const NoiseSchedule schedule;
  EXPECT_THROW((void)sample(model, schedule, SamplerKind::deterministic_euler, 0, 1.0, 1),
               SamplerDivergence);
  const auto set = sample_batch(model, schedule, SamplerKind::deterministic_euler, specs_for(3, 0, 1.0));
  for (bool d : set.diverged) EXPECT_TRUE(d);
}

TEST(Sampler, ParseKind) {
  EXPECT_EQ(parse_sampler_kind("stochastic_em"), SamplerKind::stochastic_em);
  EXPECT_EQ(to_string(SamplerKind::deterministic_euler), "deterministic_euler");
  EXPECT_ANY_THROW(parse_sampler_kind("heun"));
}

TEST(TrainBase, LearnsSingleGaussianScore) {
  const Point mu{1.0, -1.0};
  const double s = 0.5;
  const auto data = ToyDataset::single_gaussian(mu, s);
  const NoiseSchedule schedule(agd::testing::small_schedule());
  DenoiserConfig m = agd::testing::small_model();
  m.num_classes = 1;
  m.hidden = 32;
  BaseTrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch = 128;
  cfg.seed = 3;
  const auto r = train_base(data, schedule, m, cfg);

  // Mean squared deviation from the analytic epsilon over the sampling grid.
  Rng rng(8);
  double msd = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < schedule.steps(); ++i) {
    const double sigma = schedule.at(i);
    const std::size_t rows = 64;
    nn::Matrix x(rows, 2);
    std::vector<double> sig(rows, sigma);
    std::vector<int> cls(rows, 0);
    for (std::size_t k = 0; k < rows; ++k) {
      const auto [xt, e] = forward_perturb(data.sample(0, rng), sigma, rng);
      x(k, 0) = xt[0];
      x(k, 1) = xt[1];
    }
    const nn::Matrix eps = r.model.predict(x, sig, cls);
    for (std::size_t k = 0; k < rows; ++k) {
      for (int d = 0; d < 2; ++d) {
        const double want = sigma * (x(k, d) - mu[d]) / (s * s + sigma * sigma);
        msd += std::pow(eps(k, d) - want, 2) / 2.0;
      }
      ++n;
    }
  }
  EXPECT_LT(msd / static_cast<double>(n), 0.05);

  const auto& c = r.loss_curve;
  ASSERT_EQ(c.size(), cfg.steps);
  const double tail = std::accumulate(c.end() - 150, c.end(), 0.0) / 150.0;
  EXPECT_LT(tail, 0.9);
  EXPECT_EQ(r.model.schedule_hash(), schedule.hash());
}

TEST(TrainBase, FullDropoutNeverSeesLabels) {
  const auto& w = SmallWorld::get();
  BaseTrainConfig cfg;
  cfg.steps = 50;
  cfg.batch = 32;
  cfg.cond_dropout = 1.0;
  cfg.seed = 4;
  const auto r = train_base(w.data, w.schedule, agd::testing::small_model(), cfg);
  const Denoiser init(agd::testing::small_model(), cfg.seed);
  const nn::Parameter* trained = nullptr;
  const nn::Parameter* initial = nullptr;
  for (const auto* p : r.model.parameters()) {
    if (p->name == "class_table") trained = p;
  }
  for (const auto* p : init.parameters()) {
    if (p->name == "class_table") initial = p;
  }
  ASSERT_NE(trained, nullptr);
  const int k = w.data.class_count();
  for (int c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < trained->value.cols(); ++j) {
      EXPECT_EQ(trained->value(c, j), initial->value(c, j));
    }
  }
  bool null_moved = false;
  for (std::size_t j = 0; j < trained->value.cols(); ++j) {
    null_moved |= trained->value(k, j) != initial->value(k, j);
  }
  EXPECT_TRUE(null_moved);
}

TEST(TrainBase, RejectsBadConfig) {
  const auto& w = SmallWorld::get();
  BaseTrainConfig cfg;
  cfg.cond_dropout = 1.5;
  EXPECT_THROW(train_base(w.data, w.schedule, agd::testing::small_model(), cfg), InputError);
  DenoiserConfig m = agd::testing::small_model();
  m.num_classes = 5;
  EXPECT_THROW(train_base(w.data, w.schedule, m, BaseTrainConfig{}), InputError);
}

TEST(Denoiser, FrozenRefusesMutation) {
  Denoiser d(agd::testing::small_model(), 1);
  d.set_frozen(true);
  EXPECT_THROW(d.mutable_parameters(), PreconditionError);
  EXPECT_THROW((void)d.embedding_row(7), InputError);
  EXPECT_EQ(d.embedding_row(kNullClass), 3);
}
