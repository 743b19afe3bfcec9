#include "agd/dataset.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "agd/errors.hpp"

namespace agd::diffusion {

namespace {

struct Inverse2 {
  std::array<double, 4> inv;
  double log_det;
};

Inverse2 smoothed_inverse(const std::array<double, 4>& cov, double sigma) {
  const double s2 = sigma * sigma;
  const double a = cov[0] + s2, b = cov[1], c = cov[2], d = cov[3] + s2;
  const double det = a * d - b * c;
  return {{d / det, -b / det, -c / det, a / det}, std::log(det)};
}

double log_normal(const Point& x, const Gaussian2& g, const Inverse2& si) {
  const double dx = x[0] - g.mean[0], dy = x[1] - g.mean[1];
  const double q = dx * (si.inv[0] * dx + si.inv[1] * dy) + dy * (si.inv[2] * dx + si.inv[3] * dy);
  return -0.5 * q - 0.5 * si.log_det - std::log(2.0 * std::numbers::pi);
}

void validate(const std::vector<ClassMixture>& classes) {
  if (classes.empty()) throw InputError("dataset needs at least one class");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& comps = classes[c].components;
    if (comps.empty()) throw InputError("class " + std::to_string(c) + " has no components");
    double total = 0.0;
    for (const auto& g : comps) {
      if (g.weight <= 0.0) throw InputError("mixture weights must be positive");
      total += g.weight;
      const auto& s = g.cov;
      if (s[1] != s[2]) throw InputError("covariance must be symmetric");
      if (s[0] <= 0.0 || s[0] * s[3] - s[1] * s[2] <= 0.0) {
        throw InputError("covariance must be positive definite");
      }
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw InputError("mixture weights of class " + std::to_string(c) + " must sum to 1");
    }
  }
}

}  // namespace

ToyDataset::ToyDataset(std::vector<ClassMixture> classes) : classes_(std::move(classes)) {
  validate(classes_);
}

ToyDataset ToyDataset::ring(const RingSpec& spec) {
  if (spec.classes <= 0) throw InputError("ring needs a positive class count");
  std::vector<ClassMixture> classes;
  const double v = spec.std * spec.std;
  for (int k = 0; k < spec.classes; ++k) {
    const double th = 2.0 * std::numbers::pi * k / spec.classes;
    const Point u{std::cos(th), std::sin(th)};
    const Point t{-std::sin(th), std::cos(th)};
    const double h = 0.5 * spec.spread;
    Gaussian2 a;
    a.mean = {spec.radius * u[0] + h * t[0], spec.radius * u[1] + h * t[1]};
    a.cov = {v, 0.0, 0.0, v};
    a.weight = 0.6;
    Gaussian2 b;
    b.mean = {spec.radius * u[0] - h * t[0], spec.radius * u[1] - h * t[1]};
    const double off = v * (1.5 * u[0] * u[1] + 0.5 * t[0] * t[1]);
    b.cov = {v * (1.5 * u[0] * u[0] + 0.5 * t[0] * t[0]), off, off,
             v * (1.5 * u[1] * u[1] + 0.5 * t[1] * t[1])};
    b.weight = 0.4;
    classes.push_back(ClassMixture{{a, b}});
  }
  return ToyDataset(std::move(classes));
}

ToyDataset ToyDataset::single_gaussian(Point mean, double std) {
  Gaussian2 g;
  g.mean = mean;
  g.cov = {std * std, 0.0, 0.0, std * std};
  g.weight = 1.0;
  return ToyDataset({ClassMixture{{g}}});
}

const ClassMixture& ToyDataset::mixture(int c) const {
  if (c < 0 || c >= class_count()) throw InputError("unknown class id " + std::to_string(c));
  return classes_[static_cast<std::size_t>(c)];
}

std::vector<std::pair<double, const Gaussian2*>> ToyDataset::components_for(int c) const {
  std::vector<std::pair<double, const Gaussian2*>> out;
  if (c == kNullClass) {
    const double prior = 1.0 / class_count();
    for (const auto& m : classes_) {
      for (const auto& g : m.components) out.emplace_back(prior * g.weight, &g);
    }
  } else {
    for (const auto& g : mixture(c).components) out.emplace_back(g.weight, &g);
  }
  return out;
}

Point ToyDataset::sample(int c, Rng& rng) const {
  if (c == kNullClass) c = static_cast<int>(rng.below(static_cast<std::uint64_t>(class_count())));
  const auto& comps = mixture(c).components;
  double u = rng.uniform();
  const Gaussian2* g = &comps.back();
  for (const auto& comp : comps) {
    if (u < comp.weight) {
      g = &comp;
      break;
    }
    u -= comp.weight;
  }
  // Cholesky of the 2x2 covariance.
  const double l00 = std::sqrt(g->cov[0]);
  const double l10 = g->cov[2] / l00;
  const double l11 = std::sqrt(g->cov[3] - l10 * l10);
  const double z0 = rng.normal(), z1 = rng.normal();
  return {g->mean[0] + l00 * z0, g->mean[1] + l10 * z0 + l11 * z1};
}

nn::Matrix ToyDataset::sample_many(int c, std::size_t n, Rng& rng) const {
  nn::Matrix out(n, kDataDim);
  for (std::size_t i = 0; i < n; ++i) {
    const Point p = sample(c, rng);
    out(i, 0) = p[0];
    out(i, 1) = p[1];
  }
  return out;
}

double ToyDataset::log_density(const Point& x, double sigma, int c) const {
  const auto comps = components_for(c);
  std::vector<double> logs;
  double mx = -INFINITY;
  for (const auto& [w, g] : comps) {
    const Inverse2 si = smoothed_inverse(g->cov, sigma);
    logs.push_back(std::log(w) + log_normal(x, *g, si));
    mx = std::max(mx, logs.back());
  }
  double s = 0.0;
  for (double l : logs) s += std::exp(l - mx);
  return mx + std::log(s);
}

Point ToyDataset::score(const Point& x, double sigma, int c) const {
  const auto comps = components_for(c);
  std::vector<double> logs;
  std::vector<Point> grads;
  double mx = -INFINITY;
  for (const auto& [w, g] : comps) {
    const Inverse2 si = smoothed_inverse(g->cov, sigma);
    logs.push_back(std::log(w) + log_normal(x, *g, si));
    mx = std::max(mx, logs.back());
    const double dx = x[0] - g->mean[0], dy = x[1] - g->mean[1];
    grads.push_back({-(si.inv[0] * dx + si.inv[1] * dy), -(si.inv[2] * dx + si.inv[3] * dy)});
  }
  double z = 0.0;
  for (double& l : logs) {
    l = std::exp(l - mx);
    z += l;
  }
  Point out{0.0, 0.0};
  for (std::size_t k = 0; k < logs.size(); ++k) {
    const double r = logs[k] / z;
    out[0] += r * grads[k][0];
    out[1] += r * grads[k][1];
  }
  return out;
}

Point analytic_score(const ToyDataset& data, const Point& x, double sigma, int c) {
  return data.score(x, sigma, c);
}

}  // namespace agd::diffusion
