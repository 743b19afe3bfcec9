#include "agd/evaluation.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "agd/errors.hpp"

namespace agd::eval {

using diffusion::SampleSpec;
using diffusion::SamplerKind;
using nn::Matrix;

std::vector<SampleSpec> paired_specs(std::size_t n, int num_classes, double omega,
                                     std::uint64_t seed) {
  std::vector<SampleSpec> specs(n);
  const Rng root(seed, 0x5bec);
  for (std::size_t i = 0; i < n; ++i) {
    specs[i] = {root.split(i).next_u64(), static_cast<int>(i % static_cast<std::size_t>(num_classes)),
                omega};
  }
  return specs;
}

namespace {

double mse_between(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double d0 = a(r, 0) - b(r, 0);
    const double d1 = a(r, 1) - b(r, 1);
    const double d = d0 * d0 + d1 * d1;
    total += std::isfinite(d) ? d : std::numeric_limits<double>::infinity();
  }
  return a.rows() > 0 ? total / static_cast<double>(a.rows()) : 0.0;
}

Matrix finite_rows(const Matrix& m) {
  std::vector<double> keep;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (std::isfinite(m(r, 0)) && std::isfinite(m(r, 1))) {
      keep.push_back(m(r, 0));
      keep.push_back(m(r, 1));
    }
  }
  const std::size_t n = keep.size() / 2;
  return Matrix(n, 2, std::move(keep));
}

struct Scored {
  double energy = 0.0;
  PrecisionRecall pr;
};

Scored score(const Matrix& endpoints, const Matrix& real, std::size_t k) {
  const Matrix gen = finite_rows(endpoints);
  if (gen.rows() <= k) {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, {0.0, 0.0}};
  }
  return {energy_distance(gen, real), knn_precision_recall(gen, real, k)};
}

}  // namespace

double endpoint_mse(const diffusion::EpsModel& a, const diffusion::EpsModel& b,
                    const diffusion::NoiseSchedule& schedule, SamplerKind kind,
                    std::span<const SampleSpec> specs) {
  const auto sa = diffusion::sample_batch(a, schedule, kind, specs);
  if (&a == &b) return 0.0;
  const auto sb = diffusion::sample_batch(b, schedule, kind, specs);
  return mse_between(sa.endpoints, sb.endpoints);
}

double endpoint_mse(const diffusion::EpsModel& a, const diffusion::EpsModel& b,
                    const diffusion::NoiseSchedule& schedule, SamplerKind kind,
                    std::span<const std::uint64_t> seeds, int cls, double omega) {
  std::vector<SampleSpec> specs;
  specs.reserve(seeds.size());
  for (std::uint64_t s : seeds) specs.push_back({s, cls, omega});
  return endpoint_mse(a, b, schedule, kind, specs);
}

Matrix real_samples(const diffusion::ToyDataset& data, std::size_t n, std::uint64_t seed) {
  Matrix out(n, 2);
  const Rng root(seed, 0x7ea1);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = root.split(i);
    const auto p =
        data.sample(static_cast<int>(i % static_cast<std::size_t>(data.class_count())), r);
    out(i, 0) = p[0];
    out(i, 1) = p[1];
  }
  return out;
}

std::vector<SweepRow> guidance_sweep(std::span<const Method> methods,
                                     std::span<const double> omegas,
                                     const diffusion::ToyDataset& data,
                                     const diffusion::NoiseSchedule& schedule,
                                     const EvalOptions& opt) {
  const Method* teacher = nullptr;
  for (const auto& m : methods) {
    if (m.name == kTeacher) teacher = &m;
  }
  if (teacher == nullptr) throw InputError("guidance_sweep needs a cfg_teacher method");
  const Matrix real = real_samples(data, opt.real_samples, opt.seed);

  std::vector<SweepRow> rows;
  for (double omega : omegas) {
    const auto specs = paired_specs(opt.gen_samples, data.class_count(), omega, opt.seed);
    const std::uint64_t t0 = teacher->model->nfe();
    const auto tset = diffusion::sample_batch(*teacher->model, schedule, opt.kind, specs);
    const std::uint64_t teacher_nfe = teacher->model->nfe() - t0;
    for (const auto& m : methods) {
      SweepRow row;
      row.omega = omega;
      row.method = m.name;
      row.param_ratio = m.param_ratio;
      Matrix endpoints;
      if (&m == teacher) {
        endpoints = tset.endpoints;
        row.nfe_total = teacher_nfe;
        row.endpoint_mse_vs_teacher = 0.0;
      } else {
        const std::uint64_t n0 = m.model->nfe();
        endpoints = diffusion::sample_batch(*m.model, schedule, opt.kind, specs).endpoints;
        row.nfe_total = m.model->nfe() - n0;
        row.endpoint_mse_vs_teacher = mse_between(endpoints, tset.endpoints);
      }
      const Scored s = score(endpoints, real, opt.knn_k);
      row.energy_distance = s.energy;
      row.knn_precision = s.pr.precision;
      row.knn_recall = s.pr.recall;
      rows.push_back(row);
    }
  }
  return rows;
}

TransferReport scheduler_transfer(const diffusion::EpsModel& agd,
                                  const diffusion::EpsModel& teacher,
                                  const diffusion::ToyDataset& data,
                                  const diffusion::NoiseSchedule& schedule, double omega,
                                  const EvalOptions& opt) {
  const Matrix real = real_samples(data, opt.real_samples, opt.seed);
  const auto specs = paired_specs(opt.gen_samples, data.class_count(), omega, opt.seed);
  auto ed = [&](const diffusion::EpsModel& m, SamplerKind kind) {
    return score(diffusion::sample_batch(m, schedule, kind, specs).endpoints, real, opt.knn_k)
        .energy;
  };
  TransferReport r;
  r.omega = omega;
  r.teacher_deterministic = ed(teacher, SamplerKind::deterministic_euler);
  r.agd_deterministic = ed(agd, SamplerKind::deterministic_euler);
  const std::uint64_t t0 = teacher.nfe();
  r.teacher_stochastic = ed(teacher, SamplerKind::stochastic_em);
  r.teacher_nfe_stochastic = teacher.nfe() - t0;
  const std::uint64_t a0 = agd.nfe();
  r.agd_stochastic = ed(agd, SamplerKind::stochastic_em);
  r.agd_nfe_stochastic = agd.nfe() - a0;
  return r;
}

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw InputError("report csv: bad number '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw InputError("report csv: bad integer '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

const char* kSweepColumns =
    "omega,method,endpoint_mse_vs_teacher,energy_distance,knn_precision,knn_recall,nfe_total,"
    "trainable_param_ratio";
const char* kTransferColumns =
    "omega,teacher_deterministic,teacher_stochastic,agd_deterministic,agd_stochastic,"
    "teacher_nfe_stochastic,agd_nfe_stochastic";

std::string sweep_line(const SweepRow& r) {
  return fmt::format("{},{},{},{},{},{},{},{}\n", num(r.omega), r.method,
                     num(r.endpoint_mse_vs_teacher), num(r.energy_distance), num(r.knn_precision),
                     num(r.knn_recall), r.nfe_total, num(r.param_ratio));
}

SweepRow parse_sweep(const std::vector<std::string>& f) {
  if (f.size() != 8) throw InputError("report csv: sweep row needs 8 fields");
  return {parse_double(f[0]), f[1],           parse_double(f[2]), parse_double(f[3]),
          parse_double(f[4]), parse_double(f[5]), parse_u64(f[6]),  parse_double(f[7])};
}

std::string g6(double v) { return fmt::format("{:.6g}", v); }

}  // namespace

std::string EvalReport::sweep_header() { return kSweepColumns; }

std::string EvalReport::sweep_csv() const {
  std::string out = std::string(kSweepColumns) + "\n";
  for (const auto& r : sweep) out += sweep_line(r);
  return out;
}

std::string EvalReport::to_csv() const {
  std::string out;
  for (const auto& [k, v] : metadata) out += "# " + k + "=" + v + "\n";
  out += "[summary]\n" + std::string(kSweepColumns) + "\n";
  for (const auto& r : summary) out += sweep_line(r);
  out += "[sweep]\n" + std::string(kSweepColumns) + "\n";
  for (const auto& r : sweep) out += sweep_line(r);
  out += "[transfer]\n" + std::string(kTransferColumns) + "\n";
  for (const auto& t : transfer) {
    out += fmt::format("{},{},{},{},{},{},{}\n", num(t.omega), num(t.teacher_deterministic),
                       num(t.teacher_stochastic), num(t.agd_deterministic),
                       num(t.agd_stochastic), t.teacher_nfe_stochastic, t.agd_nfe_stochastic);
  }
  out += "[divergence]\nstep,energy_distance\n";
  for (std::size_t i = 0; i < divergence.size(); ++i) {
    out += fmt::format("{},{}\n", i, num(divergence[i]));
  }
  return out;
}

EvalReport EvalReport::from_csv(const std::string& text) {
  EvalReport rep;
  std::istringstream in(text);
  std::string line, section;
  bool expect_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw InputError("report csv: bad metadata line");
      rep.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    if (line.front() == '[') {
      section = line;
      expect_header = true;
      continue;
    }
    if (expect_header) {
      expect_header = false;
      continue;
    }
    const auto f = split(line);
    if (section == "[summary]") {
      rep.summary.push_back(parse_sweep(f));
    } else if (section == "[sweep]") {
      rep.sweep.push_back(parse_sweep(f));
    } else if (section == "[transfer]") {
      if (f.size() != 7) throw InputError("report csv: transfer row needs 7 fields");
      rep.transfer.push_back({parse_double(f[0]), parse_double(f[1]), parse_double(f[2]),
                              parse_double(f[3]), parse_double(f[4]), parse_u64(f[5]),
                              parse_u64(f[6])});
    } else if (section == "[divergence]") {
      if (f.size() != 2) throw InputError("report csv: divergence row needs 2 fields");
      rep.divergence.push_back(parse_double(f[1]));
    } else {
      throw InputError("report csv: row outside a known section");
    }
  }
  return rep;
}

std::string EvalReport::report_text() const {
  std::string out = "Adapter guidance distillation report\n";
  for (const auto& [k, v] : metadata) out += fmt::format("{}: {}\n", k, v);
  if (!summary.empty()) {
    out += fmt::format("\nmethods at omega={}\n", g6(summary.front().omega));
    out += fmt::format("{:<12} {:>14} {:>14} {:>10} {:>10} {:>10} {:>12}\n", "method",
                       "endpoint_mse", "energy_dist", "precision", "recall", "nfe",
                       "param_ratio");
    for (const auto& r : summary) {
      out += fmt::format("{:<12} {:>14} {:>14} {:>10} {:>10} {:>10} {:>12}\n", r.method,
                         g6(r.endpoint_mse_vs_teacher), g6(r.energy_distance),
                         g6(r.knn_precision), g6(r.knn_recall), r.nfe_total, g6(r.param_ratio));
    }
  }
  if (!sweep.empty()) {
    out += "\nguidance sweep\n";
    out += fmt::format("{:>8} {:<12} {:>14} {:>14} {:>10} {:>10}\n", "omega", "method",
                       "endpoint_mse", "energy_dist", "precision", "recall");
    for (const auto& r : sweep) {
      out += fmt::format("{:>8} {:<12} {:>14} {:>14} {:>10} {:>10}\n", g6(r.omega), r.method,
                         g6(r.endpoint_mse_vs_teacher), g6(r.energy_distance),
                         g6(r.knn_precision), g6(r.knn_recall));
    }
  }
  for (const auto& t : transfer) {
    out += fmt::format("\nscheduler transfer at omega={}\n", g6(t.omega));
    out += fmt::format("teacher energy_dist deterministic={} stochastic={}\n",
                       g6(t.teacher_deterministic), g6(t.teacher_stochastic));
    out += fmt::format("agd     energy_dist deterministic={} stochastic={}\n",
                       g6(t.agd_deterministic), g6(t.agd_stochastic));
    out += fmt::format("stochastic nfe teacher={} agd={}\n", t.teacher_nfe_stochastic,
                       t.agd_nfe_stochastic);
  }
  if (!divergence.empty()) {
    out += "\ntrajectory divergence (guided vs unguided)\n";
    for (std::size_t i = 0; i < divergence.size(); ++i) {
      out += fmt::format("step {:>3} {}\n", i, g6(divergence[i]));
    }
  }
  return out;
}

}  // namespace agd::eval
