#include "agd/pipeline.hpp"

#include <limits>
#include <optional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "agd/errors.hpp"

namespace agd::pipeline {

using diffusion::Denoiser;

Setup make_setup(const config::Config& cfg) {
  config::Experiment exp = config::to_experiment(cfg);
  diffusion::ToyDataset data = diffusion::ToyDataset::ring(exp.data);
  diffusion::NoiseSchedule schedule(exp.schedule);
  return {std::move(exp), std::move(data), std::move(schedule)};
}

diffusion::BaseTrainResult train_base(const Setup& s) {
  auto result = diffusion::train_base(s.data, s.schedule, s.exp.model, s.exp.base);
  result.model.set_frozen(true);
  return result;
}

void check_schedule(const Setup& s, const Denoiser& base) {
  if (base.schedule_hash() != s.schedule.hash()) {
    throw CompatibilityError(fmt::format(
        "base model was trained under schedule {:016x}, config describes {:016x}",
        base.schedule_hash(), s.schedule.hash()));
  }
  if (base.config().num_classes != s.data.class_count()) {
    throw CompatibilityError("base model class count does not match data.classes");
  }
}

store::TrajectoryStore generate_store(const Setup& s, const Denoiser& base, store::Source source) {
  check_schedule(s, base);
  if (source == store::Source::guided) {
    return store::generate_guided_trajectories(base, s.schedule, s.exp.trajectories);
  }
  return store::generate_diffusion_pairs(base, s.data, s.schedule, s.exp.trajectories);
}

std::pair<store::TrajectoryStore, store::TrajectoryStore> split(const Setup& s,
                                                                const store::TrajectoryStore& st) {
  return st.split_holdout(s.exp.holdout_modulus);
}

namespace {

double heldout(const diffusion::EpsModel& model, const store::TrajectoryStore& held,
               const distill::LossSpec& loss) {
  if (held.empty()) return std::numeric_limits<double>::quiet_NaN();
  return distill::teacher_matching_loss(model, held, loss);
}

}  // namespace

AgdResult run_agd(const Setup& s, const Denoiser& base, const store::TrajectoryStore& st,
                  const adapters::AdapterConfig& adapter_cfg) {
  check_schedule(s, base);
  const auto [train, held] = split(s, st);
  AgdResult r;
  r.stack = adapters::AdapterStack(adapter_cfg, base);
  r.run = distill::distill(train, base, r.stack, s.exp.distill);
  const adapters::GuidedModel model(base, r.stack);
  r.heldout_loss = heldout(model, held, s.exp.distill.loss);
  return r;
}

GdResult run_gd(const Setup& s, const Denoiser& base, const store::TrajectoryStore& st) {
  check_schedule(s, base);
  const auto [train, held] = split(s, st);
  GdResult r;
  r.model = distill::GdModel(base, s.exp.gd_pathway);
  r.run = distill::gd_finetune(train, base, r.model, s.exp.distill);
  const distill::GdEpsModel model(r.model);
  r.heldout_loss = heldout(model, held, s.exp.distill.loss);
  return r;
}

eval::EvalReport evaluate(const Setup& s, const EvalInputs& in) {
  if (in.base == nullptr) throw PreconditionError("evaluate needs a base model");
  const Denoiser& base = *in.base;
  check_schedule(s, base);
  const config::EvalSpec& spec = s.exp.eval;

  const diffusion::CfgModel teacher(base);
  const diffusion::ConditionalModel unguided(base);
  std::optional<adapters::GuidedModel> agd;
  std::optional<distill::GdEpsModel> gd;
  std::vector<eval::Method> methods{{eval::kTeacher, &teacher, 0.0}};
  if (!in.teacher_only) {
    methods.push_back({kUnguided, &unguided, 0.0});
    if (in.stack != nullptr) {
      agd.emplace(base, *in.stack);
      methods.push_back({kAgd, &*agd, in.stack->parameter_ratio(base)});
    }
    if (in.gd != nullptr) {
      gd.emplace(*in.gd);
      methods.push_back({kGd, &*gd,
                         static_cast<double>(in.gd->parameter_count()) /
                             static_cast<double>(base.parameter_count())});
    }
  }

  eval::EvalReport rep;
  std::string names;
  for (const auto& m : methods) names += (names.empty() ? "" : " ") + m.name;
  rep.metadata = {
      {"config_hash", fmt::format("{:016x}", s.exp.config_hash)},
      {"seed", std::to_string(s.exp.seed)},
      {"steps", std::to_string(s.schedule.steps())},
      {"sampler", diffusion::to_string(spec.options.kind)},
      {"methods", names},
      {"endpoint_seeds", std::to_string(spec.endpoint_seeds)},
      {"gen_samples", std::to_string(spec.options.gen_samples)},
      {"real_samples", std::to_string(spec.options.real_samples)},
      {"knn_k", std::to_string(spec.options.knn_k)},
  };

  eval::EvalOptions summary_opt = spec.options;
  summary_opt.gen_samples = spec.endpoint_seeds;
  const double report_omega[] = {spec.report_omega};
  if (spec.endpoint_seeds > spec.options.knn_k) {
    rep.summary = eval::guidance_sweep(methods, report_omega, s.data, s.schedule, summary_opt);
  }
  rep.sweep = eval::guidance_sweep(methods, spec.omegas, s.data, s.schedule, spec.options);
  if (in.teacher_only) return rep;

  if (agd) {
    rep.transfer.push_back(
        eval::scheduler_transfer(*agd, teacher, s.data, s.schedule, spec.transfer_omega,
                                 spec.options));
  }
  store::GenerationOptions g = s.exp.trajectories;
  g.count = spec.divergence_count;
  g.omega_lo = spec.divergence_omega_lo;
  g.omega_hi = spec.divergence_omega_hi;
  const auto guided = store::generate_guided_trajectories(base, s.schedule, g);
  g.omega_lo = g.omega_hi = 1.0;
  const auto plain = store::generate_guided_trajectories(base, s.schedule, g);
  rep.divergence = store::trajectory_divergence(guided, plain);
  return rep;
}

namespace {

struct EndpointBaseline {
  std::vector<diffusion::SampleSpec> specs;
  double unguided = 0.0;
};

EndpointBaseline endpoint_baseline(const Setup& s, const Denoiser& base) {
  const diffusion::CfgModel teacher(base);
  const diffusion::ConditionalModel unguided(base);
  EndpointBaseline b;
  b.specs = eval::paired_specs(s.exp.eval.endpoint_seeds, s.data.class_count(),
                               s.exp.eval.report_omega, s.exp.eval.options.seed);
  b.unguided = eval::endpoint_mse(unguided, teacher, s.schedule, s.exp.eval.options.kind, b.specs);
  return b;
}

AblationRow ablation_row(const Setup& s, const Denoiser& base, const store::TrajectoryStore& st,
                         const adapters::AdapterConfig& cfg, const EndpointBaseline& b,
                         std::string variant) {
  const AgdResult r = run_agd(s, base, st, cfg);
  const diffusion::CfgModel teacher(base);
  const adapters::GuidedModel model(base, r.stack);
  AblationRow row;
  row.variant = std::move(variant);
  row.trainable_parameters = r.run.trainable_parameters;
  row.parameter_ratio = r.run.parameter_ratio;
  row.heldout_loss = r.heldout_loss;
  row.endpoint_mse = eval::endpoint_mse(model, teacher, s.schedule, s.exp.eval.options.kind, b.specs);
  row.unguided_endpoint_mse = b.unguided;
  spdlog::info("ablation {}: held-out loss {:.6g}, endpoint mse {:.6g}", row.variant,
               row.heldout_loss, row.endpoint_mse);
  return row;
}

}  // namespace

std::vector<AblationRow> ablate_architectures(const Setup& s, const Denoiser& base,
                                              const store::TrajectoryStore& st) {
  const EndpointBaseline b = endpoint_baseline(s, base);
  std::vector<AblationRow> rows;
  for (auto arch : {adapters::Architecture::cross_attention, adapters::Architecture::offset,
                    adapters::Architecture::gating, adapters::Architecture::positional}) {
    adapters::AdapterConfig cfg = s.exp.adapter;
    cfg.arch = arch;
    rows.push_back(ablation_row(s, base, st, cfg, b, adapters::to_string(arch)));
  }
  return rows;
}

std::vector<AblationRow> ablate_source(const Setup& s, const Denoiser& base) {
  const EndpointBaseline b = endpoint_baseline(s, base);
  std::vector<AblationRow> rows;
  for (auto source : {store::Source::guided, store::Source::diffusion}) {
    const auto st = generate_store(s, base, source);
    rows.push_back(ablation_row(s, base, st, s.exp.adapter, b, store::to_string(source)));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "variant,trainable_parameters,parameter_ratio,heldout_loss,endpoint_mse_vs_teacher,"
      "unguided_endpoint_mse_vs_teacher\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.variant,
                       r.trainable_parameters, r.parameter_ratio, r.heldout_loss, r.endpoint_mse,
                       r.unguided_endpoint_mse);
  }
  return out;
}

std::string ablation_text(const std::vector<AblationRow>& rows) {
  std::string out = fmt::format("{:<16} {:>8} {:>12} {:>14} {:>14} {:>14}\n", "variant", "params",
                                "param_ratio", "heldout_loss", "endpoint_mse", "unguided_mse");
  for (const auto& r : rows) {
    out += fmt::format("{:<16} {:>8} {:>12.6g} {:>14.6g} {:>14.6g} {:>14.6g}\n", r.variant,
                       r.trainable_parameters, r.parameter_ratio, r.heldout_loss, r.endpoint_mse,
                       r.unguided_endpoint_mse);
  }
  return out;
}

void require_hashes(const std::vector<std::pair<std::string, std::uint64_t>>& artifacts,
                    std::uint64_t expected, bool force) {
  for (const auto& [name, hash] : artifacts) {
    if (hash == expected) continue;
    const std::string msg = fmt::format("{} was produced under config {:016x}, expected {:016x}",
                                        name, hash, expected);
    if (!force) throw CompatibilityError(msg + " (pass --force to override)");
    spdlog::warn("{}", msg);
  }
}

}  // namespace agd::pipeline
