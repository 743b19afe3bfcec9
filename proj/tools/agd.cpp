#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "agd/binary_io.hpp"
#include "agd/checkpoint.hpp"
#include "agd/config.hpp"
#include "agd/errors.hpp"
#include "agd/kernels.hpp"
#include "agd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace agd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kCompat = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
};

config::Config load_config(const Common& c) {
  config::Config cfg =
      c.config_path.empty() ? config::Config::defaults() : config::Config::load(c.config_path);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "YAML experiment config (defaults if omitted)");
  sub->add_option("--set", c.overrides, "Override a config key, e.g. --set distill.steps=0");
}

checkpoint::BaseFile load_frozen_base(const std::string& path, const pipeline::Setup& s,
                                      bool force) {
  auto f = checkpoint::load_base(path);
  f.model.set_frozen(true);
  pipeline::require_hashes({{path, f.config_hash}}, s.exp.config_hash, force);
  pipeline::check_schedule(s, f.model);
  return f;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::fputs(text.c_str(), stdout);
  } else {
    io::write_text(path, text);
  }
}

int cmd_train_base(const Common& c, const std::string& out, std::string loss_csv) {
  const auto s = pipeline::make_setup(load_config(c));
  const auto r = pipeline::train_base(s);
  checkpoint::save_base(out, r.model, s.exp.config_hash);
  if (loss_csv.empty()) loss_csv = out + ".loss.csv";
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) {
    csv += fmt::format("{},{:.17g}\n", i, r.loss_curve[i]);
  }
  io::write_text(loss_csv, csv);
  fmt::print("trained base: {} parameters, final loss {:.6g}, wrote {}\n",
             r.model.parameter_count(), r.loss_curve.empty() ? 0.0 : r.loss_curve.back(), out);
  return kOk;
}

int cmd_gen_traj(const Common& c, const std::string& base_path, const std::string& out) {
  const auto s = pipeline::make_setup(load_config(c));
  const auto base = load_frozen_base(base_path, s, c.force);
  const auto st = pipeline::generate_store(s, base.model, s.exp.source);
  st.write(out);
  fmt::print("wrote {}: {} trajectories x {} steps = {} records, checksum {:016x}\n", out,
             st.header().trajectories, st.header().steps, st.size(), st.checksum());
  return kOk;
}

int cmd_store_info(const std::string& path) {
  const auto st = store::TrajectoryStore::read(path);
  const auto& h = st.header();
  fmt::print("version: {}\n", h.version);
  fmt::print("data_dim: {}\n", h.data_dim);
  fmt::print("steps: {}\n", h.steps);
  fmt::print("trajectories: {}\n", h.trajectories);
  fmt::print("records: {}\n", st.size());
  fmt::print("omega_range: [{}, {}]\n", h.omega_lo, h.omega_hi);
  fmt::print("sampler: {}\n", diffusion::to_string(h.kind));
  fmt::print("source: {}\n", store::to_string(h.source));
  fmt::print("schedule_hash: {:016x}\n", h.schedule_hash);
  fmt::print("teacher_hash: {:016x}\n", h.teacher_hash);
  fmt::print("config_hash: {:016x}\n", h.config_hash);
  fmt::print("checksum: {:016x}\n", st.checksum());
  return kOk;
}

store::TrajectoryStore load_store(const std::string& path, const pipeline::Setup& s, bool force) {
  auto st = store::TrajectoryStore::read(path, s.schedule.hash());
  pipeline::require_hashes({{path, st.header().config_hash}}, s.exp.config_hash, force);
  return st;
}

int cmd_distill(const Common& c, const std::string& base_path, const std::string& store_path,
                const std::string& out, std::string curve_csv) {
  const auto s = pipeline::make_setup(load_config(c));
  const auto base = load_frozen_base(base_path, s, c.force);
  const auto st = load_store(store_path, s, c.force);
  if (curve_csv.empty()) curve_csv = out + ".loss.csv";
  if (s.exp.distill.mode == distill::Mode::agd_adapters) {
    const auto r = pipeline::run_agd(s, base.model, st, s.exp.adapter);
    checkpoint::save_adapters(out, r.stack, s.exp.config_hash);
    r.run.write_csv(curve_csv);
    fmt::print(
        "agd_adapters ({}): trainable {} / base {} = ratio {:.6g}, final loss {:.6g}, held-out "
        "loss {:.6g}, {:.3f} ms/step, teacher nfe {}\n",
        adapters::to_string(s.exp.adapter.arch), r.run.trainable_parameters,
        r.run.base_parameters, r.run.parameter_ratio,
        r.run.curve.empty() ? 0.0 : r.run.curve.back().loss, r.heldout_loss, r.run.mean_step_ms,
        r.run.teacher_nfe);
  } else {
    const auto r = pipeline::run_gd(s, base.model, st);
    checkpoint::save_gd(out, r.model, s.exp.config_hash);
    r.run.write_csv(curve_csv);
    fmt::print(
        "gd_full_finetune: trainable {} / base {} = ratio {:.6g}, final loss {:.6g}, held-out "
        "loss {:.6g}, {:.3f} ms/step\n",
        r.run.trainable_parameters, r.run.base_parameters, r.run.parameter_ratio,
        r.run.curve.empty() ? 0.0 : r.run.curve.back().loss, r.heldout_loss, r.run.mean_step_ms);
  }
  return kOk;
}

struct Models {
  checkpoint::BaseFile base;
  std::optional<checkpoint::AdapterFile> adapters;
  std::optional<checkpoint::GdFile> gd;
};

Models load_models(const pipeline::Setup& s, const Common& c, const std::string& base_path,
                   const std::string& adapter_path, const std::string& gd_path) {
  Models m{load_frozen_base(base_path, s, c.force), std::nullopt, std::nullopt};
  std::vector<std::pair<std::string, std::uint64_t>> hashes;
  if (!adapter_path.empty()) {
    m.adapters = checkpoint::load_adapters(adapter_path, m.base.model);
    hashes.emplace_back(adapter_path, m.adapters->config_hash);
  }
  if (!gd_path.empty()) {
    m.gd = checkpoint::load_gd(gd_path);
    hashes.emplace_back(gd_path, m.gd->config_hash);
  }
  pipeline::require_hashes(hashes, s.exp.config_hash, c.force);
  return m;
}

struct SampleArgs {
  std::string method = "agd";
  double omega = 4.0;
  std::size_t count = 1024;
  int cls = -1;
  std::uint64_t seed = 0;
};

int cmd_sample(const Common& c, const std::string& base_path, const std::string& adapter_path,
               const std::string& gd_path, const SampleArgs& a, const std::string& out) {
  const auto s = pipeline::make_setup(load_config(c));
  const Models m = load_models(s, c, base_path, adapter_path, gd_path);
  std::optional<diffusion::CfgModel> teacher;
  std::optional<diffusion::ConditionalModel> unguided;
  std::optional<adapters::GuidedModel> agd;
  std::optional<distill::GdEpsModel> gd;
  const diffusion::EpsModel* model = nullptr;
  if (a.method == "teacher") {
    model = &teacher.emplace(m.base.model);
  } else if (a.method == "unguided") {
    model = &unguided.emplace(m.base.model);
  } else if (a.method == "agd") {
    if (!m.adapters) throw ConfigError("sampling agd needs --adapters");
    model = &agd.emplace(m.base.model, m.adapters->stack);
  } else if (a.method == "gd") {
    if (!m.gd) throw ConfigError("sampling gd needs --gd");
    model = &gd.emplace(m.gd->model);
  } else {
    throw ConfigError("unknown method '" + a.method + "'");
  }
  if (a.cls >= s.data.class_count()) throw ConfigError("--class is out of range");
  auto specs = eval::paired_specs(a.count, s.data.class_count(), a.omega, a.seed);
  if (a.cls >= 0) {
    for (auto& sp : specs) sp.cls = a.cls;
  }
  const auto set = diffusion::sample_batch(*model, s.schedule, s.exp.eval.options.kind, specs);
  std::string csv = fmt::format("# config_hash={:016x}\nx,y,class,diverged\n", s.exp.config_hash);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    csv += fmt::format("{:.17g},{:.17g},{},{}\n", set.endpoints(i, 0), set.endpoints(i, 1),
                       specs[i].cls, set.diverged[i] ? 1 : 0);
  }
  write_output(out, csv);
  spdlog::info("{} samples, {} network evaluations", specs.size(), model->nfe());
  return kOk;
}

void write_ablation(const fs::path& dir, const std::string& stem,
                    const std::vector<pipeline::AblationRow>& rows) {
  io::write_text(dir / (stem + ".csv"), pipeline::ablation_csv(rows));
  io::write_text(dir / (stem + ".txt"), pipeline::ablation_text(rows));
  std::fputs(pipeline::ablation_text(rows).c_str(), stdout);
}

int cmd_eval(const Common& c, const std::string& base_path, const std::string& adapter_path,
             const std::string& gd_path, const std::string& store_path, const std::string& ablate,
             bool teacher_only, const std::string& out_dir) {
  const auto s = pipeline::make_setup(load_config(c));
  const Models m = load_models(s, c, base_path, adapter_path, gd_path);
  fs::create_directories(out_dir);
  if (!ablate.empty()) {
    if (ablate == "arch") {
      if (store_path.empty()) throw ConfigError("--ablate arch needs --store");
      const auto st = load_store(store_path, s, c.force);
      write_ablation(out_dir, "ablation_arch",
                     pipeline::ablate_architectures(s, m.base.model, st));
    } else if (ablate == "source") {
      write_ablation(out_dir, "ablation_source", pipeline::ablate_source(s, m.base.model));
    } else {
      throw ConfigError("unknown ablation '" + ablate + "' (expected arch or source)");
    }
    return kOk;
  }
  pipeline::EvalInputs in;
  in.base = &m.base.model;
  in.stack = m.adapters ? &m.adapters->stack : nullptr;
  in.gd = m.gd ? &m.gd->model : nullptr;
  in.teacher_only = teacher_only;
  const auto rep = pipeline::evaluate(s, in);
  const std::string hash_line = fmt::format("# config_hash={:016x}\n", s.exp.config_hash);
  io::write_text(fs::path(out_dir) / "sweep.csv", hash_line + rep.sweep_csv());
  io::write_text(fs::path(out_dir) / "report.csv", rep.to_csv());
  io::write_text(fs::path(out_dir) / "report.txt", rep.report_text());
  std::fputs(rep.report_text().c_str(), stdout);
  return kOk;
}

int cmd_ablate(const Common& c, const std::string& base_path, const std::string& store_path,
               const std::string& what, const std::string& out_dir) {
  return cmd_eval(c, base_path, "", "", store_path, what, false, out_dir);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("agd"));
  CLI::App app{"Adapter guidance distillation on a toy 2-D conditional diffusion model"};
  app.require_subcommand(1);
  int threads = 0;
  std::string log_level = "info";
  app.add_option("--threads", threads, "Cap on worker threads (0 = all)");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  Common common;
  std::string base_path, store_path, adapter_path, gd_path, out, curve_csv, out_dir = ".";

  auto* train = app.add_subcommand("train-base", "Train the conditional base denoiser");
  add_common(train, common);
  train->add_option("-o,--out", out, "Checkpoint path (.agdb)")->required();
  train->add_option("--loss-csv", curve_csv, "Loss curve CSV (default <out>.loss.csv)");

  auto* gen = app.add_subcommand("gen-traj", "Cache CFG teacher trajectories in a .agdt store");
  add_common(gen, common);
  gen->add_option("--base", base_path, "Base checkpoint")->required();
  gen->add_option("-o,--out", out, "Store path (.agdt)")->required();
  gen->add_flag("--force", common.force, "Accept artifacts from another config");

  auto* info = app.add_subcommand("store-info", "Print a store header");
  info->add_option("store", store_path, "Store path")->required();

  auto* dist = app.add_subcommand(
      "distill", "Train adapters (distill.mode=agd_adapters) or the full fine-tune baseline");
  add_common(dist, common);
  dist->add_option("--base", base_path, "Base checkpoint")->required();
  dist->add_option("--store", store_path, "Trajectory store")->required();
  dist->add_option("-o,--out", out, "Adapter (.agda) or GD (.agdb) checkpoint")->required();
  dist->add_option("--loss-csv", curve_csv, "Training curve CSV (default <out>.loss.csv)");
  dist->add_flag("--force", common.force, "Accept artifacts from another config");

  SampleArgs sample_args;
  auto* samp = app.add_subcommand("sample", "Draw samples and print x,y,class CSV");
  add_common(samp, common);
  samp->add_option("--base", base_path, "Base checkpoint")->required();
  samp->add_option("--adapters", adapter_path, "Adapter checkpoint");
  samp->add_option("--gd", gd_path, "GD checkpoint");
  samp->add_option("--method", sample_args.method, "teacher, unguided, agd or gd");
  samp->add_option("--omega", sample_args.omega, "Guidance scale");
  samp->add_option("-n,--count", sample_args.count, "Number of samples");
  samp->add_option("--class", sample_args.cls, "Class id (default cycles over classes)");
  samp->add_option("--seed", sample_args.seed, "Seed of the paired noise");
  samp->add_option("-o,--out", out, "Output CSV (default stdout)");
  samp->add_flag("--force", common.force, "Accept artifacts from another config");

  std::string ablate;
  bool teacher_only = false;
  auto* ev = app.add_subcommand("eval", "Guidance sweep, fidelity, transfer and divergence");
  ev->footer("sweep.csv columns: " + eval::EvalReport::sweep_header());
  add_common(ev, common);
  ev->add_option("--base", base_path, "Base checkpoint")->required();
  ev->add_option("--adapters", adapter_path, "Adapter checkpoint");
  ev->add_option("--gd", gd_path, "GD checkpoint");
  ev->add_option("--store", store_path, "Trajectory store (for --ablate arch)");
  ev->add_option("--ablate", ablate, "Run an ablation instead: arch or source");
  ev->add_flag("--teacher-only", teacher_only, "Only the CFG teacher rows");
  ev->add_option("--out-dir", out_dir, "Directory for sweep.csv, report.csv and report.txt");
  ev->add_flag("--force", common.force, "Accept artifacts from another config");

  std::string what = "arch";
  auto* abl = app.add_subcommand("ablate", "Compare adapter architectures or trajectory sources");
  add_common(abl, common);
  abl->add_option("--base", base_path, "Base checkpoint")->required();
  abl->add_option("--store", store_path, "Trajectory store (for arch)");
  abl->add_option("--what", what, "arch or source");
  abl->add_option("--out-dir", out_dir, "Directory for the ablation table");
  abl->add_flag("--force", common.force, "Accept artifacts from another config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (threads > 0) kernels::set_num_threads(threads);
    if (*train) return cmd_train_base(common, out, curve_csv);
    if (*gen) return cmd_gen_traj(common, base_path, out);
    if (*info) return cmd_store_info(store_path);
    if (*dist) return cmd_distill(common, base_path, store_path, out, curve_csv);
    if (*samp) return cmd_sample(common, base_path, adapter_path, gd_path, sample_args, out);
    if (*ev) {
      return cmd_eval(common, base_path, adapter_path, gd_path, store_path, ablate, teacher_only,
                      out_dir);
    }
    if (*abl) return cmd_ablate(common, base_path, store_path, what, out_dir);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumeric;
  } catch (const CompatibilityError& e) {
    spdlog::error("incompatible artifacts: {}", e.what());
    return kCompat;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
