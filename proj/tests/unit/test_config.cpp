#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "agd/binary_io.hpp"
#include "agd/checkpoint.hpp"
#include "agd/config.hpp"
#include "agd/errors.hpp"
#include "fixtures.hpp"

using namespace agd;
using agd::testing::SmallWorld;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("agd_unit_" + std::to_string(::getpid()) + "_" + name);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

}  // namespace

TEST(Config, ShippedDefaultFileMatchesBuiltInDefaults) {
  const auto cfg = config::Config::load(AGD_DEFAULT_CONFIG);
  EXPECT_EQ(cfg.values(), config::Config::defaults().values());
  EXPECT_EQ(cfg.hash(), config::Config::defaults().hash());
}

TEST(Config, MissingFileNamesThePath) {
  try {
    (void)config::Config::load("/nonexistent/agd.yaml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/agd.yaml"), std::string::npos);
  }
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto cfg = config::Config::defaults();
  EXPECT_THROW(cfg.set("distill.stpes", "10"), ConfigError);
  EXPECT_THROW(cfg.set("distill.batch", "0"), ConfigError);
  EXPECT_THROW(cfg.set("distill.peak_lr", "fast"), ConfigError);
  EXPECT_THROW(cfg.set("adapter.arch", "lora"), ConfigError);
  EXPECT_THROW(cfg.set("eval.omegas", "0.5,2"), ConfigError);
  EXPECT_THROW(cfg.apply_override("distill.steps"), ConfigError);

  const fs::path p = temp_path("bad.yaml");
  write_text(p, "distill:\n  steps: [1, 2\n");
  EXPECT_THROW(config::Config::load(p), ConfigError);
  write_text(p, "distill:\n  unknown: 3\n");
  EXPECT_THROW(config::Config::load(p), ConfigError);
  fs::remove(p);
}

TEST(Config, OverridesUseDottedPaths) {
  auto cfg = config::Config::defaults();
  cfg.apply_override("distill.steps=12");
  cfg.apply_override("eval.omegas=1,3");
  EXPECT_EQ(cfg.get_int("distill.steps"), 12);
  EXPECT_EQ(cfg.get_doubles("eval.omegas"), (std::vector<double>{1.0, 3.0}));
  const auto e = config::to_experiment(cfg);
  EXPECT_EQ(e.distill.steps, 12u);
}

TEST(Config, HashTracksEverythingButDistillMode) {
  const auto base = config::Config::defaults();
  auto mode = base;
  mode.set("distill.mode", "gd_full_finetune");
  EXPECT_EQ(mode.hash(), base.hash());
  auto seed = base;
  seed.set("seed", "1");
  EXPECT_NE(seed.hash(), base.hash());
  auto lr = base;
  lr.set("distill.peak_lr", "0.0030");
  EXPECT_EQ(lr.hash(), base.hash());  // canonical text
  EXPECT_EQ(base.hash_hex().size(), 16u);
}

TEST(Config, YamlRoundTrip) {
  auto cfg = config::Config::defaults();
  cfg.set("adapter.arch", "gating");
  cfg.set("eval.omegas", "1,2.5,7");
  const fs::path p = temp_path("roundtrip.yaml");
  write_text(p, cfg.to_yaml());
  const auto back = config::Config::load(p);
  EXPECT_EQ(back.values(), cfg.values());
  fs::remove(p);
}

TEST(Config, ExperimentDerivesStageSeedsAndValidates) {
  auto cfg = config::Config::defaults();
  cfg.set("seed", "10");
  const auto e = config::to_experiment(cfg);
  EXPECT_EQ(e.base.seed, 10u);
  EXPECT_EQ(e.trajectories.seed, 11u);
  EXPECT_EQ(e.adapter.seed, 12u);
  EXPECT_EQ(e.distill.seed, 13u);
  EXPECT_EQ(e.gd_pathway.seed, 14u);
  EXPECT_EQ(e.eval.options.seed, 15u);
  EXPECT_EQ(e.model.num_classes, e.data.classes);
  EXPECT_EQ(e.config_hash, cfg.hash());

  auto bad = config::Config::defaults();
  bad.set("adapter.tokens", "5");
  EXPECT_THROW(config::to_experiment(bad), ConfigError);
  bad = config::Config::defaults();
  bad.set("schedule.sigma_min", "20");
  EXPECT_THROW(config::to_experiment(bad), ConfigError);
  bad = config::Config::defaults();
  bad.set("trajectories.omega_lo", "7");
  EXPECT_THROW(config::to_experiment(bad), ConfigError);
}

TEST(Checkpoint, BaseRoundTrip) {
  const auto& w = SmallWorld::get();
  const fs::path p = temp_path("base.agdb");
  checkpoint::save_base(p, w.base, 0xabc);
  const auto f = checkpoint::load_base(p);
  EXPECT_EQ(f.model.parameter_hash(), w.base.parameter_hash());
  EXPECT_EQ(f.model.schedule_hash(), w.base.schedule_hash());
  EXPECT_EQ(f.model.time_encoder().frequencies(), w.base.time_encoder().frequencies());
  EXPECT_EQ(f.config_hash, 0xabcu);
  EXPECT_EQ(checkpoint::peek_config_hash(p), 0xabcu);
  nn::Matrix x{{0.3, -0.2}};
  const double s[] = {0.4};
  const int c[] = {2};
  EXPECT_EQ(f.model.predict(x, s, c), w.base.predict(x, s, c));

  auto bytes = io::read_file(p);
  bytes[bytes.size() / 3] ^= std::byte{0x10};
  io::write_file(p, bytes);
  EXPECT_THROW(checkpoint::load_base(p), IoError);
  fs::remove(p);
}

TEST(Checkpoint, AdapterRoundTripAndTeacherCheck) {
  const auto& w = SmallWorld::get();
  adapters::AdapterConfig cfg;
  cfg.arch = adapters::Architecture::positional;
  cfg.seed = 3;
  const adapters::AdapterStack stack(cfg, w.base);
  const fs::path p = temp_path("stack.agda");
  checkpoint::save_adapters(p, stack, 0x55);
  const auto f = checkpoint::load_adapters(p, w.base);
  EXPECT_EQ(f.stack.parameter_hash(), stack.parameter_hash());
  EXPECT_EQ(f.stack.config().arch, cfg.arch);
  EXPECT_EQ(f.config_hash, 0x55u);

  const diffusion::Denoiser other(agd::testing::small_model(), 99);
  EXPECT_THROW(checkpoint::load_adapters(p, other), CompatibilityError);
  fs::remove(p);
}

TEST(Checkpoint, GdRoundTrip) {
  const auto& w = SmallWorld::get();
  const distill::GdModel gd(w.base, distill::OmegaPathwayConfig{});
  const fs::path p = temp_path("gd.agdb");
  checkpoint::save_gd(p, gd, 0x77);
  const auto f = checkpoint::load_gd(p);
  EXPECT_EQ(f.config_hash, 0x77u);
  EXPECT_EQ(f.model.parameter_count(), gd.parameter_count());
  const distill::GdEpsModel a(gd), b(f.model);
  nn::Matrix x{{0.3, -0.2}, {1.0, 2.0}};
  const double s[] = {0.4, 3.0};
  const int c[] = {2, 0};
  const double o[] = {2.0, 5.0};
  EXPECT_EQ(a.predict(x, s, c, o), b.predict(x, s, c, o));
  fs::remove(p);
}
