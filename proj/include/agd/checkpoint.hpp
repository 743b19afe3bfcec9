#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "agd/adapters.hpp"
#include "agd/denoiser.hpp"
#include "agd/distill.hpp"

namespace agd::checkpoint {

/// Base checkpoint (.agdb): magic "AGDB", version, config hash, schedule hash,
/// denoiser config, time-encoder frequencies, named tensors, then tagged
/// binary sections, then an FNV-1a checksum of everything before it.
struct BaseFile {
  diffusion::Denoiser model;
  std::uint64_t config_hash = 0;
  std::map<std::string, std::vector<std::byte>> sections;
};

inline const std::string kAdapterSection = "adapters";
inline const std::string kOmegaPathwaySection = "omega_pathway";

void save_base(const std::filesystem::path& path, const diffusion::Denoiser& model,
               std::uint64_t config_hash,
               const std::map<std::string, std::vector<std::byte>>& sections = {});
BaseFile load_base(const std::filesystem::path& path);

/// Adapter payload (.agda body and "adapters" section): magic "AGDA",
/// version, config hash, base parameter hash, adapter config, omega-encoder
/// frequencies, tensors.
std::vector<std::byte> encode_adapters(const adapters::AdapterStack& stack,
                                       std::uint64_t config_hash);
struct AdapterFile {
  adapters::AdapterStack stack;
  std::uint64_t config_hash = 0;
};
/// Throws CompatibilityError when the payload was trained on another base.
AdapterFile decode_adapters(const std::vector<std::byte>& bytes, const diffusion::Denoiser& base);

void save_adapters(const std::filesystem::path& path, const adapters::AdapterStack& stack,
                   std::uint64_t config_hash);
AdapterFile load_adapters(const std::filesystem::path& path, const diffusion::Denoiser& base);

/// GD baseline: a base checkpoint of the fine-tuned network with an
/// omega_pathway section.
void save_gd(const std::filesystem::path& path, const distill::GdModel& model,
             std::uint64_t config_hash);
struct GdFile {
  distill::GdModel model;
  std::uint64_t config_hash = 0;
};
GdFile load_gd(const std::filesystem::path& path);

/// Reads only the config hash of any artifact written by this library.
std::uint64_t peek_config_hash(const std::filesystem::path& path);

}  // namespace agd::checkpoint
