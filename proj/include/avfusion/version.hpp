#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "json.hpp"

#include "avfusion/rng.hpp"

namespace avf {

#ifdef AVFUSION_VERSION
inline constexpr const char* kVersion = AVFUSION_VERSION;
#else
inline constexpr const char* kVersion = "0.1.0";
#endif

/// 16 hex digits of the FNV-1a hash of the config's compact JSON dump.
inline std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

/// Metadata block attached to every generated artifact.
inline nlohmann::json reproducibility(std::uint64_t seed, const nlohmann::json& config) {
  return {{"seed", seed}, {"config_hash", config_hash(config)}, {"version", kVersion}};
}

}  // namespace avf
