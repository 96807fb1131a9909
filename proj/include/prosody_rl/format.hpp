#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include "prosody_rl/error.hpp"

namespace prosody_rl {

/// Every file the toolkit writes carries {"format": name, "version": "M.m"}.
/// Readers accept any minor revision of a supported major version.
inline constexpr int kFormatMajor = 1;
inline constexpr std::string_view kFormatVersion = "1.0";

inline nlohmann::json format_tag(std::string_view name) {
  return {{"format", std::string(name)}, {"version", std::string(kFormatVersion)}};
}

inline void check_format(const nlohmann::json& j, std::string_view name) {
  if (!j.is_object() || !j.contains("format") || !j.contains("version")) {
    fail(Errc::FormatError, "missing format/version header (expected " + std::string(name) + ")");
  }
  const auto fmt = j.at("format").get<std::string>();
  if (fmt != name) fail(Errc::FormatError, "expected format " + std::string(name) + ", found " + fmt);
  const auto version = j.at("version").get<std::string>();
  const auto dot = version.find('.');
  int major = -1;
  try {
    major = std::stoi(version.substr(0, dot));
  } catch (const std::exception&) {
    fail(Errc::FormatError, "unparseable version '" + version + "'");
  }
  if (major != kFormatMajor) {
    fail(Errc::FormatError, "unsupported major version " + version + " for " + std::string(name));
  }
}

}  // namespace prosody_rl
