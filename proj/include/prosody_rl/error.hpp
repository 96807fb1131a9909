#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prosody_rl {

enum class Errc {
  EmptyInput,
  InvalidParams,
  UnmatchedLabel,
  DegenerateBaseline,
  InfeasibleMap,
  StateNotFound,
  InvalidSession,
  ShapeError,
  InsufficientData,
  DegenerateRanking,
  DegenerateGroups,
  InvalidExpected,
  ReplayError,
  NoBaseline,
  TrainingDiverged,
  FormatError,
  PhaseViolation,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::UnmatchedLabel: return "UnmatchedLabel";
    case Errc::DegenerateBaseline: return "DegenerateBaseline";
    case Errc::InfeasibleMap: return "InfeasibleMap";
    case Errc::StateNotFound: return "StateNotFound";
    case Errc::InvalidSession: return "InvalidSession";
    case Errc::ShapeError: return "ShapeError";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::DegenerateRanking: return "DegenerateRanking";
    case Errc::DegenerateGroups: return "DegenerateGroups";
    case Errc::InvalidExpected: return "InvalidExpected";
    case Errc::ReplayError: return "ReplayError";
    case Errc::NoBaseline: return "NoBaseline";
    case Errc::TrainingDiverged: return "TrainingDiverged";
    case Errc::FormatError: return "FormatError";
    case Errc::PhaseViolation: return "PhaseViolation";
  }
  return "Unknown";
}

/// Every failure the library reports carries one of the codes above so
/// callers (CLI exit codes, protocol error frames) can map it without
/// parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace prosody_rl
