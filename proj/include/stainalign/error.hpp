#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stainalign {

enum class ErrorCode {
  invalid_argument,
  invalid_channel,
  io,
  config,
  shape,
  degenerate_stain,
  insufficient_resolution,
  insufficient_correspondences,
  degenerate_configuration,
  consensus_failure,
  degenerate_model,
  insufficient_control_points,
  degenerate_neighborhood,
  invalid_model,
  prealignment_failed,
  refinement_failed,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base exception for every failure raised by the library. The code is the
/// stable, machine-readable part; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by LWM fitting when a control point's neighbourhood cannot support
/// a second-order fit (e.g. collinear neighbours).
class DegenerateNeighborhoodError : public Error {
 public:
  DegenerateNeighborhoodError(std::size_t anchor_index, const std::string& message)
      : Error(ErrorCode::degenerate_neighborhood, message), anchor_index_(anchor_index) {}

  std::size_t anchor_index() const noexcept { return anchor_index_; }

 private:
  std::size_t anchor_index_;
};

}  // namespace stainalign
