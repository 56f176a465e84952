#include "stainalign/error.hpp"

namespace stainalign {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_channel: return "invalid-channel";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    case ErrorCode::shape: return "shape";
    case ErrorCode::degenerate_stain: return "degenerate-stain";
    case ErrorCode::insufficient_resolution: return "insufficient-resolution";
    case ErrorCode::insufficient_correspondences: return "insufficient-correspondences";
    case ErrorCode::degenerate_configuration: return "degenerate-configuration";
    case ErrorCode::consensus_failure: return "consensus-failure";
    case ErrorCode::degenerate_model: return "degenerate-model";
    case ErrorCode::insufficient_control_points: return "insufficient-control-points";
    case ErrorCode::degenerate_neighborhood: return "degenerate-neighborhood";
    case ErrorCode::invalid_model: return "invalid-model";
    case ErrorCode::prealignment_failed: return "prealignment-failed";
    case ErrorCode::refinement_failed: return "refinement-failed";
  }
  return "unknown";
}

}  // namespace stainalign
