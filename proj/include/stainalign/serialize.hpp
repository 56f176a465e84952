#pragma once

// JSON forms of the library's models, results and configuration. Parsers are
// strict: unknown keys and wrong types raise Error(config).

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stainalign/evalkit.hpp"
#include "stainalign/geometry.hpp"
#include "stainalign/matching.hpp"
#include "stainalign/pipeline.hpp"
#include "stainalign/preprocess.hpp"

namespace stainalign {

using Json = nlohmann::json;

/// [a11, a12, tx, a21, a22, ty], row-major 2x3
Json affine_to_json(const AffineModel& m);
AffineModel affine_from_json(const Json& j);

/// {n_neighbors, controls: [{anchor, radius, coeffs_x[6], coeffs_y[6]}]}
Json lwm_to_json(const LwmModel& m);
LwmModel lwm_from_json(const Json& j);

/// [{source: [x, y], target: [x, y], ratio}]
Json correspondences_to_json(const std::vector<Correspondence>& pairs);
std::vector<Correspondence> correspondences_from_json(const Json& j);

Json transform_to_json(const RegistrationTransform& t);
RegistrationTransform transform_from_json(const Json& j);

Json diagnostics_to_json(const Diagnostics& d);
Json metrics_to_json(const Metrics& m);

/// A preset name or nine numbers (three stain rows); written back as rows.
Json stain_matrix_to_json(const StainMatrix& m);
StainMatrix stain_matrix_from_json(const Json& j);

/// Every field optional; missing ones keep the defaults in `base`.
PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig base = {});
Json pipeline_config_to_json(const PipelineConfig& c);

/// Pipeline settings plus optional input and output paths.
struct RunConfig {
  PipelineConfig pipeline;
  std::optional<std::string> source;
  std::optional<std::string> target;
  std::optional<std::string> out_dir;
};
RunConfig run_config_from_json(const Json& j);

Json synth_spec_to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const Json& j);

/// truth.json: the affine and displacement parameters of a synthetic pair.
Json ground_truth_to_json(const GroundTruth& t, Size size);
GroundTruth ground_truth_from_json(const Json& j);

/// Parses text, mapping syntax errors to Error(config).
Json parse_json(const std::string& text, const std::string& what);

}  // namespace stainalign
