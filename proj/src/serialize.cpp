#include "stainalign/serialize.hpp"

#include <limits>
#include <set>
#include <string>

#include "stainalign/error.hpp"

namespace stainalign {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::config, msg); }

// Strict reader for one JSON object: records which keys were consumed and
// rejects the rest in finish().
class Fields {
 public:
  Fields(const Json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j.is_object()) bad(ctx_ + ": expected a JSON object");
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const Json& require(const std::string& key) {
    const Json* v = find(key);
    if (v == nullptr) bad(ctx_ + ": missing '" + key + "'");
    return *v;
  }

  void number(const std::string& key, double& out) {
    if (const Json* v = find(key)) out = as_number(*v, key);
  }

  void integer(const std::string& key, int& out) {
    if (const Json* v = find(key)) out = as_int(*v, key);
  }

  double as_number(const Json& v, const std::string& key) const {
    if (!v.is_number()) bad(ctx_ + "." + key + ": expected a number");
    return v.get<double>();
  }

  int as_int(const Json& v, const std::string& key) const {
    if (!v.is_number_integer()) bad(ctx_ + "." + key + ": expected an integer");
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      bad(ctx_ + "." + key + ": out of range");
    }
    return static_cast<int>(x);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (seen_.count(key) == 0) bad(ctx_ + ": unknown key '" + key + "'");
    }
  }

  const std::string& context() const { return ctx_; }

 private:
  const Json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

std::vector<double> numbers(const Json& j, std::size_t n, const std::string& what) {
  if (!j.is_array() || j.size() != n) bad(what + ": expected an array of " + std::to_string(n) + " numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) bad(what + ": expected numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

Json point_json(Point2 p) { return Json::array({p.x, p.y}); }

Point2 point_from(const Json& j, const std::string& what) {
  const auto v = numbers(j, 2, what);
  return {v[0], v[1]};
}

Json size_json(Size s) { return Json::array({s.width, s.height}); }

Size size_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    bad(what + ": expected [width, height]");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

Json residuals_json(const ResidualStats& r) {
  return {{"count", r.count}, {"mean", r.mean}, {"rms", r.rms}, {"max", r.max}};
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    bad(what + ": " + e.what());
  }
}

Json affine_to_json(const AffineModel& m) {
  return Json::array({m.a11, m.a12, m.tx, m.a21, m.a22, m.ty});
}

AffineModel affine_from_json(const Json& j) {
  // Nested [[a11, a12, tx], [a21, a22, ty]] is accepted as well.
  if (j.is_array() && j.size() == 2) {
    const auto r0 = numbers(j[0], 3, "affine row 0");
    const auto r1 = numbers(j[1], 3, "affine row 1");
    return {r0[0], r0[1], r1[0], r1[1], r0[2], r1[2]};
  }
  const auto v = numbers(j, 6, "affine");
  return {v[0], v[1], v[3], v[4], v[2], v[5]};
}

Json lwm_to_json(const LwmModel& m) {
  Json controls = Json::array();
  for (const auto& c : m.controls()) {
    controls.push_back({{"anchor", point_json(c.anchor)},
                        {"radius", c.radius},
                        {"coeffs_x", c.coeffs_x},
                        {"coeffs_y", c.coeffs_y}});
  }
  return {{"n_neighbors", m.n_neighbors()}, {"controls", std::move(controls)}};
}

LwmModel lwm_from_json(const Json& j) {
  Fields f(j, "lwm");
  int n = 0;
  f.integer("n_neighbors", n);
  const Json& cj = f.require("controls");
  f.finish();
  if (!cj.is_array()) bad("lwm.controls: expected an array");
  std::vector<LwmControlPoint> controls;
  for (const auto& item : cj) {
    Fields cf(item, "lwm.controls[]");
    LwmControlPoint c;
    c.anchor = point_from(cf.require("anchor"), "anchor");
    c.radius = cf.as_number(cf.require("radius"), "radius");
    const auto cx = numbers(cf.require("coeffs_x"), 6, "coeffs_x");
    const auto cy = numbers(cf.require("coeffs_y"), 6, "coeffs_y");
    cf.finish();
    std::copy(cx.begin(), cx.end(), c.coeffs_x.begin());
    std::copy(cy.begin(), cy.end(), c.coeffs_y.begin());
    controls.push_back(c);
  }
  try {
    return LwmModel(std::move(controls), n);
  } catch (const Error& e) {
    bad(std::string("lwm: ") + e.what());
  }
}

Json correspondences_to_json(const std::vector<Correspondence>& pairs) {
  Json out = Json::array();
  for (const auto& c : pairs) {
    out.push_back({{"source", point_json(c.source)}, {"target", point_json(c.target)}, {"ratio", c.ratio}});
  }
  return out;
}

std::vector<Correspondence> correspondences_from_json(const Json& j) {
  if (!j.is_array()) bad("correspondences: expected an array");
  std::vector<Correspondence> out;
  for (const auto& item : j) {
    Fields f(item, "correspondence");
    Correspondence c;
    c.source = point_from(f.require("source"), "source");
    c.target = point_from(f.require("target"), "target");
    f.number("ratio", c.ratio);
    f.finish();
    out.push_back(c);
  }
  return out;
}

Json transform_to_json(const RegistrationTransform& t) {
  return {{"affine", affine_to_json(t.affine)},
          {"lwm", t.lwm_inverse ? lwm_to_json(*t.lwm_inverse) : Json(nullptr)},
          {"lwm_forward_pairs", correspondences_to_json(t.lwm_forward_pairs)},
          {"scale_factor", t.scale_factor},
          {"source_size", size_json(t.source_size)},
          {"target_size", size_json(t.target_size)}};
}

RegistrationTransform transform_from_json(const Json& j) {
  Fields f(j, "transform");
  RegistrationTransform t;
  t.affine = affine_from_json(f.require("affine"));
  if (const Json* l = f.find("lwm"); l != nullptr && !l->is_null()) t.lwm_inverse = lwm_from_json(*l);
  if (const Json* p = f.find("lwm_forward_pairs")) t.lwm_forward_pairs = correspondences_from_json(*p);
  f.number("scale_factor", t.scale_factor);
  t.source_size = size_from(f.require("source_size"), "source_size");
  t.target_size = size_from(f.require("target_size"), "target_size");
  f.finish();
  if (!(t.scale_factor >= 1.0)) bad("transform.scale_factor must be >= 1");
  return t;
}

Json diagnostics_to_json(const Diagnostics& d) {
  Json tiles = Json::array();
  for (const auto& t : d.tiles) {
    tiles.push_back({{"index", t.index},
                     {"y_begin", t.y_begin},
                     {"y_end", t.y_end},
                     {"source_keypoints", t.source_keypoints},
                     {"target_keypoints", t.target_keypoints},
                     {"tentative", t.tentative},
                     {"inliers", t.inliers},
                     {"skipped", t.skipped},
                     {"residuals", residuals_json(t.residuals)}});
  }
  return {{"scale_factor", d.scale_factor},
          {"source_working_size", size_json(d.source_working)},
          {"target_working_size", size_json(d.target_working)},
          {"prealign",
           {{"source_keypoints", d.source_keypoints},
            {"target_keypoints", d.target_keypoints},
            {"tentative_matches", d.tentative_matches},
            {"inliers", d.affine_inliers},
            {"iterations", d.affine_iterations},
            {"converged", d.affine_converged},
            {"residuals", residuals_json(d.affine_residuals)}}},
          {"refine",
           {{"source_keypoints", d.refine_source_keypoints},
            {"tiles", std::move(tiles)},
            {"merged_pairs", d.merged_pairs},
            {"dropped_anchors", d.dropped_anchors},
            {"lwm_controls", d.lwm_controls},
            {"lwm_residuals", residuals_json(d.lwm_residuals)},
            {"extrapolated_pixels", d.extrapolated_pixels}}},
          {"warnings", d.warnings},
          {"degraded", d.degraded},
          {"degraded_reason", d.degraded_reason}};
}

Json metrics_to_json(const Metrics& m) {
  Json j = {{"jaccard", m.jaccard},
            {"control_rmse", optional_number(m.control_rmse)},
            {"landmark_mean_error", optional_number(m.landmark_mean_error)},
            {"landmark_rmse", optional_number(m.landmark_rmse)},
            {"landmark_max_error", optional_number(m.landmark_max_error)},
            {"extrapolated_fraction", m.extrapolated_fraction}};
  if (!m.note.empty()) j["note"] = m.note;
  return j;
}

Json stain_matrix_to_json(const StainMatrix& m) {
  Json rows = Json::array();
  for (const auto& r : m.rows()) rows.push_back(Json::array({r[0], r[1], r[2]}));
  return rows;
}

StainMatrix stain_matrix_from_json(const Json& j) {
  try {
    if (j.is_string()) return StainMatrix::preset(j.get<std::string>());
    StainMatrix::Rows rows{};
    if (j.is_array() && j.size() == 3 && j[0].is_array()) {
      for (std::size_t r = 0; r < 3; ++r) {
        const auto v = numbers(j[r], 3, "stain_matrix row");
        for (std::size_t c = 0; c < 3; ++c) rows[r][c] = v[c];
      }
    } else {
      const auto v = numbers(j, 9, "stain_matrix");
      for (std::size_t i = 0; i < 9; ++i) rows[i / 3][i % 3] = v[i];
    }
    return StainMatrix::from_rows(rows);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) throw;
    bad(std::string("stain_matrix: ") + e.what());
  }
}

PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig c) {
  Fields f(j, "config");
  f.integer("working_max_dim", c.working_max_dim);
  f.integer("lwm_neighbors", c.lwm_neighbors);
  f.integer("tile_count", c.tile_count);
  f.integer("min_points_per_tile", c.min_points_per_tile);
  if (const Json* p = f.find("preprocess")) {
    Fields pf(*p, "config.preprocess");
    pf.number("low_percentile", c.preprocess.low_percentile);
    pf.number("high_percentile", c.preprocess.high_percentile);
    if (const Json* m = pf.find("stain_matrix")) c.preprocess.stain_matrix = stain_matrix_from_json(*m);
    pf.integer("deconvolution_channel", c.preprocess.deconvolution_channel);
    if (const Json* t = pf.find("tissue_threshold_method")) {
      if (*t == "otsu") {
        c.preprocess.tissue_threshold_method = ThresholdMethod::otsu;
      } else if (*t == "fixed") {
        c.preprocess.tissue_threshold_method = ThresholdMethod::fixed;
      } else {
        bad("config.preprocess.tissue_threshold_method: expected \"otsu\" or \"fixed\"");
      }
    }
    pf.number("fixed_threshold", c.preprocess.fixed_threshold);
    pf.finish();
  }
  if (const Json* s = f.find("sift")) {
    Fields sf(*s, "config.sift");
    sf.integer("octaves", c.sift.octaves);
    sf.integer("scales_per_octave", c.sift.scales_per_octave);
    sf.number("base_sigma", c.sift.base_sigma);
    sf.number("contrast_threshold", c.sift.contrast_threshold);
    sf.number("edge_ratio_threshold", c.sift.edge_ratio_threshold);
    sf.integer("max_keypoints", c.sift.max_keypoints);
    sf.finish();
  }
  if (const Json* s = f.find("fsc")) {
    Fields ff(*s, "config.fsc");
    ff.number("loose_ratio", c.fsc.loose_ratio);
    ff.number("strict_ratio", c.fsc.strict_ratio);
    ff.number("inlier_tolerance", c.fsc.inlier_tolerance);
    ff.integer("max_iterations", c.fsc.max_iterations);
    ff.integer("min_inliers", c.fsc.min_inliers);
    ff.finish();
  }
  // Path keys belong to RunConfig; accept them here so one document serves both.
  f.find("source");
  f.find("target");
  f.find("out_dir");
  f.finish();
  c.validate();
  return c;
}

Json pipeline_config_to_json(const PipelineConfig& c) {
  return {{"working_max_dim", c.working_max_dim},
          {"lwm_neighbors", c.lwm_neighbors},
          {"tile_count", c.tile_count},
          {"min_points_per_tile", c.min_points_per_tile},
          {"preprocess",
           {{"low_percentile", c.preprocess.low_percentile},
            {"high_percentile", c.preprocess.high_percentile},
            {"stain_matrix", stain_matrix_to_json(c.preprocess.stain_matrix)},
            {"deconvolution_channel", c.preprocess.deconvolution_channel},
            {"tissue_threshold_method",
             c.preprocess.tissue_threshold_method == ThresholdMethod::otsu ? "otsu" : "fixed"},
            {"fixed_threshold", c.preprocess.fixed_threshold}}},
          {"sift",
           {{"octaves", c.sift.octaves},
            {"scales_per_octave", c.sift.scales_per_octave},
            {"base_sigma", c.sift.base_sigma},
            {"contrast_threshold", c.sift.contrast_threshold},
            {"edge_ratio_threshold", c.sift.edge_ratio_threshold},
            {"max_keypoints", c.sift.max_keypoints}}},
          {"fsc",
           {{"loose_ratio", c.fsc.loose_ratio},
            {"strict_ratio", c.fsc.strict_ratio},
            {"inlier_tolerance", c.fsc.inlier_tolerance},
            {"max_iterations", c.fsc.max_iterations},
            {"min_inliers", c.fsc.min_inliers}}}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig rc;
  rc.pipeline = pipeline_config_from_json(j);
  auto path = [&](const char* key, std::optional<std::string>& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_string()) bad(std::string("config.") + key + ": expected a string");
    out = it->get<std::string>();
  };
  path("source", rc.source);
  path("target", rc.target);
  path("out_dir", rc.out_dir);
  return rc;
}

Json synth_spec_to_json(const SynthSpec& s) {
  Json j = {{"rotation", s.rotation},
            {"scale", s.scale},
            {"translation", point_json(s.translation)},
            {"deform_amplitude", s.deform_amplitude},
            {"deform_wavelength", s.deform_wavelength},
            {"seed", s.seed}};
  j["recolor"] = s.recolor ? Json{{"from", stain_matrix_to_json(s.recolor->first)},
                                  {"to", stain_matrix_to_json(s.recolor->second)}}
                           : Json(nullptr);
  return j;
}

SynthSpec synth_spec_from_json(const Json& j) {
  Fields f(j, "synth spec");
  SynthSpec s;
  f.number("rotation", s.rotation);
  f.number("scale", s.scale);
  if (const Json* t = f.find("translation")) s.translation = point_from(*t, "translation");
  f.number("deform_amplitude", s.deform_amplitude);
  f.number("deform_wavelength", s.deform_wavelength);
  if (const Json* seed = f.find("seed")) {
    if (!seed->is_number_unsigned() && !(seed->is_number_integer() && seed->get<long long>() >= 0)) {
      bad("synth spec.seed: expected a non-negative integer");
    }
    s.seed = seed->get<std::uint64_t>();
  }
  if (const Json* r = f.find("recolor"); r != nullptr && !r->is_null()) {
    Fields rf(*r, "synth spec.recolor");
    const StainMatrix from = stain_matrix_from_json(rf.require("from"));
    const StainMatrix to = stain_matrix_from_json(rf.require("to"));
    rf.finish();
    s.recolor = std::make_pair(from, to);
  }
  f.finish();
  return s;
}

Json ground_truth_to_json(const GroundTruth& t, Size size) {
  return {{"mapping", "target_to_source"},
          {"image_size", size_json(size)},
          {"affine", affine_to_json(t.affine)},
          {"displacement",
           {{"amplitude", t.amplitude},
            {"wavelength", t.wavelength},
            {"phase_x", t.phase_x},
            {"phase_y", t.phase_y}}}};
}

GroundTruth ground_truth_from_json(const Json& j) {
  Fields f(j, "truth");
  GroundTruth t;
  f.find("mapping");
  f.find("image_size");
  f.find("spec");
  t.affine = affine_from_json(f.require("affine"));
  Fields d(f.require("displacement"), "truth.displacement");
  d.number("amplitude", t.amplitude);
  d.number("wavelength", t.wavelength);
  d.number("phase_x", t.phase_x);
  d.number("phase_y", t.phase_y);
  d.finish();
  f.finish();
  if (!(t.wavelength > 0.0)) bad("truth.displacement.wavelength must be positive");
  return t;
}

}  // namespace stainalign
