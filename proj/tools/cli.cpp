#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>

#include "stainalign/error.hpp"
#include "stainalign/evalkit.hpp"
#include "stainalign/features.hpp"
#include "stainalign/image_io.hpp"
#include "stainalign/kernels.hpp"
#include "stainalign/pipeline.hpp"
#include "stainalign/serialize.hpp"

namespace stainalign::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::io, "cannot create directory " + dir.string());
}

// Little-endian float32 bytes, standard alphabet with padding.
std::string base64_floats(std::span<const float> values) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::vector<unsigned char> bytes;
  bytes.reserve(values.size() * 4);
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<unsigned char>(bits >> (8 * k)));
  }
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::size_t n = std::min<std::size_t>(3, bytes.size() - i);
    std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (n > 1) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (n > 2) chunk |= bytes[i + 2];
    out += kAlphabet[(chunk >> 18) & 63];
    out += kAlphabet[(chunk >> 12) & 63];
    out += n > 1 ? kAlphabet[(chunk >> 6) & 63] : '=';
    out += n > 2 ? kAlphabet[chunk & 63] : '=';
  }
  return out;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::prealignment_failed:
    case ErrorCode::refinement_failed:
      return kRegistrationFailed;
    case ErrorCode::shape:
      return kShapeError;
    default:
      return kInputError;
  }
}

PipelineConfig load_config(const std::string& path, std::optional<int> max_dim) {
  PipelineConfig cfg;
  if (!path.empty()) cfg = run_config_from_json(parse_json(read_text(path), path)).pipeline;
  if (max_dim) {
    cfg.working_max_dim = *max_dim;
    cfg.validate();
  }
  return cfg;
}

// Brings a mask given at native resolution down to the working grid.
BinaryMask to_working_mask(const BinaryMask& m, Size working, double factor) {
  if (m.size() == working) return m;
  const auto expected = [&](int n) { return static_cast<int>(std::ceil(n / factor)); };
  if (factor > 1.0 && expected(m.width()) == working.width && expected(m.height()) == working.height) {
    BinaryMask out(working.width, working.height);
    for (int y = 0; y < working.height; ++y) {
      const int sy = std::clamp(static_cast<int>(std::lround(downscale_source_coord(y, factor))), 0, m.height() - 1);
      for (int x = 0; x < working.width; ++x) {
        const int sx = std::clamp(static_cast<int>(std::lround(downscale_source_coord(x, factor))), 0, m.width() - 1);
        out.set(x, y, m.at(sx, sy));
      }
    }
    return out;
  }
  throw Error(ErrorCode::shape, "mask is " + std::to_string(m.width()) + "x" +
                                    std::to_string(m.height()) + ", transform expects " +
                                    std::to_string(working.width) + "x" +
                                    std::to_string(working.height));
}

int cmd_register(const std::string& source_path, const std::string& target_path,
                 const std::string& config_path, const std::string& out_dir,
                 std::optional<int> max_dim, std::uint64_t seed, std::ostream& out) {
  PipelineConfig cfg = load_config(config_path, max_dim);
  const Raster source = load_image(source_path);
  const Raster target = load_image(target_path);
  ensure_dir(out_dir);

  Json record = {{"config", pipeline_config_to_json(cfg)},
                 {"seed", seed},
                 {"inputs", {{"source", source_path}, {"target", target_path}}}};
  try {
    const RegistrationResult r = register_images(source, target, cfg);
    save_image(fs::path(out_dir) / "warped.png", r.warped);
    write_json(fs::path(out_dir) / "transform.json", transform_to_json(r.transform));
    record["diagnostics"] = diagnostics_to_json(r.diagnostics);
    write_json(fs::path(out_dir) / "diagnostics.json", record);
    out << (r.diagnostics.degraded ? "registered (affine only): " : "registered: ")
        << r.transform.lwm_forward_pairs.size() << " control pairs, "
        << r.diagnostics.affine_inliers << " affine inliers\n";
    return kOk;
  } catch (const PipelineError& e) {
    record["diagnostics"] = diagnostics_to_json(e.diagnostics());
    record["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    write_json(fs::path(out_dir) / "diagnostics.json", record);
    throw;
  }
}

int cmd_eval(const std::string& transform_path, const std::string& source_mask_path,
             const std::string& target_mask_path, const std::string& landmarks_path,
             const std::string& truth_path, const std::string& pair_id, bool csv,
             std::ostream& out) {
  const RegistrationTransform t = transform_from_json(parse_json(read_text(transform_path), transform_path));
  const double f = t.scale_factor;
  const BinaryMask sm = to_working_mask(load_mask(source_mask_path), t.source_size, f);
  const BinaryMask tm = to_working_mask(load_mask(target_mask_path), t.target_size, f);

  EvaluationInputs extra;
  if (!truth_path.empty()) {
    const GroundTruth truth = ground_truth_from_json(parse_json(read_text(truth_path), truth_path));
    extra.truth = [truth, f](Point2 p) { return to_working(truth.map(to_native(p, f)), f); };
  }
  if (!landmarks_path.empty()) {
    for (auto c : parse_landmarks_csv(read_text(landmarks_path))) {
      c.source = to_working(c.source, f);
      c.target = to_working(c.target, f);
      extra.landmarks.push_back(c);
    }
  }
  const Metrics m = evaluate(t, sm, tm, extra);
  if (csv) {
    out << metrics_csv_header() << "\n" << metrics_csv_row(pair_id, m) << "\n";
  } else {
    out << metrics_to_json(m).dump(2) << "\n";
  }
  return kOk;
}

int cmd_synth(const std::string& base_path, int phantom_size, const std::string& spec_path,
              std::optional<std::uint64_t> seed, const std::string& out_dir, std::ostream& out) {
  SynthSpec spec;
  if (!spec_path.empty()) spec = synth_spec_from_json(parse_json(read_text(spec_path), spec_path));
  if (seed) spec.seed = *seed;
  spec.validate();
  if (base_path.empty() == (phantom_size <= 0)) {
    throw Error(ErrorCode::invalid_argument, "synth needs exactly one of --base or --phantom");
  }
  const Raster base = base_path.empty() ? make_tissue_phantom(phantom_size, spec.seed) : load_image(base_path);
  const SynthPair pair = synth_pair(base, spec);
  ensure_dir(out_dir);
  const fs::path dir(out_dir);
  save_image(dir / "source.png", pair.source);
  save_image(dir / "target.png", pair.target);
  Json truth = ground_truth_to_json(pair.truth, base.size());
  truth["spec"] = synth_spec_to_json(spec);
  write_json(dir / "truth.json", truth);
  const PreprocessConfig pcfg;
  save_mask(dir / "source_mask.png", tissue_mask(pair.source, pcfg));
  save_mask(dir / "target_mask.png", tissue_mask(pair.target, pcfg));
  out << "wrote synthetic pair to " << out_dir << "\n";
  return kOk;
}

int cmd_features(const std::string& image_path, const std::string& config_path,
                 std::optional<int> max_dim, bool descriptors, const std::string& out_path,
                 std::ostream& out) {
  const PipelineConfig cfg = load_config(config_path, max_dim);
  const Raster img = load_image(image_path);
  const double f = working_scale(img.size(), img.size(), cfg.working_max_dim);
  const FeatureSet fs = detect_and_describe(feature_channel(downscale(img, f), cfg.preprocess), cfg.sift);

  std::ostringstream lines;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto& k = fs.keypoints[i];
    const Point2 p = to_native({k.x, k.y}, f);
    Json j = {{"x", p.x},         {"y", p.y},           {"scale", k.scale * f},
              {"orientation", k.orientation}, {"response", k.response}, {"octave", k.octave}};
    if (descriptors) {
      const auto d = fs.descriptor(i);
      j["descriptor"] = base64_floats(d);
    }
    lines << j.dump() << "\n";
  }
  if (out_path.empty()) {
    out << lines.str();
  } else {
    write_text(out_path, lines.str());
  }
  return kOk;
}

int cmd_overlay(const std::string& a_path, const std::string& b_path, const std::string& out_path) {
  const Raster a = load_image(a_path);
  const Raster b = load_image(b_path);
  if (a.size() != b.size()) {
    throw Error(ErrorCode::shape, "overlay inputs differ in size");
  }
  auto gray = [](const Raster& r) {
    return r.channels() == 1 ? channel_as_float(r, 0) : to_grayscale(r);
  };
  const FloatRaster ga = gray(a);
  const FloatRaster gb = gray(b);
  Raster o(a.width(), a.height(), 3);
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      const auto va = kernels::detail::to_u8(ga.at(x, y));
      const auto vb = kernels::detail::to_u8(gb.at(x, y));
      o.at(x, y, 0) = va;
      o.at(x, y, 1) = vb;
      o.at(x, y, 2) = va;
    }
  }
  save_image(out_path, o);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (const char* env = std::getenv("STAINALIGN_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) {
      err << "error: STAINALIGN_THREADS must be a positive integer\n";
      return kInputError;
    }
    kernels::set_max_threads(static_cast<int>(n));
  }

  CLI::App app{"Cross-stain registration of histology images", "stainalign"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::optional<int> max_dim;

  auto* reg = app.add_subcommand("register", "Register SOURCE onto TARGET");
  std::string source_path;
  std::string target_path;
  reg->add_option("source", source_path, "Source image (PNG or TIFF)")->required();
  reg->add_option("target", target_path, "Target image (PNG or TIFF)")->required();
  reg->add_option("--config", config_path, "JSON configuration");
  reg->add_option("--out", out_dir, "Output directory")->required();
  reg->add_option("--seed", seed, "Recorded with the run; the pipeline itself is deterministic");
  reg->add_option("--max-dim", max_dim, "Working resolution bound in pixels");

  auto* ev = app.add_subcommand("eval", "Score a transform with tissue masks");
  std::string transform_path;
  std::string source_mask_path;
  std::string target_mask_path;
  std::string landmarks_path;
  std::string truth_path;
  std::string pair_id = "pair";
  bool csv = false;
  ev->add_option("transform", transform_path, "transform.json from register")->required();
  ev->add_option("source_mask", source_mask_path, "Source tissue mask")->required();
  ev->add_option("target_mask", target_mask_path, "Target tissue mask")->required();
  ev->add_option("--landmarks", landmarks_path, "CSV of x_src,y_src,x_tgt,y_tgt");
  ev->add_option("--truth", truth_path, "truth.json from synth");
  ev->add_option("--pair-id", pair_id, "Identifier for the CSV row");
  ev->add_flag("--csv", csv, "Print a CSV row instead of JSON");

  auto* sy = app.add_subcommand("synth", "Generate a synthetic pair with known ground truth");
  std::string base_path;
  int phantom_size = 0;
  std::string spec_path;
  std::optional<std::uint64_t> synth_seed;
  sy->add_option("--base", base_path, "Base image used as the target");
  sy->add_option("--phantom", phantom_size, "Use a generated tissue phantom of this size");
  sy->add_option("--spec", spec_path, "JSON synth spec");
  sy->add_option("--seed", synth_seed, "Overrides the spec seed");
  sy->add_option("--out", out_dir, "Output directory")->required();

  auto* fe = app.add_subcommand("features", "Print keypoints as JSON lines");
  std::string image_path;
  bool with_descriptors = false;
  std::string features_out;
  fe->add_option("image", image_path, "Input image")->required();
  fe->add_option("--config", config_path, "JSON configuration");
  fe->add_option("--max-dim", max_dim, "Working resolution bound in pixels");
  fe->add_flag("--descriptors", with_descriptors, "Include descriptors (base64 of 128 little-endian float32)");
  fe->add_option("--out", features_out, "Write to a file instead of standard output");

  auto* ov = app.add_subcommand("overlay", "False-colour overlay: A in magenta, B in green");
  std::string a_path;
  std::string b_path;
  std::string overlay_out;
  ov->add_option("a", a_path, "First image")->required();
  ov->add_option("b", b_path, "Second image")->required();
  ov->add_option("--out", overlay_out, "Output PNG")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (reg->parsed()) return cmd_register(source_path, target_path, config_path, out_dir, max_dim, seed, out);
    if (ev->parsed()) {
      return cmd_eval(transform_path, source_mask_path, target_mask_path, landmarks_path, truth_path,
                      pair_id, csv, out);
    }
    if (sy->parsed()) return cmd_synth(base_path, phantom_size, spec_path, synth_seed, out_dir, out);
    if (fe->parsed()) return cmd_features(image_path, config_path, max_dim, with_descriptors, features_out, out);
    if (ov->parsed()) return cmd_overlay(a_path, b_path, overlay_out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kInputError;
}

}  // namespace stainalign::cli
