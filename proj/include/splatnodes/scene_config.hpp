#pragma once

// Scene configuration: INI-style key-value file with one [scene] section,
// one [camera] section, and one [object] section per object. Unknown keys
// and malformed values raise InvalidConfig with the offending line number.

#include "splatnodes/core.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

namespace splatnodes {

enum class MotionType { Static, Translation, Rotation, Screw };

inline std::string motion_name(MotionType m) {
  switch (m) {
    case MotionType::Static: return "static";
    case MotionType::Translation: return "rigid-translation";
    case MotionType::Rotation: return "rigid-rotation";
    case MotionType::Screw: return "screw";
  }
  return "static";
}

inline MotionType parse_motion(const std::string& name, int line) {
  if (name == "static") return MotionType::Static;
  if (name == "rigid-translation") return MotionType::Translation;
  if (name == "rigid-rotation") return MotionType::Rotation;
  if (name == "screw") return MotionType::Screw;
  throw InvalidConfig("unknown motion type '" + name + "'", line);
}

struct ObjectConfig {
  std::string name = "object";
  MotionType motion = MotionType::Static;
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Ones();
  int primitive_count = 100;
  Vec3 velocity = Vec3::Zero();   // rigid-translation, meters per frame
  Vec3 axis = Vec3::UnitZ();      // rotation/screw axis
  double rate = 0.0;              // radians per frame
  double pitch = 0.0;             // screw advance, meters per radian
};

struct SceneConfig {
  int frames = 24;
  uint64_t seed = 1;
  bool has_seed = false;
  int patch_size = 16;
  int candidate_keyframes = 8;
  int tracklets_per_object = 24;
  int token_dim = 32;
  double noise_tracklet_px = 0.0;
  double noise_depth = 0.0;
  double token_noise_static = 0.015;
  double token_noise_motion = 1.0;  // extra sigma per meter-per-frame of motion
  double prior_static = 0.05;
  double prior_dynamic = 0.95;
  double prior_noise = 0.02;

  double fx = 120.0, fy = 120.0, cx = 80.0, cy = 80.0;
  int width = 160, height = 160;
  Vec3 camera_position = Vec3::Zero();

  std::vector<ObjectConfig> objects;

  void validate() const {
    if (frames < 2) throw InvalidConfig("frames must be >= 2");
    if (patch_size < 1) throw InvalidConfig("patch_size must be >= 1");
    if (candidate_keyframes < 1 || candidate_keyframes > frames)
      throw InvalidConfig("candidate_keyframes must lie in [1, frames]");
    if (tracklets_per_object < 0)
      throw InvalidConfig("tracklets_per_object must be >= 0");
    if (token_dim < 2) throw InvalidConfig("token_dim must be >= 2");
    if (noise_tracklet_px < 0 || noise_depth < 0 || token_noise_static < 0 ||
        token_noise_motion < 0 || prior_noise < 0)
      throw InvalidConfig("noise levels must be nonnegative");
    if (!(fx > 0 && fy > 0) || width < 1 || height < 1)
      throw InvalidConfig("camera intrinsics invalid");
    if (objects.empty()) throw InvalidConfig("at least one [object] required");
    for (const auto& o : objects) {
      if (o.primitive_count < 1)
        throw InvalidConfig("object '" + o.name + "': primitives must be >= 1");
      if (!(o.half_extent.minCoeff() > 0.0))
        throw InvalidConfig("object '" + o.name + "': half_extent must be > 0");
      if ((o.motion == MotionType::Rotation || o.motion == MotionType::Screw) &&
          o.axis.norm() < 1e-9)
        throw InvalidConfig("object '" + o.name + "': axis must be nonzero");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline double parse_real(const std::string& value, int line) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InvalidConfig("expected a number, got '" + value + "'", line);
  }
}

inline int parse_int(const std::string& value, int line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw InvalidConfig("expected an integer, got '" + value + "'", line);
  return v;
}

inline uint64_t parse_u64(const std::string& value, int line) {
  uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw InvalidConfig("expected an unsigned integer, got '" + value + "'", line);
  return v;
}

inline Vec3 parse_vec3(const std::string& value, int line) {
  std::stringstream ss(value);
  std::string part;
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, part, ','))
      throw InvalidConfig("expected x,y,z triple, got '" + value + "'", line);
    v[i] = parse_real(trim(part), line);
  }
  if (std::getline(ss, part, ','))
    throw InvalidConfig("expected exactly three components in '" + value + "'", line);
  return v;
}

}  // namespace detail

inline SceneConfig parse_scene_config(std::istream& in) {
  SceneConfig cfg;
  std::string section;
  ObjectConfig* object = nullptr;
  std::string raw;
  int line = 0;
  bool saw_version = false;

  while (std::getline(in, raw)) {
    ++line;
    std::string text = raw;
    if (const auto hash = text.find('#'); hash != std::string::npos)
      text.resize(hash);
    text = detail::trim(text);
    if (text.empty()) continue;

    if (text.front() == '[') {
      if (text.back() != ']') throw InvalidConfig("unterminated section header", line);
      section = detail::trim(text.substr(1, text.size() - 2));
      if (section == "object") {
        cfg.objects.emplace_back();
        object = &cfg.objects.back();
      } else if (section != "scene" && section != "camera") {
        throw InvalidConfig("unknown section [" + section + "]", line);
      }
      continue;
    }

    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("expected 'key = value'", line);
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (key.empty() || value.empty())
      throw InvalidConfig("empty key or value", line);

    using namespace detail;
    if (section.empty()) {
      if (key == "format_version") {
        const auto dot = value.find('.');
        const int major = parse_int(dot == std::string::npos ? value : value.substr(0, dot), line);
        if (major != kFormatVersionMajor)
          throw InvalidConfig("unsupported format_version '" + value + "'", line);
        saw_version = true;
      } else {
        throw InvalidConfig("key '" + key + "' outside any section", line);
      }
    } else if (section == "scene") {
      if (key == "frames") cfg.frames = parse_int(value, line);
      else if (key == "seed") { cfg.seed = parse_u64(value, line); cfg.has_seed = true; }
      else if (key == "patch_size") cfg.patch_size = parse_int(value, line);
      else if (key == "candidate_keyframes") cfg.candidate_keyframes = parse_int(value, line);
      else if (key == "tracklets_per_object") cfg.tracklets_per_object = parse_int(value, line);
      else if (key == "token_dim") cfg.token_dim = parse_int(value, line);
      else if (key == "noise_tracklet_px") cfg.noise_tracklet_px = parse_real(value, line);
      else if (key == "noise_depth") cfg.noise_depth = parse_real(value, line);
      else if (key == "token_noise_static") cfg.token_noise_static = parse_real(value, line);
      else if (key == "token_noise_motion") cfg.token_noise_motion = parse_real(value, line);
      else if (key == "prior_static") cfg.prior_static = parse_real(value, line);
      else if (key == "prior_dynamic") cfg.prior_dynamic = parse_real(value, line);
      else if (key == "prior_noise") cfg.prior_noise = parse_real(value, line);
      else throw InvalidConfig("unknown [scene] key '" + key + "'", line);
    } else if (section == "camera") {
      if (key == "fx") cfg.fx = parse_real(value, line);
      else if (key == "fy") cfg.fy = parse_real(value, line);
      else if (key == "cx") cfg.cx = parse_real(value, line);
      else if (key == "cy") cfg.cy = parse_real(value, line);
      else if (key == "width") cfg.width = parse_int(value, line);
      else if (key == "height") cfg.height = parse_int(value, line);
      else if (key == "position") cfg.camera_position = parse_vec3(value, line);
      else throw InvalidConfig("unknown [camera] key '" + key + "'", line);
    } else {  // [object]
      if (key == "name") object->name = value;
      else if (key == "motion") object->motion = parse_motion(value, line);
      else if (key == "center") object->center = parse_vec3(value, line);
      else if (key == "half_extent") object->half_extent = parse_vec3(value, line);
      else if (key == "primitives") object->primitive_count = parse_int(value, line);
      else if (key == "velocity") object->velocity = parse_vec3(value, line);
      else if (key == "axis") object->axis = parse_vec3(value, line);
      else if (key == "rate") object->rate = parse_real(value, line);
      else if (key == "pitch") object->pitch = parse_real(value, line);
      else throw InvalidConfig("unknown [object] key '" + key + "'", line);
    }
  }
  if (!saw_version) throw InvalidConfig("missing format_version");
  cfg.validate();
  return cfg;
}

inline SceneConfig load_scene_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open scene config '" + path + "'");
  try {
    return parse_scene_config(in);
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
}

}  // namespace splatnodes
