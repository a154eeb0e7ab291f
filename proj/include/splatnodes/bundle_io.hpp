#pragma once

// Versioned, line-oriented serialization. One record per line:
//   <type> key=value key=value ...
// Reals are written with 17 significant digits so round trips are
// bit-stable. Vector values pack components with ',' and keyframe lists
// with ';'. Readers reject files whose major format version differs.

#include "splatnodes/core.hpp"
#include "splatnodes/pipeline.hpp"
#include "splatnodes/scene.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace splatnodes {

namespace io {

inline std::string fmt_real(double v) { return format_real(v); }

inline std::string fmt_vec3(const Vec3& v) {
  return fmt_real(v.x()) + "," + fmt_real(v.y()) + "," + fmt_real(v.z());
}

inline std::string fmt_reals(const double* data, size_t count) {
  std::string out;
  for (size_t i = 0; i < count; ++i) {
    if (i) out += ',';
    out += fmt_real(data[i]);
  }
  return out;
}

struct Record {
  std::string type;
  std::map<std::string, std::string> fields;
  int line = -1;

  bool has(const std::string& key) const { return fields.count(key) > 0; }

  const std::string& get(const std::string& key) const {
    auto it = fields.find(key);
    if (it == fields.end())
      throw InvalidConfig("record '" + type + "' missing field '" + key + "'", line);
    return it->second;
  }

  double get_real(const std::string& key) const {
    const std::string& s = get(key);
    try {
      size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw InvalidConfig("field '" + key + "' is not a number: '" + s + "'", line);
    }
  }

  long get_int(const std::string& key) const {
    const std::string& s = get(key);
    try {
      size_t used = 0;
      const long v = std::stol(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw InvalidConfig("field '" + key + "' is not an integer: '" + s + "'", line);
    }
  }

  std::vector<double> get_reals(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        out.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw InvalidConfig("field '" + key + "' has a bad component '" + part + "'",
                            line);
      }
    }
    return out;
  }

  Vec3 get_vec3(const std::string& key) const {
    const auto v = get_reals(key);
    if (v.size() != 3)
      throw InvalidConfig("field '" + key + "' must have three components", line);
    return {v[0], v[1], v[2]};
  }
};

inline bool next_record(std::istream& in, Record& record, int& line) {
  std::string raw;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.empty()) continue;
    std::stringstream ss(raw);
    record = Record{};
    record.line = line;
    ss >> record.type;
    std::string token;
    while (ss >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos)
        throw InvalidConfig("expected key=value, got '" + token + "'", line);
      record.fields[token.substr(0, eq)] = token.substr(eq + 1);
    }
    return true;
  }
  return false;
}

// First record must be `<header_type> format_version=MAJ.MIN`.
inline void check_header(const Record& record, const std::string& header_type) {
  if (record.type != header_type)
    throw InvalidConfig("expected '" + header_type + "' header record", record.line);
  const std::string version = record.get("format_version");
  const auto dot = version.find('.');
  int major = -1;
  try {
    major = std::stoi(dot == std::string::npos ? version : version.substr(0, dot));
  } catch (const std::exception&) {
    throw InvalidConfig("bad format_version '" + version + "'", record.line);
  }
  if (major != kFormatVersionMajor)
    throw InvalidConfig("unsupported major format_version '" + version + "'",
                        record.line);
}

}  // namespace io

inline void write_bundle(std::ostream& os, const SceneBundle& bundle) {
  using io::fmt_real;
  using io::fmt_vec3;
  os << "bundle format_version=" << format_version_string() << "\n";
  os << "scene frames=" << bundle.frame_count << " patch_size=" << bundle.patch_size
     << " seed=" << bundle.seed << " token_dim=" << bundle.token_dim
     << " bbox_min=" << fmt_vec3(bundle.bbox_min)
     << " bbox_max=" << fmt_vec3(bundle.bbox_max) << "\n";

  for (int f = 0; f < bundle.frame_count; ++f) {
    const Camera& c = bundle.cameras[f];
    os << "camera frame=" << f << " fx=" << fmt_real(c.fx) << " fy=" << fmt_real(c.fy)
       << " cx=" << fmt_real(c.cx) << " cy=" << fmt_real(c.cy)
       << " width=" << c.width << " height=" << c.height
       << " r=" << io::fmt_reals(c.rotation.data(), 9)
       << " t=" << fmt_vec3(c.translation) << "\n";
  }

  for (size_t o = 0; o < bundle.objects.size(); ++o) {
    const ObjectTrack& obj = bundle.objects[o];
    os << "object id=" << o << " name=" << obj.name
       << " motion=" << motion_name(obj.motion) << " dynamic=" << (obj.dynamic ? 1 : 0)
       << " center=" << fmt_vec3(obj.center)
       << " half_extent=" << fmt_vec3(obj.half_extent) << "\n";
    for (int f = 0; f < bundle.frame_count; ++f) {
      const SE3Pose& pose = obj.poses[f];
      const UnitQuaternion q = pose.rotation.canonicalized();
      os << "objpose object=" << o << " frame=" << f << " q=" << fmt_real(q.w()) << ","
         << fmt_real(q.x()) << "," << fmt_real(q.y()) << "," << fmt_real(q.z())
         << " t=" << fmt_vec3(pose.translation) << "\n";
    }
  }

  for (size_t p = 0; p < bundle.primitives.size(); ++p) {
    const Primitive& prim = bundle.primitives[p];
    const Mat3& s = prim.covariance;
    const double cov[6] = {s(0, 0), s(0, 1), s(0, 2), s(1, 1), s(1, 2), s(2, 2)};
    os << "primitive id=" << p << " object=" << bundle.primitive_object[p]
       << " mu=" << fmt_vec3(prim.center) << " cov=" << io::fmt_reals(cov, 6)
       << " alpha=" << fmt_real(prim.opacity) << " color=" << fmt_vec3(prim.color)
       << "\n";
  }

  for (const PatchGrid& grid : bundle.patches) {
    os << "patches frame=" << grid.frame << " cols=" << grid.cols
       << " rows=" << grid.rows << " patch_size=" << grid.patch_size << "\n";
    for (int idx = 0; idx < grid.patch_count(); ++idx) {
      if (!(grid.depths[idx] > 0.0)) continue;  // invalid patches are implicit
      os << "patch frame=" << grid.frame << " index=" << idx
         << " depth=" << fmt_real(grid.depths[idx])
         << " prior=" << fmt_real(grid.priors[idx])
         << " token=" << io::fmt_reals(grid.tokens[idx].data(), grid.tokens[idx].size())
         << "\n";
    }
  }

  for (size_t t = 0; t < bundle.tracklets.size(); ++t) {
    const Tracklet& track = bundle.tracklets[t];
    os << "tracklet id=" << t << " object=" << track.object
       << " anchor=" << fmt_vec3(track.anchor) << "\n";
    for (size_t f = 0; f < track.points.size(); ++f) {
      const TrackletPoint& pt = track.points[f];
      if (!pt.visible) continue;
      os << "trackpt tracklet=" << t << " frame=" << f << " u=" << fmt_real(pt.pixel.x())
         << "," << fmt_real(pt.pixel.y()) << " depth=" << fmt_real(pt.depth) << "\n";
    }
  }
}

inline SceneBundle read_bundle(std::istream& in) {
  io::Record record;
  int line = 0;
  if (!io::next_record(in, record, line))
    throw InvalidConfig("empty bundle file");
  io::check_header(record, "bundle");

  SceneBundle bundle;
  bool saw_scene = false;
  while (io::next_record(in, record, line)) {
    if (record.type == "scene") {
      bundle.frame_count = static_cast<int>(record.get_int("frames"));
      bundle.patch_size = static_cast<int>(record.get_int("patch_size"));
      bundle.seed = static_cast<uint64_t>(record.get_int("seed"));
      bundle.token_dim = static_cast<int>(record.get_int("token_dim"));
      bundle.bbox_min = record.get_vec3("bbox_min");
      bundle.bbox_max = record.get_vec3("bbox_max");
      bundle.cameras.resize(bundle.frame_count);
      saw_scene = true;
    } else if (record.type == "camera") {
      const int f = static_cast<int>(record.get_int("frame"));
      if (!saw_scene || f < 0 || f >= bundle.frame_count)
        throw InvalidConfig("camera record out of order", record.line);
      Camera& c = bundle.cameras[f];
      c.fx = record.get_real("fx");
      c.fy = record.get_real("fy");
      c.cx = record.get_real("cx");
      c.cy = record.get_real("cy");
      c.width = static_cast<int>(record.get_int("width"));
      c.height = static_cast<int>(record.get_int("height"));
      const auto r = record.get_reals("r");
      if (r.size() != 9)
        throw InvalidConfig("camera rotation needs nine entries", record.line);
      for (int i = 0; i < 9; ++i) c.rotation.data()[i] = r[i];
      c.translation = record.get_vec3("t");
    } else if (record.type == "object") {
      ObjectTrack obj;
      obj.name = record.get("name");
      obj.motion = parse_motion(record.get("motion"), record.line);
      obj.dynamic = record.get_int("dynamic") != 0;
      obj.center = record.get_vec3("center");
      obj.half_extent = record.get_vec3("half_extent");
      obj.poses.resize(bundle.frame_count);
      bundle.objects.push_back(std::move(obj));
    } else if (record.type == "objpose") {
      const size_t o = static_cast<size_t>(record.get_int("object"));
      const int f = static_cast<int>(record.get_int("frame"));
      if (o >= bundle.objects.size() || f < 0 || f >= bundle.frame_count)
        throw InvalidConfig("objpose record out of order", record.line);
      const auto q = record.get_reals("q");
      if (q.size() != 4) throw InvalidConfig("objpose q needs four entries", record.line);
      bundle.objects[o].poses[f] =
          SE3Pose(UnitQuaternion(q[0], q[1], q[2], q[3]), record.get_vec3("t"));
    } else if (record.type == "primitive") {
      Primitive prim;
      prim.center = record.get_vec3("mu");
      const auto cov = record.get_reals("cov");
      if (cov.size() != 6)
        throw InvalidConfig("primitive cov needs six entries", record.line);
      prim.covariance << cov[0], cov[1], cov[2], cov[1], cov[3], cov[4], cov[2], cov[4],
          cov[5];
      prim.opacity = record.get_real("alpha");
      prim.color = record.get_vec3("color");
      bundle.primitives.push_back(prim);
      bundle.primitive_object.push_back(static_cast<int>(record.get_int("object")));
    } else if (record.type == "patches") {
      PatchGrid grid;
      grid.frame = static_cast<int>(record.get_int("frame"));
      grid.cols = static_cast<int>(record.get_int("cols"));
      grid.rows = static_cast<int>(record.get_int("rows"));
      grid.patch_size = static_cast<int>(record.get_int("patch_size"));
      grid.tokens.assign(grid.patch_count(), Eigen::VectorXd::Zero(bundle.token_dim));
      grid.depths.assign(grid.patch_count(), 0.0);
      grid.priors.assign(grid.patch_count(), 0.0);
      bundle.patches.push_back(std::move(grid));
    } else if (record.type == "patch") {
      if (bundle.patches.empty())
        throw InvalidConfig("patch record before any patches record", record.line);
      PatchGrid& grid = bundle.patches.back();
      if (static_cast<int>(record.get_int("frame")) != grid.frame)
        throw InvalidConfig("patch frame does not match open grid", record.line);
      const int idx = static_cast<int>(record.get_int("index"));
      if (idx < 0 || idx >= grid.patch_count())
        throw InvalidConfig("patch index out of range", record.line);
      grid.depths[idx] = record.get_real("depth");
      grid.priors[idx] = record.get_real("prior");
      const auto token = record.get_reals("token");
      if (static_cast<int>(token.size()) != bundle.token_dim)
        throw InvalidConfig("patch token dimension mismatch", record.line);
      grid.tokens[idx] = Eigen::Map<const Eigen::VectorXd>(token.data(), token.size());
    } else if (record.type == "tracklet") {
      Tracklet track;
      track.object = static_cast<int>(record.get_int("object"));
      track.anchor = record.get_vec3("anchor");
      track.points.assign(bundle.frame_count, TrackletPoint{});
      bundle.tracklets.push_back(std::move(track));
    } else if (record.type == "trackpt") {
      const size_t t = static_cast<size_t>(record.get_int("tracklet"));
      const int f = static_cast<int>(record.get_int("frame"));
      if (t >= bundle.tracklets.size() || f < 0 || f >= bundle.frame_count)
        throw InvalidConfig("trackpt record out of order", record.line);
      TrackletPoint& pt = bundle.tracklets[t].points[f];
      const auto u = record.get_reals("u");
      if (u.size() != 2) throw InvalidConfig("trackpt u needs two entries", record.line);
      pt.pixel = Vec2(u[0], u[1]);
      pt.depth = record.get_real("depth");
      pt.visible = true;
    } else {
      throw InvalidConfig("unknown record type '" + record.type + "'", record.line);
    }
  }
  if (!saw_scene) throw InvalidConfig("bundle missing scene record");
  bundle.validate();
  return bundle;
}

inline void write_nodes(std::ostream& os, const NodeSet& set) {
  using io::fmt_real;
  using io::fmt_vec3;
  set.validate();
  os << "nodes format_version=" << format_version_string() << "\n";
  os << "keyframes times="
     << io::fmt_reals(set.keyframe_times.data(), set.keyframe_times.size()) << "\n";
  for (size_t n = 0; n < set.size(); ++n) {
    const Node& node = set.nodes[n];
    os << "node id=" << n << " center=" << fmt_vec3(node.center)
       << " radius=" << fmt_real(node.radius) << " source_frame=" << set.source_frame[n]
       << " merged_count=" << set.merged_count[n] << " positions=";
    const auto& positions = node.trajectory.positions();
    for (size_t k = 0; k < positions.size(); ++k) {
      if (k) os << ';';
      os << fmt_vec3(positions[k]);
    }
    os << " rotations=";
    const auto& rotations = node.trajectory.rotations();
    for (size_t k = 0; k < rotations.size(); ++k) {
      const UnitQuaternion q = rotations[k].canonicalized();
      if (k) os << ';';
      os << fmt_real(q.w()) << ',' << fmt_real(q.x()) << ',' << fmt_real(q.y()) << ','
         << fmt_real(q.z());
    }
    os << "\n";
  }
}

namespace io {

inline std::vector<std::vector<double>> split_groups(const std::string& value,
                                                     int line) {
  std::vector<std::vector<double>> groups;
  std::stringstream ss(value);
  std::string group;
  while (std::getline(ss, group, ';')) {
    std::vector<double> parts;
    std::stringstream gs(group);
    std::string part;
    while (std::getline(gs, part, ',')) {
      try {
        parts.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw InvalidConfig("bad numeric component '" + part + "'", line);
      }
    }
    groups.push_back(std::move(parts));
  }
  return groups;
}

}  // namespace io

inline NodeSet read_nodes(std::istream& in) {
  io::Record record;
  int line = 0;
  if (!io::next_record(in, record, line)) throw InvalidConfig("empty node file");
  io::check_header(record, "nodes");

  NodeSet set;
  bool saw_keyframes = false;
  while (io::next_record(in, record, line)) {
    if (record.type == "keyframes") {
      set.keyframe_times = record.get_reals("times");
      saw_keyframes = true;
    } else if (record.type == "node") {
      if (!saw_keyframes)
        throw InvalidConfig("node record before keyframes record", record.line);
      const Vec3 center = record.get_vec3("center");
      const double radius = record.get_real("radius");
      const auto position_groups = io::split_groups(record.get("positions"), record.line);
      const auto rotation_groups = io::split_groups(record.get("rotations"), record.line);
      if (position_groups.size() != set.keyframe_times.size() ||
          rotation_groups.size() != set.keyframe_times.size())
        throw InvalidConfig("node keyframe data does not match the time grid",
                            record.line);
      std::vector<Vec3> positions;
      for (const auto& g : position_groups) {
        if (g.size() != 3)
          throw InvalidConfig("node position needs three components", record.line);
        positions.emplace_back(g[0], g[1], g[2]);
      }
      std::vector<UnitQuaternion> rotations;
      for (const auto& g : rotation_groups) {
        if (g.size() != 4)
          throw InvalidConfig("node rotation needs four components", record.line);
        rotations.emplace_back(g[0], g[1], g[2], g[3]);
      }
      auto tangents = catmull_rom_tangents(set.keyframe_times, positions);
      set.nodes.emplace_back(center, radius,
                             SplineTrajectory(set.keyframe_times, std::move(positions),
                                              std::move(tangents), std::move(rotations)));
      set.source_frame.push_back(static_cast<int>(record.get_int("source_frame")));
      set.merged_count.push_back(record.get_int("merged_count"));
    } else {
      throw InvalidConfig("unknown record type '" + record.type + "'", record.line);
    }
  }
  set.validate();
  return set;
}

inline nlohmann::json metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["format_version"] = format_version_string();
  j["deformed_rmse_m"] = report.deformed_rmse;
  j["node_rmse_m"] =
      report.node_rmse ? nlohmann::json(*report.node_rmse) : nlohmann::json(nullptr);
  j["density_ratio"] = report.density_ratio ? nlohmann::json(*report.density_ratio)
                                            : nlohmann::json(nullptr);
  j["node_count"] = report.node_count;
  j["bbox_diagonal_m"] = report.bbox_diagonal;
  return j;
}

// File helpers.

inline void save_bundle(const std::string& path, const SceneBundle& bundle) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidConfig("cannot write bundle file '" + path + "'");
  write_bundle(os, bundle);
}

inline SceneBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidConfig("cannot open bundle file '" + path + "'");
  try {
    return read_bundle(in);
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
}

inline void save_nodes(const std::string& path, const NodeSet& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidConfig("cannot write node file '" + path + "'");
  write_nodes(os, set);
}

inline NodeSet load_nodes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidConfig("cannot open node file '" + path + "'");
  try {
    return read_nodes(in);
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
}

inline void save_metrics(const std::string& path, const MetricsReport& report) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidConfig("cannot write metrics file '" + path + "'");
  os << metrics_to_json(report).dump(2) << "\n";
}

}  // namespace splatnodes
