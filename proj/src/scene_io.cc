#include "imloc/scene_io.h"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_map>

#include "file_util.h"
#include "imloc/errors.h"
#include "imloc/image_codec.h"
#include "imloc/random.h"
#include "imloc/retrieval.h"
#include "json_util.h"

namespace imloc {
namespace {

namespace fs = std::filesystem;
using internal::json;

constexpr int kExportFormatVersion = 1;

std::vector<float> HalfRounded(const std::vector<float>& d) {
  std::vector<float> out(d.size());
  std::transform(d.begin(), d.end(), out.begin(), RoundToHalf);
  return out;
}

DescriptorIndex DatabaseIndex(const Scene& scene) {
  DescriptorIndex index(scene.spec.descriptor_dim);
  for (int v = 0; v < scene.num_database(); ++v) index.Add(scene.views[v].id, HalfRounded(scene.descriptors[v]));
  return index;
}

int ViewIndex(const Scene& scene, const std::string& id) {
  for (size_t v = 0; v < scene.views.size(); ++v) {
    if (scene.views[v].id == id) return static_cast<int>(v);
  }
  return -1;
}

}  // namespace

CorrespondenceField SceneField(const Scene& scene, int view_a, int view_b, const SceneFieldOptions& options) {
  CorrespondenceField field = OracleField(scene, view_a, view_b);
  const SceneView& a = scene.views[view_a];
  const SceneView& b = scene.views[view_b];
  const bool query = a.is_query || b.is_query;
  if (query ? !options.corrupt_queries : !options.corrupt_map) return field;
  NoiseSpec noise = query ? options.query_noise : options.map_noise;
  noise.target_width = b.intrinsics.width;
  noise.target_height = b.intrinsics.height;
  return Corrupt(field, noise, DeriveSeed(options.seed, "field/" + a.id + "__" + b.id));
}

FieldLoader SceneFieldLoader(const Scene& scene, const SceneFieldOptions& options) {
  std::unordered_map<std::string, int> ids;
  for (size_t v = 0; v < scene.views.size(); ++v) ids.emplace(scene.views[v].id, static_cast<int>(v));
  return [&scene, options, ids](const std::string& source, const std::string& target) {
    const auto a = ids.find(source), b = ids.find(target);
    if (a == ids.end() || b == ids.end()) throw IoError(source + "__" + target, "unknown view in field request");
    return SceneField(scene, a->second, b->second, options);
  };
}

std::vector<MapInput> SceneMapInputs(const Scene& scene) {
  std::vector<MapInput> out;
  for (int v = 0; v < scene.num_database(); ++v) {
    const SceneView& view = scene.views[v];
    out.push_back({view.id, view.pose, view.intrinsics, EncodePng(RenderRgb(scene, v)),
                   HalfRounded(scene.descriptors[v])});
  }
  return out;
}

QueryJob SceneQuery(const Scene& scene, int query) {
  const int v = scene.num_database() + query;
  return {scene.views[v].id, scene.views[v].intrinsics, HalfRounded(scene.descriptors[v])};
}

std::vector<std::pair<int, int>> MappingPairs(const Scene& scene, int k_map) {
  const DescriptorIndex index = DatabaseIndex(scene);
  std::vector<std::pair<int, int>> out;
  for (int v = 0; v < scene.num_database(); ++v) {
    for (const std::string& id : SelectCovisible(index, scene.views[v].id, k_map)) {
      out.emplace_back(v, ViewIndex(scene, id));
    }
  }
  return out;
}

std::vector<std::pair<int, int>> LocalizationPairs(const Scene& scene, int k_loc) {
  std::vector<std::pair<int, int>> out;
  if (k_loc <= 0 || scene.num_database() == 0) return out;
  const DescriptorIndex index = DatabaseIndex(scene);
  for (int q = 0; q < scene.num_queries(); ++q) {
    const int v = scene.num_database() + q;
    for (const RetrievalHit& hit : index.TopK(HalfRounded(scene.descriptors[v]), k_loc)) {
      const int db = ViewIndex(scene, hit.id);
      out.emplace_back(db, v);
      out.emplace_back(v, db);
    }
  }
  return out;
}

void WritePoses(const fs::path& path, const std::vector<NamedPose>& poses) {
  std::string text;
  char buf[512];
  for (const NamedPose& p : poses) {
    const Eigen::Quaterniond& q = p.pose.rotation;
    const Eigen::Vector3d& t = p.pose.translation;
    std::snprintf(buf, sizeof(buf), " %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", q.w(), q.x(), q.y(), q.z(),
                  t.x(), t.y(), t.z());
    text += p.name + buf;
  }
  internal::WriteFileText(path, text, path.filename().string());
}

std::vector<NamedPose> ReadPoses(const fs::path& path) {
  const std::string file = path.filename().string();
  const std::vector<uint8_t> bytes = internal::ReadFileBytes(path, file);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<NamedPose> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    NamedPose p;
    double w, x, y, z, tx, ty, tz;
    std::string rest;
    if (!(ls >> p.name >> w >> x >> y >> z >> tx >> ty >> tz) || (ls >> rest)) {
      throw IoError(file + ":" + std::to_string(n), "expected '<name> qw qx qy qz tx ty tz'");
    }
    const Eigen::Quaterniond q(w, x, y, z);
    if (!(std::abs(q.norm() - 1.0) < 1e-6)) throw IoError(file + ":" + std::to_string(n), "quaternion is not unit");
    p.pose = Pose(q, Eigen::Vector3d(tx, ty, tz));
    out.push_back(std::move(p));
  }
  return out;
}

void ExportScene(const Scene& scene, const ExportOptions& options, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  fs::remove_all(dir / "fields", ec);
  fs::remove_all(dir / "images", ec);
  fs::create_directories(dir / "fields", ec);
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError(dir.string(), "cannot create export directory: " + ec.message());

  json views = json::array();
  std::vector<std::vector<float>> descriptors;
  std::vector<NamedPose> gt;
  for (size_t v = 0; v < scene.views.size(); ++v) {
    const SceneView& view = scene.views[v];
    json j = {{"id", view.id},
              {"role", view.is_query ? "query" : "database"},
              {"intrinsics", internal::IntrinsicsJson(view.intrinsics)},
              {"image", "images/" + view.id + ".png"}};
    if (view.is_query) {
      gt.push_back({view.id, view.pose});
    } else {
      j.update(internal::PoseJson(view.pose));
    }
    views.push_back(std::move(j));
    descriptors.push_back(HalfRounded(scene.descriptors[v]));
    internal::WriteFileBytes(dir / "images" / (view.id + ".png"), EncodePng(RenderRgb(scene, static_cast<int>(v))),
                             view.id);
  }
  const json doc = {{"format_version", kExportFormatVersion},
                    {"descriptors", "descriptors.imld"},
                    {"views", std::move(views)}};
  internal::WriteFileText(dir / "views.json", doc.dump(1) + "\n", "views.json");
  internal::WriteFileBytes(dir / "descriptors.imld", SerializeDescriptors(descriptors, scene.spec.descriptor_dim),
                           "descriptors.imld");
  WritePoses(dir / "gt_poses.txt", gt);

  std::set<std::pair<int, int>> pairs;
  for (const auto& p : MappingPairs(scene, options.k_map)) pairs.insert(p);
  for (const auto& p : LocalizationPairs(scene, options.k_loc)) pairs.insert(p);
  const std::vector<std::pair<int, int>> list(pairs.begin(), pairs.end());
  std::vector<std::vector<uint8_t>> encoded(list.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < static_cast<int>(list.size()); ++i) {
    encoded[i] = SerializeField(SceneField(scene, list[i].first, list[i].second, options.fields));
  }
  for (size_t i = 0; i < list.size(); ++i) {
    const std::string& a = scene.views[list[i].first].id;
    const std::string& b = scene.views[list[i].second].id;
    internal::WriteFileBytes(dir / "fields" / FieldFileName(a, b), encoded[i], a + "__" + b);
  }
}

SceneExport ReadSceneExport(const fs::path& dir) {
  const std::vector<uint8_t> text = internal::ReadFileBytes(dir / "views.json", "views.json");
  SceneExport out;
  try {
    const json doc = json::parse(text.begin(), text.end());
    if (doc.at("format_version").get<int>() != kExportFormatVersion) {
      throw IoError("views.json", "unsupported export format version");
    }
    const std::string desc_file = doc.at("descriptors").get<std::string>();
    std::vector<std::vector<float>> descriptors;
    try {
      descriptors = ParseDescriptors(internal::ReadFileBytes(dir / desc_file, desc_file));
    } catch (const ParseError& e) {
      throw IoError(desc_file, e.what());
    }
    const json& views = doc.at("views");
    if (descriptors.size() != views.size()) throw IoError(desc_file, "descriptor count disagrees with views.json");
    std::set<std::string> seen;
    for (size_t v = 0; v < views.size(); ++v) {
      const json& j = views[v];
      const std::string id = j.at("id").get<std::string>();
      if (!seen.insert(id).second) throw IoError(id, "duplicate view id in views.json");
      const std::string role = j.at("role").get<std::string>();
      const CameraIntrinsics intrinsics = internal::IntrinsicsFromJson(j.at("intrinsics"));
      if (role == "query") {
        out.queries.push_back({id, intrinsics, descriptors[v]});
      } else if (role == "database") {
        const std::string image = j.at("image").get<std::string>();
        out.database.push_back(
            {id, internal::PoseFromJson(j), intrinsics, internal::ReadFileBytes(dir / image, id), descriptors[v]});
      } else {
        throw IoError(id, "unknown view role '" + role + "'");
      }
    }
  } catch (const json::exception& e) {
    throw IoError("views.json", std::string("malformed views.json: ") + e.what());
  }
  return out;
}

}  // namespace imloc
