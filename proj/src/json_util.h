#pragma once

#include <json.hpp>

#include "imloc/geometry.h"

namespace imloc::internal {

using nlohmann::json;

inline json PoseJson(const Pose& p) {
  const Eigen::Quaterniond& q = p.rotation;
  return {{"rotation_wxyz", {q.w(), q.x(), q.y(), q.z()}},
          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

inline json IntrinsicsJson(const CameraIntrinsics& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
}

inline Pose PoseFromJson(const json& j) {
  const auto& q = j.at("rotation_wxyz");
  const auto& t = j.at("translation");
  Pose p;
  // Stored values are already unit; keep them bit-exact rather than
  // renormalizing through the Pose constructor.
  p.rotation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                  q.at(3).get<double>());
  p.translation = Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  return p;
}

inline CameraIntrinsics IntrinsicsFromJson(const json& j) {
  CameraIntrinsics c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  return c;
}

}  // namespace imloc::internal
