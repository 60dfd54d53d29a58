#pragma once

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/parallel.hpp"
#include "bidiff/geometry/grid.hpp"

namespace bidiff {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 to_local(const Vec3& p) const { return rotation.transpose() * (p - translation); }

  /// Rotation from XYZ Euler angles in degrees (applied x first).
  static RigidTransform from_euler_deg(const Vec3& euler_deg, const Vec3& translation) {
    const double k = std::numbers::pi / 180.0;
    RigidTransform t;
    t.rotation = (Eigen::AngleAxisd(euler_deg.z() * k, Vec3::UnitZ()) *
                  Eigen::AngleAxisd(euler_deg.y() * k, Vec3::UnitY()) *
                  Eigen::AngleAxisd(euler_deg.x() * k, Vec3::UnitX()))
                     .toRotationMatrix();
    t.translation = translation;
    return t;
  }

  /// this ∘ inner
  RigidTransform compose(const RigidTransform& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }
};

enum class ShapeKind { sphere, box, torus, capsule };

/// A primitive in its local frame. `size` holds the kind-specific extents:
///   sphere  (radius, -, -)
///   box     (half extents)
///   torus   (major, minor, -), ring in the local xz plane
///   capsule (half length, radius, -), axis along local y
struct AnalyticShape {
  ShapeKind kind = ShapeKind::sphere;
  Vec3 size = Vec3(0.5, 0.0, 0.0);
  RigidTransform pose;
  int color_label = 0;

  static AnalyticShape sphere(double radius, const Vec3& center = Vec3::Zero(), int label = 0) {
    return {ShapeKind::sphere, Vec3(radius, 0, 0), {Mat3::Identity(), center}, label};
  }
  static AnalyticShape box(const Vec3& half_extents, const RigidTransform& pose = {}, int label = 0) {
    return {ShapeKind::box, half_extents, pose, label};
  }
  static AnalyticShape torus(double major, double minor, const RigidTransform& pose = {}, int label = 0) {
    return {ShapeKind::torus, Vec3(major, minor, 0), pose, label};
  }
  static AnalyticShape capsule(double half_length, double radius, const RigidTransform& pose = {}, int label = 0) {
    return {ShapeKind::capsule, Vec3(half_length, radius, 0), pose, label};
  }

  void validate() const {
    switch (kind) {
      case ShapeKind::sphere:
        require(size.x() > 0, Errc::invalid_argument, "sphere radius must be positive");
        break;
      case ShapeKind::box:
        require(size.minCoeff() > 0, Errc::invalid_argument, "box half extents must be positive");
        break;
      case ShapeKind::torus:
        require(size.x() > 0 && size.y() > 0, Errc::invalid_argument, "torus radii must be positive");
        break;
      case ShapeKind::capsule:
        require(size.x() > 0 && size.y() > 0, Errc::invalid_argument, "capsule extents must be positive");
        break;
    }
  }

  double local_sdf(const Vec3& q) const {
    switch (kind) {
      case ShapeKind::sphere:
        return q.norm() - size.x();
      case ShapeKind::box: {
        const Vec3 d = q.cwiseAbs() - size;
        return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
      }
      case ShapeKind::torus: {
        const double ring = std::hypot(q.x(), q.z()) - size.x();
        return std::hypot(ring, q.y()) - size.y();
      }
      case ShapeKind::capsule: {
        const double y = std::clamp(q.y(), -size.x(), size.x());
        return (q - Vec3(0, y, 0)).norm() - size.y();
      }
    }
    return 0.0;
  }

  double sdf(const Vec3& p) const { return local_sdf(pose.to_local(p)); }
};

/// CSG expression over part indices.
struct CsgNode {
  enum class Op { part, union_, intersection, difference };
  Op op = Op::part;
  int part = 0;
  std::vector<CsgNode> children;

  static CsgNode leaf(int index) { return {Op::part, index, {}}; }
  static CsgNode combine(Op op, std::vector<CsgNode> children) { return {op, 0, std::move(children)}; }
};

using Rgb = Eigen::Vector3d;
using Palette = std::map<int, Rgb>;

/// Procedural scene: parts, a CSG tree over them, and color palettes. The
/// default palette is used unless a condition label selects another.
struct SceneSpec {
  std::string name = "scene";
  std::vector<AnalyticShape> parts;
  CsgNode csg = CsgNode::combine(CsgNode::Op::union_, {});  // empty union: all parts
  Palette palette;
  std::map<std::string, Palette> label_palettes;

  void validate() const {
    require(!parts.empty(), Errc::invalid_argument, "scene needs at least one part");
    for (const auto& p : parts) p.validate();
    validate_node(csg);
  }

  /// Palette for a condition label; "" and "default" select the base palette.
  /// Colors missing from a label palette fall back to the base palette.
  Palette palette_for(const std::string& label) const {
    if (label.empty() || label == "default") return palette;
    const auto it = label_palettes.find(label);
    require(it != label_palettes.end(), Errc::invalid_argument, "unknown label '" + label + "'");
    Palette out = palette;
    for (const auto& [k, v] : it->second) out[k] = v;
    return out;
  }

  static SceneSpec single(const AnalyticShape& shape, const Rgb& color = Rgb(0.85, 0.2, 0.2)) {
    SceneSpec s;
    s.parts = {shape};
    s.csg = CsgNode::combine(CsgNode::Op::union_, {CsgNode::leaf(0)});
    s.palette[shape.color_label] = color;
    return s;
  }

 private:
  void validate_node(const CsgNode& n) const {
    if (n.op == CsgNode::Op::part) {
      require(n.part >= 0 && n.part < static_cast<int>(parts.size()), Errc::invalid_argument,
              "csg references unknown part " + std::to_string(n.part));
      return;
    }
    if (n.op == CsgNode::Op::difference) {
      require(n.children.size() >= 2, Errc::invalid_argument, "difference needs at least two operands");
    }
    for (const auto& c : n.children) validate_node(c);
  }
};

namespace detail {

inline double eval_node(const SceneSpec& scene, const CsgNode& node, const Vec3& p) {
  switch (node.op) {
    case CsgNode::Op::part:
      return scene.parts[node.part].sdf(p);
    case CsgNode::Op::union_: {
      if (node.children.empty()) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& part : scene.parts) d = std::min(d, part.sdf(p));
        return d;
      }
      double d = std::numeric_limits<double>::infinity();
      for (const auto& c : node.children) d = std::min(d, eval_node(scene, c, p));
      return d;
    }
    case CsgNode::Op::intersection: {
      double d = -std::numeric_limits<double>::infinity();
      for (const auto& c : node.children) d = std::max(d, eval_node(scene, c, p));
      return d;
    }
    case CsgNode::Op::difference: {
      double d = eval_node(scene, node.children.front(), p);
      for (std::size_t i = 1; i < node.children.size(); ++i) d = std::max(d, -eval_node(scene, node.children[i], p));
      return d;
    }
  }
  return 0.0;
}

}  // namespace detail

/// Exact for single primitives; union/intersection/difference combine by
/// min/max, which is a bound away from the zero level set.
inline double eval_sdf(const SceneSpec& scene, const Vec3& p) { return detail::eval_node(scene, scene.csg, p); }

/// Bakes the scene SDF onto the N^3 lattice. Rejects scenes that reach the
/// box boundary.
inline SdfGrid bake_grid(const SceneSpec& scene, int n) {
  require(n >= 8, Errc::invalid_argument, "invalid resolution " + std::to_string(n) + " (need N >= 8)");
  scene.validate();
  SdfGrid grid(n, 1);
  auto& v = grid.values();
  parallel_for(0, grid.point_count(), [&](std::size_t i) { v[i] = static_cast<float>(eval_sdf(scene, grid.position(i))); });
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const int last = n - 1;
      const float faces[6] = {grid.at(0, a, b), grid.at(last, a, b), grid.at(a, 0, b),
                              grid.at(a, last, b), grid.at(a, b, 0), grid.at(a, b, last)};
      for (float f : faces) {
        require(f >= 0.0f, Errc::invalid_argument, "scene '" + scene.name + "' extends outside [-1,1]^3");
      }
    }
  }
  return grid;
}

/// Index of the part whose surface is closest (most negative SDF wins).
inline int nearest_part(const SceneSpec& scene, const Vec3& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scene.parts.size(); ++i) {
    const double d = scene.parts[i].sdf(p);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// RGB color grid from the palette by nearest-part assignment.
inline ColorGrid bake_color_grid(const SceneSpec& scene, int n, const std::string& label = "") {
  const Palette pal = scene.palette_for(label);
  ColorGrid grid(n, 3);
  auto& v = grid.values();
  parallel_for(0, grid.point_count(), [&](std::size_t i) {
    const int part = nearest_part(scene, grid.position(i));
    const auto it = pal.find(scene.parts[part].color_label);
    const Rgb c = it == pal.end() ? Rgb(0.5, 0.5, 0.5) : it->second;
    for (int ch = 0; ch < 3; ++ch) v[i * 3 + ch] = static_cast<float>(c[ch]);
  });
  return grid;
}

}  // namespace bidiff
