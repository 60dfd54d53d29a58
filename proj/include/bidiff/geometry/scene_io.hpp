#pragma once

// Scene file grammar (key = value, '#' comments):
//
//   name = snowman
//   part.<i>.kind = sphere | box | torus | capsule
//   part.<i>.radius = r                  sphere, capsule
//   part.<i>.half_extents = x y z        box
//   part.<i>.major = R                   torus
//   part.<i>.minor = r                   torus
//   part.<i>.half_length = h             capsule
//   part.<i>.center = x y z              default 0 0 0
//   part.<i>.rotation = rx ry rz         XYZ Euler degrees, default 0 0 0
//   part.<i>.color = <id>                palette id, default 0
//   csg = union(0, difference(1, 2))    default: union of all parts
//   palette.<id> = r g b                 base palette
//   label.<name>.<id> = r g b            palette override selected by a label
//
// Part indices must be contiguous from 0.

#include <cctype>
#include <string>

#include "bidiff/core/keyvalue.hpp"
#include "bidiff/geometry/scene.hpp"

namespace bidiff {

namespace detail {

class CsgParser {
 public:
  explicit CsgParser(std::string text) : s_(std::move(text)) {}

  CsgNode parse() {
    CsgNode n = expr();
    skip();
    if (pos_ != s_.size()) fail("trailing characters");
    return n;
  }

 private:
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(Errc::parse, "csg expression '" + s_ + "' at " + std::to_string(pos_) + ": " + why);
  }

  CsgNode expr() {
    skip();
    if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      int v = 0;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) v = v * 10 + (s_[pos_++] - '0');
      return CsgNode::leaf(v);
    }
    std::string word;
    while (pos_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[pos_]))) word += s_[pos_++];
    CsgNode::Op op;
    if (word == "union") op = CsgNode::Op::union_;
    else if (word == "intersection") op = CsgNode::Op::intersection;
    else if (word == "difference") op = CsgNode::Op::difference;
    else fail("expected part index or union/intersection/difference");
    skip();
    if (pos_ >= s_.size() || s_[pos_] != '(') fail("expected '('");
    ++pos_;
    std::vector<CsgNode> children;
    while (true) {
      children.push_back(expr());
      skip();
      if (pos_ < s_.size() && s_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (pos_ < s_.size() && s_[pos_] == ')') {
        ++pos_;
        break;
      }
      fail("expected ',' or ')'");
    }
    return CsgNode::combine(op, std::move(children));
  }

  std::string s_;
  std::size_t pos_ = 0;
};

inline Vec3 to_vec3(const KeyValues& kv, const std::string& key, const Vec3& fallback) {
  if (!kv.has(key)) return fallback;
  const auto v = kv.get_doubles(key);
  require(v.size() == 3, Errc::parse, "key '" + key + "' needs three numbers");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

inline SceneSpec scene_from_keyvalues(const KeyValues& kv) {
  SceneSpec scene;
  scene.name = kv.get_string("name", "scene");
  for (int i = 0;; ++i) {
    const std::string pre = "part." + std::to_string(i) + ".";
    if (!kv.has(pre + "kind")) break;
    const std::string kind = kv.get_string(pre + "kind");
    AnalyticShape s;
    if (kind == "sphere") {
      s.kind = ShapeKind::sphere;
      s.size = Vec3(kv.get_double(pre + "radius"), 0, 0);
    } else if (kind == "box") {
      s.kind = ShapeKind::box;
      s.size = detail::to_vec3(kv, pre + "half_extents", Vec3::Zero());
    } else if (kind == "torus") {
      s.kind = ShapeKind::torus;
      s.size = Vec3(kv.get_double(pre + "major"), kv.get_double(pre + "minor"), 0);
    } else if (kind == "capsule") {
      s.kind = ShapeKind::capsule;
      s.size = Vec3(kv.get_double(pre + "half_length"), kv.get_double(pre + "radius"), 0);
    } else {
      throw Error(Errc::parse, "part " + std::to_string(i) + ": unknown kind '" + kind + "'");
    }
    s.pose = RigidTransform::from_euler_deg(detail::to_vec3(kv, pre + "rotation", Vec3::Zero()),
                                            detail::to_vec3(kv, pre + "center", Vec3::Zero()));
    s.color_label = static_cast<int>(kv.get_int(pre + "color", 0));
    scene.parts.push_back(s);
  }
  if (kv.has("csg")) scene.csg = detail::CsgParser(kv.get_string("csg")).parse();
  const KeyValues palette = kv.section("palette.");
  for (const auto& [key, value] : palette.entries()) {
    scene.palette[std::stoi(key)] = detail::to_vec3(kv, "palette." + key, Vec3::Zero());
  }
  const KeyValues labels = kv.section("label.");
  for (const auto& [key, value] : labels.entries()) {
    const auto dot = key.rfind('.');
    require(dot != std::string::npos, Errc::parse, "label key needs the form label.<name>.<id>");
    scene.label_palettes[key.substr(0, dot)][std::stoi(key.substr(dot + 1))] =
        detail::to_vec3(kv, "label." + key, Vec3::Zero());
  }
  scene.validate();
  return scene;
}

inline SceneSpec load_scene(const std::string& path) { return scene_from_keyvalues(KeyValues::load(path)); }

}  // namespace bidiff
