#pragma once

// On-disk layout of sampler runs, view sets and datasets.
//
// View set: "VIEW" | u32 version=1 | u32 count | per view: u32 w, u32 h,
// u32 c, w*h*c f32 (little-endian, row-major interleaved). Poses live in a
// key/value file next to it.

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/keyvalue.hpp"
#include "bidiff/geometry/mesh.hpp"
#include "bidiff/geometry/scene.hpp"
#include "bidiff/geometry/scene_io.hpp"
#include "bidiff/io/grid_file.hpp"
#include "bidiff/prior/prior.hpp"
#include "bidiff/render/camera.hpp"
#include "bidiff/render/image.hpp"
#include "bidiff/sampler/sampler.hpp"

namespace bidiff {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), Errc::io, "cannot create directory " + dir.string());
}

inline KeyValues poses_to_keyvalues(const std::vector<CameraPose>& poses) {
  KeyValues kv;
  kv.set("count", static_cast<std::int64_t>(poses.size()));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const std::string p = "pose." + std::to_string(i) + ".";
    kv.set(p + "azimuth", poses[i].azimuth);
    kv.set(p + "elevation", poses[i].elevation);
    kv.set(p + "radius", poses[i].radius);
    kv.set(p + "fov_y", poses[i].fov_y);
    kv.set(p + "width", poses[i].width);
    kv.set(p + "height", poses[i].height);
  }
  return kv;
}

inline std::vector<CameraPose> poses_from_keyvalues(const KeyValues& kv) {
  std::vector<CameraPose> poses(static_cast<std::size_t>(kv.get_int("count")));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const std::string p = "pose." + std::to_string(i) + ".";
    poses[i].azimuth = kv.get_double(p + "azimuth");
    poses[i].elevation = kv.get_double(p + "elevation");
    poses[i].radius = kv.get_double(p + "radius");
    poses[i].fov_y = kv.get_double(p + "fov_y");
    poses[i].width = static_cast<int>(kv.get_int(p + "width"));
    poses[i].height = static_cast<int>(kv.get_int(p + "height"));
    poses[i].validate();
  }
  return poses;
}

/// Writes views.bin, poses.txt and one PPM per view into `dir`.
inline void write_view_set(const fs::path& dir, const MultiViewSet& views) {
  views.validate();
  ensure_dir(dir);
  std::vector<char> buf{'V', 'I', 'E', 'W'};
  detail::put_u32(buf, 1);
  detail::put_u32(buf, static_cast<std::uint32_t>(views.size()));
  for (std::size_t v = 0; v < views.size(); ++v) {
    const ImageBuffer& img = views.images[v];
    detail::put_u32(buf, static_cast<std::uint32_t>(img.width()));
    detail::put_u32(buf, static_cast<std::uint32_t>(img.height()));
    detail::put_u32(buf, static_cast<std::uint32_t>(img.channels()));
    for (float f : img.values()) detail::put_f32(buf, f);
    char name[32];
    std::snprintf(name, sizeof name, "view_%02zu.ppm", v);
    write_ppm((dir / name).string(), img);
  }
  detail::write_all((dir / "views.bin").string(), buf);
  poses_to_keyvalues(views.poses).save((dir / "poses.txt").string());
}

inline MultiViewSet read_view_set(const fs::path& dir) {
  const std::string path = (dir / "views.bin").string();
  const auto bytes = detail::read_all(path);
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "VIEW", 4) == 0, Errc::parse, path + ": not a view file");
  require(detail::get_u32(bytes.data() + 4) == 1, Errc::parse, path + ": unsupported version");
  const std::uint32_t count = detail::get_u32(bytes.data() + 8);
  MultiViewSet views;
  views.poses = poses_from_keyvalues(KeyValues::load((dir / "poses.txt").string()));
  std::size_t off = 12;
  for (std::uint32_t v = 0; v < count; ++v) {
    require(off + 12 <= bytes.size(), Errc::parse, path + ": truncated");
    const int w = static_cast<int>(detail::get_u32(bytes.data() + off));
    const int h = static_cast<int>(detail::get_u32(bytes.data() + off + 4));
    const int c = static_cast<int>(detail::get_u32(bytes.data() + off + 8));
    off += 12;
    ImageBuffer img(w, h, c);
    require(off + img.size() * 4 <= bytes.size(), Errc::parse, path + ": truncated");
    for (std::size_t i = 0; i < img.size(); ++i) img.values()[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + off + 4 * i));
    off += img.size() * 4;
    views.images.push_back(std::move(img));
  }
  require(off == bytes.size(), Errc::parse, path + ": trailing bytes");
  views.validate();
  return views;
}

/// Run directory written by `sample`:
///   manifest.txt   config, scene, schedules, prior provenance, results
///   sdf.grid       F_0 (N^3)
///   colors.grid    surface colors (N^3 x 3)
///   mesh.obj       zero level set of F_0
///   views/         V_0
///   trajectory.txt per-step records
///   timings.txt    wall-clock only (not part of the reproducible outputs)
inline void write_run(const fs::path& dir, const SamplerResult& r, const KeyValues& extra = {}) {
  ensure_dir(dir);
  KeyValues manifest = r.manifest;
  manifest.merge(extra);
  manifest.save((dir / "manifest.txt").string());
  write_grid((dir / "sdf.grid").string(), r.grid);
  write_grid((dir / "colors.grid").string(), r.colors);
  write_obj((dir / "mesh.obj").string(), extract_mesh(r.grid));
  write_view_set(dir / "views", r.views);
  KeyValues traj;
  for (std::size_t i = 0; i < r.trajectory.steps.size(); ++i) {
    const auto& s = r.trajectory.steps[i];
    const std::string p = "step." + std::to_string(s.t) + ".";
    traj.set(p + "guidance_gap3d", s.guidance_gap3d);
    traj.set(p + "guidance_gap2d", s.guidance_gap2d);
    traj.set(p + "render_psnr", s.render_psnr);
  }
  traj.save((dir / "trajectory.txt").string());
  const int n = r.grid.resolution();
  for (const auto& snap : r.trajectory.snapshots) {
    const fs::path sd = dir / "snapshots";
    ensure_dir(sd);
    char name[48];
    std::snprintf(name, sizeof name, "step_%03d_x0.grid", snap.state.t);
    write_grid((sd / name).string(), SdfGrid(n, 1, snap.x0_grid));
    std::snprintf(name, sizeof name, "step_%03d_state.grid", snap.state.t);
    write_grid((sd / name).string(), SdfGrid(n, 1, snap.state.grid));
  }
  KeyValues timings;
  timings.set("sample.seconds", r.seconds);
  timings.save((dir / "timings.txt").string());
}

struct RunFiles {
  KeyValues manifest;
  SdfGrid sdf;
  ColorGrid colors;
  MultiViewSet views;
};

inline RunFiles read_run(const fs::path& dir) {
  RunFiles r;
  r.manifest = KeyValues::load((dir / "manifest.txt").string());
  r.sdf = read_grid((dir / "sdf.grid").string());
  r.colors = read_grid((dir / "colors.grid").string());
  require(r.sdf.channels() == 1 && r.colors.channels() == 3 && r.sdf.resolution() == r.colors.resolution(),
          Errc::parse, dir.string() + ": run grids have unexpected shapes");
  r.views = read_view_set(dir / "views");
  return r;
}

struct DatasetSpec {
  std::vector<std::string> scenes;
  int grid_n = 32;
  int fixed_views = 8;
  int random_views = 16;
  int image_size = 64;
  bool hires = false;  // also export 256x256 renders
  int samples = 64;
  double s_density = 20.0;
  double elevation = 30.0;
  double camera_radius = 2.5;
  double fov_y = 40.0;
  PriorConfig prior;
  std::uint64_t seed = 0;

  void validate() const {
    require(!scenes.empty(), Errc::invalid_argument, "dataset needs at least one scene");
    require(fixed_views >= 1, Errc::invalid_argument, "dataset needs M >= 1 fixed views");
    require(random_views >= 0, Errc::invalid_argument, "random view count must be >= 0");
    require(image_size >= 8, Errc::invalid_argument, "image resolution must be >= 8");
    require(grid_n >= 8 && samples >= 2, Errc::invalid_argument, "dataset grid/sample settings out of range");
    prior.validate();
  }

  KeyValues to_keyvalues() const {
    KeyValues kv;
    std::string list;
    for (const auto& s : scenes) list += (list.empty() ? "" : " ") + s;
    kv.set("dataset.scenes", list);
    kv.set("dataset.grid_n", grid_n);
    kv.set("dataset.fixed_views", fixed_views);
    kv.set("dataset.random_views", random_views);
    kv.set("dataset.image_size", image_size);
    kv.set("dataset.hires", hires);
    kv.set("dataset.samples", samples);
    kv.set("dataset.seed", seed);
    kv.set("render.s", s_density);
    kv.set("camera.elevation", elevation);
    kv.set("camera.radius", camera_radius);
    kv.set("camera.fov_y", fov_y);
    kv.set("prior.t0", prior.t0);
    kv.set("prior.coarse_n", prior.coarse_n);
    return kv;
  }

  static DatasetSpec from_keyvalues(const KeyValues& kv) {
    DatasetSpec d;
    if (kv.has("dataset.scenes")) d.scenes = detail::split_ws(kv.get_string("dataset.scenes"));
    d.grid_n = static_cast<int>(kv.get_int("dataset.grid_n", d.grid_n));
    d.fixed_views = static_cast<int>(kv.get_int("dataset.fixed_views", d.fixed_views));
    d.random_views = static_cast<int>(kv.get_int("dataset.random_views", d.random_views));
    d.image_size = static_cast<int>(kv.get_int("dataset.image_size", d.image_size));
    d.hires = kv.get_bool("dataset.hires", d.hires);
    d.samples = static_cast<int>(kv.get_int("dataset.samples", d.samples));
    d.seed = kv.get_u64("dataset.seed", d.seed);
    d.s_density = kv.get_double("render.s", d.s_density);
    d.elevation = kv.get_double("camera.elevation", d.elevation);
    d.camera_radius = kv.get_double("camera.radius", d.camera_radius);
    d.fov_y = kv.get_double("camera.fov_y", d.fov_y);
    d.prior.t0 = kv.get_double("prior.t0", d.prior.t0);
    d.prior.coarse_n = static_cast<int>(kv.get_int("prior.coarse_n", d.prior.coarse_n));
    return d;
  }
};

/// Per scene under out/<name>/: sdf.grid, colors.grid, fixed/ (ring renders),
/// random/ (random-pose renders, poses logged), prior_code.grid (clean coarse
/// code), prior_latent.grid (code noised at t0), and hires/ when requested.
/// The top-level manifest.txt lists the spec; output is a pure function of it.
inline void gen_dataset(const DatasetSpec& spec, const fs::path& out) {
  spec.validate();
  ensure_dir(out);
  KeyValues manifest = spec.to_keyvalues();
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 50);
  const SDensityParams density{spec.s_density};
  for (const auto& scene_path : spec.scenes) {
    const SceneSpec scene = load_scene(scene_path);
    const fs::path dir = out / scene.name;
    ensure_dir(dir);
    const SdfGrid sdf = bake_grid(scene, spec.grid_n);
    const ColorGrid colors = bake_color_grid(scene, spec.grid_n);
    write_grid((dir / "sdf.grid").string(), sdf);
    write_grid((dir / "colors.grid").string(), colors);
    const RandomStream stream = RandomStream(spec.seed).fork(scene.name);
    RenderConfig rc;
    rc.n_samples = spec.samples;
    rc.seed = stream.fork("render").key();
    const auto field = field_from_grid(sdf, colors, density);
    const auto ring = make_camera_ring(spec.fixed_views, spec.elevation, spec.camera_radius, spec.fov_y,
                                       spec.image_size, spec.image_size);
    write_view_set(dir / "fixed", render_views(field, ring, rc));
    if (spec.random_views > 0) {
      const auto poses = random_poses(stream.fork("poses"), spec.random_views, spec.image_size, spec.camera_radius,
                                      spec.fov_y);
      write_view_set(dir / "random", render_views(field, poses, rc));
    }
    if (spec.hires) {
      const auto big = make_camera_ring(spec.fixed_views, spec.elevation, spec.camera_radius, spec.fov_y, 256, 256);
      write_view_set(dir / "hires", render_views(field, big, rc));
    }
    const LatentCode code = encode_prior(scene, spec.prior.coarse_n);
    const LatentCode noisy = noise_latent(code, spec.prior.t0, sched, stream.fork("prior"));
    write_grid((dir / "prior_code.grid").string(), Grid3<float>(code.n, 1, code.values));
    write_grid((dir / "prior_latent.grid").string(), Grid3<float>(noisy.n, 1, noisy.values));
    manifest.set("scene." + scene.name + ".source", scene_path);
  }
  manifest.save((out / "manifest.txt").string());
}

}  // namespace bidiff
