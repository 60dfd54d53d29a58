// bidiff: command-line front end.
//
//   bidiff gen-dataset --scene S [--scene S2 ...] --out DIR [--config F] [--seed K] [--hires]
//   bidiff sample --scene S [--config F] --out DIR [--seed K]
//   bidiff distill --in RUN_DIR --out FIELD [--config F] [--iters N]
//   bidiff refine --in FIELD [--range lo:hi] [--iters N] [--out FIELD] [--config F]
//   bidiff render --in SCENE|RUN_DIR|FIELD --out DIR [--config F] [--views M] [--size P]
//   bidiff metrics --run RUN_DIR [--scene S] [--field FIELD] [--out FILE]
//   bidiff selftest
//
// Exit status: 0 success, 2 usage error, 1 runtime error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bidiff/io/run_io.hpp"
#include "bidiff/io/stages.hpp"
#include "bidiff/selftest/selftest.hpp"

namespace {

using namespace bidiff;

KeyValues load_config(const std::string& path) { return path.empty() ? KeyValues{} : KeyValues::load(path); }

int run(int argc, char** argv) {
  CLI::App app{"Coupled 2D/3D diffusion sampling with analytic oracle denoisers"};
  app.require_subcommand(1);

  std::string config, out, in, scene, field, range;
  std::vector<std::string> scenes;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters, views, size;
  bool hires = false;

  auto* gen = app.add_subcommand("gen-dataset", "Bake scenes, render fixed and random views, encode priors");
  gen->add_option("--scene", scenes, "Scene file (repeatable)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--config", config, "Key=value config or a dataset manifest");
  gen->add_option("--seed", seed, "Dataset seed");
  gen->add_flag("--hires", hires, "Also export 256x256 renders");

  auto* sample = app.add_subcommand("sample", "Run the bidirectional sampler on a scene");
  sample->add_option("--scene", scene, "Scene file")->required();
  sample->add_option("--config", config, "Key=value config or a run manifest");
  sample->add_option("--out", out, "Run directory")->required();
  sample->add_option("--seed", seed, "Sets every sampler seed");

  auto* dist = app.add_subcommand("distill", "Distill a run into a hi-res voxel radiance field");
  dist->add_option("--in", in, "Run directory")->required();
  dist->add_option("--out", out, "Field file")->required();
  dist->add_option("--config", config, "Key=value config or a field manifest");
  dist->add_option("--iters", iters, "Iterations");

  auto* refine = app.add_subcommand("refine", "Low-noise score distillation of a field");
  refine->add_option("--in", in, "Field file")->required();
  refine->add_option("--range", range, "Timestep range lo:hi as fractions of T");
  refine->add_option("--iters", iters, "Iterations");
  refine->add_option("--out", out, "Refined field file (default: <in stem>_refined.grid)");
  refine->add_option("--config", config, "Key=value config or a field manifest");

  auto* render = app.add_subcommand("render", "Render a scene, run or field on a camera ring");
  render->add_option("--in", in, "Scene file, run directory or field file")->required();
  render->add_option("--out", out, "Output directory")->required();
  render->add_option("--config", config, "Key=value config");
  render->add_option("--views", views, "Ring size");
  render->add_option("--size", size, "Image size");

  auto* metrics = app.add_subcommand("metrics", "IoU, Chamfer and multi-view consistency of a run");
  metrics->add_option("--run", in, "Run directory")->required();
  metrics->add_option("--scene", scene, "Ground-truth scene (default: the run's scene)");
  metrics->add_option("--field", field, "Distilled or refined field to score as well");
  metrics->add_option("--out", out, "Report file");

  auto* self = app.add_subcommand("selftest", "Run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      DatasetSpec spec = DatasetSpec::from_keyvalues(load_config(config));
      if (!scenes.empty()) spec.scenes = scenes;
      if (seed) spec.seed = *seed;
      if (hires) spec.hires = true;
      if (spec.scenes.empty()) {
        std::cerr << "usage error: gen-dataset needs --scene or dataset.scenes in --config\n";
        return 2;
      }
      gen_dataset(spec, out);
    } else if (sample->parsed()) {
      KeyValues kv = load_config(config);
      if (seed) {
        kv.set("sampler.seed", *seed);
        kv.set("sampler.seed3d", *seed);
        kv.set("sampler.prior_seed", *seed);
      }
      const SamplerResult r = sample_stage(scene, kv, out);
      std::cout << "consistency_psnr = " << r.consistency.mean_psnr << "\nseconds = " << r.seconds << "\n";
    } else if (dist->parsed()) {
      KeyValues kv = load_config(config);
      if (iters) kv.set("distill.iterations", *iters);
      DistillReport rep;
      distill_stage(in, kv, out, &rep);
      std::cout << "masked_voxels = " << rep.masked_voxels << "\ndensity_l1 = " << rep.final_density_l1
                << "\nrender_l1 = " << rep.final_render_l1 << "\nseconds = " << rep.seconds << "\n";
    } else if (refine->parsed()) {
      KeyValues kv = load_config(config);
      if (iters) kv.set("refine.iterations", *iters);
      if (!range.empty()) {
        RefineConfig probe;
        try {
          probe.set_range(range);
        } catch (const Error& e) {
          std::cerr << "usage error: --range: " << e.what() << "\n";
          return 2;
        }
        kv.set("refine.lo", probe.lo);
        kv.set("refine.hi", probe.hi);
      }
      if (out.empty()) {
        const std::filesystem::path p(in);
        out = (p.parent_path() / (p.stem().string() + "_refined.grid")).string();
      }
      RefineReport rep;
      refine_stage(in, kv, out, &rep);
      std::cout << "out = " << out << "\ninit_similarity = " << rep.init_similarity << "\nseconds = " << rep.seconds << "\n";
    } else if (render->parsed()) {
      KeyValues kv = load_config(config);
      if (views) kv.set("render.views", *views);
      if (size) kv.set("render.image_size", *size);
      render_stage(in, kv, out);
    } else if (metrics->parsed()) {
      const MetricReport rep = metrics_stage(in, scene, field);
      std::cout << rep.values.to_string();
      if (!out.empty()) rep.values.save(out);
    } else if (self->parsed()) {
      const auto dir = std::filesystem::temp_directory_path();
      return run_selftest(std::cout, dir.string()) ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
