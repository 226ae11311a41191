#pragma once

// Small synthetic corpus plus trained artifacts in a temporary directory,
// rebuilt on every call.

#include "progtx/codec_masking.hpp"
#include "progtx/codec_rvq.hpp"
#include "progtx/imageio.hpp"
#include "progtx/observer.hpp"
#include "progtx/simulator.hpp"

#include <filesystem>
#include <string>

namespace fixture {

namespace fs = std::filesystem;

struct Artifacts {
  fs::path dir;
  fs::path manifest, ranking, scales, stack, projector;
};

inline Artifacts build(const std::string& tag, int n_eval = 4, int stride = 2, int stages = 10) {
  using namespace progtx;
  Artifacts a;
  a.dir = fs::temp_directory_path() / ("progtx_fixture_" + tag);
  a.manifest = a.dir / "corpus" / "manifest.json";
  a.ranking = a.dir / "ranking.json";
  a.scales = a.dir / "scales.json";
  a.stack = a.dir / "stack.rvq";
  a.projector = a.dir / "projector.json";
  fs::remove_all(a.dir);
  const auto corpus = io::write_synthetic_corpus(a.dir / "corpus", 4, n_eval, 96, 64, 20240601);
  const auto cal = corpus.load(io::Split::calibration);

  const auto ranking = observer::rank_channels(cal);
  io::write_file_atomic(a.ranking, ranking.to_json());
  std::vector<masking::Latent> latents;
  for (const auto& im : cal) latents.push_back(masking::analyze_image(im));
  io::write_file_atomic(a.scales, masking::build_scale_table(latents, masking::kDefaultQuality).to_json());

  rvq::Vectors x(192, 0);
  for (const auto& im : cal) {
    const auto p = rvq::training_patches(im, rvq::kPatch, stride);
    rvq::Vectors y(192, x.cols() + p.cols());
    y << x, p;
    x = std::move(y);
  }
  const auto proj = rvq::fit_projector(x, 4);
  io::write_file_atomic(a.projector, proj.to_json());
  rvq::save_stack(rvq::train_residual_stack(proj.project(x), stages, 8, 7, 40), a.stack);
  return a;
}

inline progtx::sim::ExperimentConfig config(const Artifacts& a) {
  progtx::sim::ExperimentConfig c;
  c.methods = progtx::sim::ExperimentConfig::default_methods();
  c.manifest = a.manifest;
  c.ranking = a.ranking;
  c.scales = a.scales;
  c.stack = a.stack;
  c.projector = a.projector;
  return c;
}

}  // namespace fixture
