#pragma once

#include <optional>
#include <vector>

#include "gnf/checkpoint.hpp"
#include "gnf/config.hpp"
#include "gnf/image.hpp"
#include "gnf/radiance.hpp"
#include "gnf/sdf.hpp"
#include "gnf/training.hpp"

namespace gnf {

/// Ground truth described by the config: the union of its primitives, or the
/// mesh named by io.input.
SdfOracle make_sdf_oracle(const RunConfig& config);

/// Image encoders with n_max = 0 take the longest image side.
GridConfig resolve_grid(const RunConfig& config, const ImageBuffer* image = nullptr);

/// Initialized model for the configured task. Codes are uniform in
/// +-init_scale; kernel centers are the encodings of seed points (uniform in
/// the cube for SDFs and radiance, a pixel lattice for images) or, with
/// CenterInit::random, uniform in +-init_scale.
FieldModel<float> make_model(const RunConfig& config, const ImageBuffer* image = nullptr);

FitConfig fit_config(const RunConfig& config, unsigned workers);
RadianceFitConfig radiance_fit_config(const RunConfig& config, unsigned workers);

struct FitOutcome {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
  double seconds = 0.0;
};

/// Builds and trains the model. `on_checkpoint` receives the intermediate
/// snapshots requested by checkpoint_every.
FitOutcome fit_sdf(const RunConfig& config, const SurfaceOracle& oracle, unsigned workers,
                   const CheckpointCallback& on_checkpoint = {});
FitOutcome fit_image(const RunConfig& config, const ImageBuffer& image, unsigned workers,
                     const CheckpointCallback& on_checkpoint = {});
FitOutcome fit_radiance_scene(const RunConfig& config, const ToyScene& scene, const SceneViews& views,
                              unsigned workers, const CheckpointCallback& on_checkpoint = {});

/// io.input when set, otherwise the built-in two-sphere scene.
ToyScene scene_from_config(const RunConfig& config);

}  // namespace gnf
