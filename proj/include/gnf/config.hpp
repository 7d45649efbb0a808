#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gnf/field_model.hpp"
#include "gnf/sdf.hpp"
#include "gnf/training.hpp"

namespace gnf {

/// Invalid configuration; the message names the offending field.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Kernel center initialization: encodings of seed points, or small uniform
/// values in the range of the table init.
enum class CenterInit { seeds, random };

/// Everything a fit command needs. Defaults depend on the task.
struct RunConfig {
  Task task = Task::sdf;
  std::uint64_t seed = 0;
  GridConfig encoder{};
  int kernels = 64;
  KernelMode mode = KernelMode::spherical;
  CenterInit center_init = CenterInit::seeds;

  std::uint64_t steps = 20000;
  std::size_t batch_size = 400;
  double epsilon = 0.01;
  OptimizerConfig optimizer{};
  std::uint64_t checkpoint_every = 0;
  // radiance
  std::size_t rays_per_batch = 256;
  int samples_per_ray = 64;
  double density_bias = 0.0;

  // SDF ground truth: analytic primitives or a mesh file (io.input).
  std::vector<Primitive> shape;
  // image path, mesh path or scene path, depending on the task
  std::filesystem::path input;
  std::filesystem::path output = "model.gnf";
  std::filesystem::path loss_csv;
};

RunConfig default_config(Task task);

/// Parses and validates a JSON config. Unknown keys are rejected. Missing keys
/// keep the task defaults.
/// With validate = false only the schema is checked, so callers can apply overrides first.
RunConfig parse_config(const std::string& text, const std::string& source = "config", bool validate = true);
RunConfig load_config(const std::filesystem::path& path, bool validate = true);

/// Cross-field checks.
void validate_config(const RunConfig& config);

}  // namespace gnf
