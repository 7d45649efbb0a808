#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "gnf/field_model.hpp"
#include "gnf/radiance.hpp"

namespace gnf {

inline constexpr char kCheckpointMagic[4] = {'G', 'N', 'F', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Trained model plus the task constants needed to use it.
struct Checkpoint {
  FieldModel<float> model;
  std::uint64_t step = 0;
  // image task
  int image_width = 0;
  int image_height = 0;
  // radiance task
  RadianceSettings radiance{};
};

/// Layout (little-endian): magic, version u32, task u32, step u64; encoder
/// section (dim, levels, n_min, n_max, features_per_level, table_size as u32,
/// init_scale f64, entry count u64, tables f32 level-major); decoder section
/// (N, m, q, mode as u32, then centers, log-bandwidths, weights as f32
/// row-major); task section (byte count u32, then image width/height as u32 or
/// radiance background, bounds center, bounds radius, density bias as f64).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& in, const std::string& name = "checkpoint");

}  // namespace gnf
