#include "gnf/grid_encoder.hpp"

namespace gnf {

void GridConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("grid config: " + msg); };
  if (dim != 2 && dim != 3) fail("dim must be 2 or 3");
  if (levels < 1) fail("levels must be >= 1");
  if (n_min < 1) fail("n_min must be positive");
  if (n_max < n_min) fail("n_max must be >= n_min");
  if (features_per_level < 1) fail("features_per_level must be >= 1");
  if (table_size == 0 || (table_size & (table_size - 1)) != 0) fail("table_size must be a power of two");
  if (!(init_scale >= 0)) fail("init_scale must be non-negative");
}

int level_resolution(const GridConfig& config, int level) {
  if (level < 0 || level >= config.levels) {
    throw ContractError("level_resolution: level " + std::to_string(level) + " out of range");
  }
  if (config.levels == 1 || level == 0) return config.n_min;
  if (level == config.levels - 1) return config.n_max;
  const double growth =
      std::exp((std::log(static_cast<double>(config.n_max)) - std::log(static_cast<double>(config.n_min))) /
               static_cast<double>(config.levels - 1));
  return static_cast<int>(std::floor(config.n_min * std::pow(growth, level)));
}

}  // namespace gnf
