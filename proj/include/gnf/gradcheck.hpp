#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gnf {

/// Analytic gradients versus central finite differences, in double precision
/// on tiny models.
struct GradcheckOptions {
  int instances = 20;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-5;
  // Denominator floor for the relative error.
  double floor = 1e-6;
  // Random parameters probed per radiance instance.
  int radiance_parameters = 10;
  double radiance_tolerance = 1e-3;
};

struct GradcheckResult {
  std::string suite;
  int instances = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  double worst_error = 0.0;
  int worst_instance = -1;
  std::string worst_parameter;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double seconds = 0.0;

  bool passed() const { return worst_error <= tolerance; }
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

GradcheckResult check_decoder_gradients(const GradcheckOptions& options = {});
GradcheckResult check_encoder_gradients(const GradcheckOptions& options = {});
GradcheckResult check_end_to_end_gradients(const GradcheckOptions& options = {});
GradcheckResult check_radiance_gradients(const GradcheckOptions& options = {});

/// All four suites in the order above.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace gnf
