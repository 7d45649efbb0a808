#include "gnf/numerics.hpp"

#include <numbers>

namespace gnf {

std::uint64_t Rng::mix(std::uint64_t z) {
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng Rng::substream(std::string_view name) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng(mix(key_ ^ mix(h)), 0);
}

Rng Rng::substream(std::uint64_t index) const {
  return Rng(mix(key_ ^ mix(index ^ 0x5851f42d4c957f2dULL)), 0);
}

__extension__ using Uint128 = unsigned __int128;

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::uniform_index: n must be positive");
  // Lemire's multiply-shift; bias is below 2^-64 * n, irrelevant here.
  return static_cast<std::uint64_t>((static_cast<Uint128>(next_u64()) * n) >> 64);
}

double Rng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

template <typename Real>
inline void adam_update_one(Real& p, Real g, Real& m, Real& v, const AdamHyper& h, double c1,
                            double c2) {
  const Real b1 = static_cast<Real>(h.beta1);
  const Real b2 = static_cast<Real>(h.beta2);
  m = b1 * m + (Real(1) - b1) * g;
  v = b2 * v + (Real(1) - b2) * g * g;
  const Real mhat = m / static_cast<Real>(c1);
  const Real vhat = v / static_cast<Real>(c2);
  p -= static_cast<Real>(h.lr) * mhat / (std::sqrt(vhat) + static_cast<Real>(h.eps));
}

template <typename Real>
void check_state(std::size_t param, std::size_t grad, const AdamState<Real>& s) {
  if (param != grad || s.m.size() != param || s.v.size() != param) {
    throw ContractError("adam_step: shape mismatch (param " + std::to_string(param) + ", grad " +
                        std::to_string(grad) + ", moments " + std::to_string(s.m.size()) + ")");
  }
  if (!(s.hyper.lr > 0)) throw ContractError("adam_step: learning rate must be positive");
}

}  // namespace

template <typename Real>
void adam_step(std::span<Real> param, std::span<const Real> grad, AdamState<Real>& state) {
  check_state(param.size(), grad.size(), state);
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (grad[i] == Real(0)) continue;
    adam_update_one(param[i], grad[i], state.m[i], state.v[i], state.hyper, c1, c2);
  }
}

template <typename Real>
void adam_step_sparse(std::span<Real> param, std::span<const Real> grad,
                      std::span<const std::uint32_t> indices, AdamState<Real>& state) {
  check_state(param.size(), grad.size(), state);
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.hyper.beta2, static_cast<double>(state.t));
  for (std::uint32_t i : indices) {
    if (grad[i] == Real(0)) continue;
    adam_update_one(param[i], grad[i], state.m[i], state.v[i], state.hyper, c1, c2);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&);
template void adam_step_sparse<float>(std::span<float>, std::span<const float>,
                                      std::span<const std::uint32_t>, AdamState<float>&);
template void adam_step_sparse<double>(std::span<double>, std::span<const double>,
                                       std::span<const std::uint32_t>, AdamState<double>&);

double LrSchedule::operator()(std::uint64_t step) const {
  if (step <= warmup_steps || decay_factor == 1.0) return base_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps);
  return base_lr * std::pow(decay_factor, progress);
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double h) {
  if (!(h > 0)) throw ContractError("finite_diff_grad: step must be positive");
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + h;
    const double plus = f(point);
    point[i] = orig - h;
    const double minus = f(point);
    point[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericAbort("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

}  // namespace gnf
