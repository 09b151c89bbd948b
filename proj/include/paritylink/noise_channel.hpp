#pragma once

// Correlated dephasing on a dual-rail channel: every photon on the H rail at
// time t picks up exp(i φ_H(t)), every photon on the V rail exp(i φ_V(t)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "paritylink/errors.hpp"
#include "paritylink/photonic_state.hpp"

namespace paritylink {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent, reproducible stream for one trial; lets trials run on any
// number of workers with identical results.
inline Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0xA5A5A5A5ULL)));
}

enum class NoiseKind { iid_uniform, ornstein_uhlenbeck };

struct NoiseModel {
  NoiseKind kind = NoiseKind::iid_uniform;
  double correlation_time_ns = std::numeric_limits<double>::infinity();  // OU only
  double sigma_rad = 0.0;                                               // OU only
  std::uint64_t seed = 1;

  void validate() const {
    if (kind == NoiseKind::ornstein_uhlenbeck) {
      if (!(correlation_time_ns > 0.0)) {
        throw ValidationError("OU correlation time must be positive");
      }
      if (!(sigma_rad >= 0.0) || !std::isfinite(sigma_rad)) {
        throw ValidationError("OU stationary deviation must be finite and non-negative");
      }
    }
  }
};

// Phases seen by the photons of one trial.
class NoiseRealization {
 public:
  static NoiseRealization constant(double phi_h, double phi_v) {
    NoiseRealization r;
    r.constant_ = true;
    r.phi_h_ = {phi_h};
    r.phi_v_ = {phi_v};
    return r;
  }

  // Phases tabulated at the given times.
  static NoiseRealization sampled(std::vector<double> times, std::vector<double> phi_h,
                                  std::vector<double> phi_v) {
    if (times.size() != phi_h.size() || times.size() != phi_v.size() || times.empty()) {
      throw ValidationError("phase table columns must have equal, non-zero length");
    }
    NoiseRealization r;
    r.times_ = std::move(times);
    r.phi_h_ = std::move(phi_h);
    r.phi_v_ = std::move(phi_v);
    return r;
  }

  bool is_constant() const { return constant_; }
  const std::vector<double>& times() const { return times_; }
  double phi_h(double t) const { return phi_h_[index(t)]; }
  double phi_v(double t) const { return phi_v_[index(t)]; }

 private:
  std::size_t index(double t) const {
    if (constant_) return 0;
    for (std::size_t i = 0; i < times_.size(); ++i) {
      if (std::abs(times_[i] - t) <= 1e-12) return i;
    }
    throw ValidationError("no channel phase sampled at t = " + std::to_string(t) + " ns");
  }

  bool constant_ = false;
  std::vector<double> times_;
  std::vector<double> phi_h_;
  std::vector<double> phi_v_;
};

// IIDUniform ignores `times`; OU is sampled exactly at the sorted unique times
// via x' = ρ x + σ sqrt(1 - ρ²) z, ρ = exp(-Δ/τ_c), started from stationarity.
inline NoiseRealization sample_realization(const NoiseModel& model, Rng& rng,
                                           std::span<const double> times = {}) {
  model.validate();
  if (model.kind == NoiseKind::iid_uniform) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double h = phase(rng);
    const double v = phase(rng);
    return NoiseRealization::constant(h, v);
  }
  std::vector<double> ts(times.begin(), times.end());
  if (ts.empty()) ts.push_back(0.0);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> h(ts.size()), v(ts.size());
  h[0] = model.sigma_rad * gauss(rng);
  v[0] = model.sigma_rad * gauss(rng);
  for (std::size_t i = 1; i < ts.size(); ++i) {
    const double rho = std::exp(-(ts[i] - ts[i - 1]) / model.correlation_time_ns);
    const double kick = model.sigma_rad * std::sqrt(std::max(0.0, 1.0 - rho * rho));
    h[i] = rho * h[i - 1] + kick * gauss(rng);
    v[i] = rho * v[i - 1] + kick * gauss(rng);
  }
  return NoiseRealization::sampled(std::move(ts), std::move(h), std::move(v));
}

// Which paths are the two rails, and which other paths may carry photons
// that bypass the channel (dumped or not-yet-launched photons).
struct DualRail {
  std::string h_path = "C_H";
  std::string v_path = "C_V";
  std::set<std::string> bypass;
};

inline PhotonicState apply_phase_channel(const PhotonicState& state, const NoiseRealization& r,
                                         const DualRail& rail = {}) {
  PhotonicState::Terms out;
  for (const auto& [ket, amp] : state.terms()) {
    double phase = 0.0;
    for (const auto& m : ket.modes()) {
      if (m.path == rail.h_path) {
        phase += r.phi_h(m.time_ns);
      } else if (m.path == rail.v_path) {
        phase += r.phi_v(m.time_ns);
      } else if (!rail.bypass.contains(m.path)) {
        throw ConfigurationError("photon on path '" + m.path + "' is not on the channel");
      }
    }
    out.emplace(ket, amp * std::polar(1.0, phase));
  }
  return PhotonicState(std::move(out));
}

// Passage times of photons currently on the rails; what an OU realization
// has to be sampled at.
inline std::vector<double> channel_times(const PhotonicState& state, const DualRail& rail = {}) {
  std::set<double> ts;
  for (const auto& [ket, amp] : state.terms()) {
    for (const auto& m : ket.modes()) {
      if (m.path == rail.h_path || m.path == rail.v_path) ts.insert(m.time_ns);
    }
  }
  return {ts.begin(), ts.end()};
}

// One phase-orbit class: kets carrying n_h photons on the H rail and n_v on
// the V rail all acquire the same phase n_h φ_H + n_v φ_V.
struct PhaseBlock {
  int photons_h = 0;
  int photons_v = 0;
  double weight = 0.0;  // Gram norm of the block
  PhotonicState state;  // unnormalized component
};

// ρ averaged over independent uniform φ_H, φ_V: Σ_blocks |block><block|.
struct PhaseMixture {
  std::vector<PhaseBlock> blocks;

  double total_weight() const {
    double w = 0.0;
    for (const auto& b : blocks) w += b.weight;
    return w;
  }
};

// Uniform averaging kills every cross term between kets whose rail photon
// counts differ, so the channel output is block diagonal over (n_h, n_v).
inline PhaseMixture dephase_average(const PhotonicState& state, const NoiseModel& model,
                                    const OverlapKernel& kernel, const DualRail& rail = {}) {
  if (model.kind != NoiseKind::iid_uniform) {
    throw UnsupportedModelError("analytic phase averaging needs the IID uniform model");
  }
  std::map<std::pair<int, int>, PhotonicState::Terms> classes;
  for (const auto& [ket, amp] : state.terms()) {
    int nh = 0, nv = 0;
    for (const auto& m : ket.modes()) {
      if (m.path == rail.h_path) ++nh;
      if (m.path == rail.v_path) ++nv;
    }
    classes[{nh, nv}].emplace(ket, amp);
  }
  PhaseMixture mix;
  for (auto& [key, terms] : classes) {
    PhotonicState block(std::move(terms));
    const double w = gram_norm(block, kernel);
    mix.blocks.push_back({key.first, key.second, w, std::move(block)});
  }
  return mix;
}

}  // namespace paritylink
