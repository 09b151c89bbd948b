#pragma once

// Ancilla-assisted qubit transmission with parity checking.
//
// Alice: reference photon in |D> at t = 0 and signal α|H> + β|V> at t = Δt_A,
// merged on BS_A and split onto the rails C_H / C_V by PBS_A. The rails add
// phases φ_H, φ_V (and C_V lags by τ). Bob recombines on PBS_B, splits into
// long (L) and short (S) arms on BS_B, rotates L by 90° and delays it by
// Δt_B, and mixes the arms on PBS_P into detector modes X and Y. A D click on
// X within the central coincidence window leaves the signal on Y.
//
// Routing randomness is enumerated exactly; only channel phases are sampled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "paritylink/errors.hpp"
#include "paritylink/noise_channel.hpp"
#include "paritylink/optical_elements.hpp"
#include "paritylink/photonic_state.hpp"
#include "paritylink/tomography.hpp"

namespace paritylink {

namespace paths {
inline const std::string ref_arm = "ref_arm";
inline const std::string sig_arm = "sig_arm";
inline const std::string a = "A";
inline const std::string a_dump = "A_dump";
inline const std::string a_vac = "A_vac";
inline const std::string c_h = "C_H";
inline const std::string c_v = "C_V";
inline const std::string b = "B";
inline const std::string b_dump = "B_dump";
inline const std::string b_vac = "B_vac";
inline const std::string l = "L";
inline const std::string s = "S";
inline const std::string x = "X";
inline const std::string y = "Y";
inline const std::string x_vac = "X_vac";
inline const std::string x_d = "X_D";
inline const std::string x_dbar = "X_Dbar";
inline const std::string y_vac = "Y_vac";
inline const std::string y_pass = "Y_pass";
inline const std::string y_block = "Y_block";
}  // namespace paths

inline constexpr std::uint8_t kReferenceSource = 0;
inline constexpr std::uint8_t kSignalSource = 1;

// Paths that accept a transmittance in Scenario::transmittance.
inline const std::set<std::string>& lossy_paths() {
  static const std::set<std::string> p{paths::c_h, paths::c_v, paths::l,
                                       paths::s,   paths::x,   paths::y};
  return p;
}

struct ProtocolFlags {
  bool fast_switches = false;
  bool feed_forward = false;
};

enum class Scheme { ancilla, direct };

struct NamedInput {
  std::string name;
  JonesVector state;
};

inline std::vector<NamedInput> probe_inputs() {
  return {{"H", JonesVector::h()}, {"V", JonesVector::v()}, {"D", JonesVector::d()},
          {"L", JonesVector::l()}};
}

struct Scenario {
  std::vector<NamedInput> inputs = probe_inputs();
  double delta_t_a_ns = 3.0;
  double delta_t_b_ns = 3.0;
  double tau_ns = 0.0;
  OverlapKernel kernel{};
  NoiseModel noise{};
  double window_ns = 2.5;
  ProtocolFlags flags{};
  std::size_t trials = 100;
  bool analytic = false;  // exact phase average instead of Monte Carlo (IID uniform only)
  Scheme scheme = Scheme::ancilla;
  PhaseConvention convention = PhaseConvention::quadrature;
  std::map<std::string, double> transmittance;

  double transmittance_of(const std::string& path) const {
    auto it = transmittance.find(path);
    return it == transmittance.end() ? 1.0 : it->second;
  }

  // Throws on invalid settings; returns non-fatal warnings.
  std::vector<std::string> validate() const {
    std::vector<std::string> warnings;
    if (!(window_ns > 0.0)) throw ValidationError("coincidence window must be positive");
    if (trials < 1) throw ValidationError("trials must be at least 1");
    if (inputs.empty()) throw ValidationError("scenario needs at least one input state");
    if (!std::isfinite(delta_t_a_ns) || !std::isfinite(delta_t_b_ns) || !std::isfinite(tau_ns)) {
      throw ValidationError("delays must be finite");
    }
    if (!(delta_t_a_ns > 0.0)) throw ValidationError("delta_t_A must be positive");
    kernel.validate();
    noise.validate();
    for (const auto& [path, t] : transmittance) {
      if (!lossy_paths().contains(path)) {
        throw ValidationError("no loss element can be placed on path '" + path + "'");
      }
      if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("transmittance must lie in [0, 1]");
    }
    if (kSpeedOfLightUmPerNs * delta_t_a_ns < 10.0 * kernel.coherence_length_um) {
      warnings.push_back("c*delta_t_A is below 10 coherence lengths; time bins overlap");
    }
    if (std::abs(tau_ns) > window_ns / 2.0) {
      warnings.push_back("|tau| exceeds half the coincidence window; central peak is rejected");
    }
    if (flags.fast_switches && std::abs(tau_ns) >= delta_t_a_ns / 2.0) {
      throw ValidationError("fast switches need |tau| < delta_t_A / 2");
    }
    return warnings;
  }
};

// Exact rational for the ledger.
struct Fraction {
  long long num = 0;
  long long den = 1;

  static Fraction make(long long n, long long d) {
    if (d == 0) throw ValidationError("zero denominator");
    if (d < 0) n = -n, d = -d;
    const long long g = std::gcd(n < 0 ? -n : n, d);
    return g == 0 ? Fraction{0, 1} : Fraction{n / g, d / g};
  }
  friend Fraction operator+(Fraction a, Fraction b) {
    return make(a.num * b.den + b.num * a.den, a.den * b.den);
  }
  friend Fraction operator*(Fraction a, Fraction b) { return make(a.num * b.num, a.den * b.den); }
  friend bool operator==(const Fraction&, const Fraction&) = default;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

struct Branch {
  std::string label;
  double weight = 0.0;
  PhotonicState state;  // normalized
};

namespace detail {

inline const ModeLabel* find_source(const BasisKet& ket, std::uint8_t source) {
  for (const auto& m : ket.modes()) {
    if (m.source == source) return &m;
  }
  return nullptr;
}

inline Branch make_branch(std::string label, const PhotonicState& sub, const OverlapKernel& k) {
  const double w = gram_norm(sub, k);
  return {std::move(label), w, w > 0.0 ? sub.scaled(1.0 / std::sqrt(w)) : sub};
}

// Splits `state` by a ket classifier into weighted branches (in label order).
template <class Classify>
std::vector<Branch> split_branches(const PhotonicState& state, const OverlapKernel& kernel,
                                   Classify&& classify) {
  std::map<std::string, PhotonicState::Terms> groups;
  for (const auto& [ket, amp] : state.terms()) groups[classify(ket)].emplace(ket, amp);
  std::vector<Branch> out;
  for (auto& [label, terms] : groups) {
    out.push_back(make_branch(label, PhotonicState(std::move(terms)), kernel));
  }
  return out;
}

template <class T, class F>
std::vector<T> parallel_map(std::size_t n, std::size_t workers, F&& f) {
  std::vector<T> out(n);
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace detail

inline const Branch& find_branch(const std::vector<Branch>& branches, const std::string& label) {
  for (const auto& b : branches) {
    if (b.label == label) return b;
  }
  static const Branch empty{};
  return empty;
}

// ---------------------------------------------------------------- Alice

// HWP_S then LCR_S turn |H> into the signal (up to a global phase).
inline std::vector<OpticalElement> signal_preparation(const JonesVector& signal,
                                                      const std::string& path) {
  const double theta = std::atan2(std::abs(signal.beta()), std::abs(signal.alpha())) / 2.0;
  const double delta = (std::abs(signal.alpha()) > 0.0 && std::abs(signal.beta()) > 0.0)
                           ? std::arg(signal.beta()) - std::arg(signal.alpha())
                           : 0.0;
  return {half_wave_plate(path, theta), retarder(path, delta)};
}

inline Circuit alice_preparation_circuit(const JonesVector& signal, double delta_t_a_ns,
                                         const ProtocolFlags& flags) {
  std::vector<OpticalElement> el = signal_preparation(signal, paths::sig_arm);
  el.push_back(half_wave_plate(paths::ref_arm, std::numbers::pi / 8));
  if (flags.fast_switches) {
    el.push_back(time_switch(paths::ref_arm, paths::sig_arm, paths::a, paths::a_dump,
                             delta_t_a_ns / 2.0));
  } else {
    el.push_back(beam_splitter(paths::sig_arm, paths::ref_arm, paths::a, paths::a_dump));
  }
  return Circuit({paths::ref_arm, paths::sig_arm, paths::a, paths::a_dump}, std::move(el));
}

inline Circuit alice_split_circuit() {
  return Circuit({paths::a, paths::a_vac, paths::a_dump, paths::c_h, paths::c_v},
                 {polarizing_beam_splitter(paths::a, paths::a_vac, paths::c_h, paths::c_v)});
}

struct AliceOutput {
  PhotonicState prepared;       // after BS_A, before PBS_A
  PhotonicState channel_input;  // after PBS_A
  std::vector<Branch> branches;
};

inline PhotonicState source_photons(double delta_t_a_ns) {
  return tensor(
      PhotonicState({{BasisKet{ModeLabel{paths::ref_arm, Pol::H, 0.0, kReferenceSource}}, 1.0}}),
      PhotonicState(
          {{BasisKet{ModeLabel{paths::sig_arm, Pol::H, delta_t_a_ns, kSignalSource}}, 1.0}}));
}

inline AliceOutput run_alice(const JonesVector& signal, double delta_t_a_ns,
                             const ProtocolFlags& flags = {},
                             PhaseConvention convention = PhaseConvention::quadrature,
                             const OverlapKernel& kernel = {}) {
  AliceOutput out;
  out.prepared = apply_circuit(source_photons(delta_t_a_ns),
                               alice_preparation_circuit(signal, delta_t_a_ns, flags), convention);
  out.channel_input = apply_circuit(out.prepared, alice_split_circuit(), convention);
  out.branches = detail::split_branches(out.channel_input, kernel, [](const BasisKet& k) {
    const auto on_channel = [&](std::uint8_t src) {
      const ModeLabel* m = detail::find_source(k, src);
      return m && (m->path == paths::c_h || m->path == paths::c_v);
    };
    const bool r = on_channel(kReferenceSource), s = on_channel(kSignalSource);
    return std::string(r && s ? "both_to_channel" : r ? "reference_only" : s ? "signal_only"
                                                                               : "neither");
  });
  return out;
}

// ---------------------------------------------------------------- channel

inline DualRail protocol_rail() { return DualRail{paths::c_h, paths::c_v, {paths::a_dump}}; }

inline PhotonicState apply_channel(const PhotonicState& channel_input, const NoiseRealization& r,
                                   const Scenario& s) {
  PhotonicState out = apply_phase_channel(channel_input, r, protocol_rail());
  for (const auto* p : {&paths::c_h, &paths::c_v}) {
    if (s.transmittance_of(*p) < 1.0) out = apply_element(out, loss(*p, s.transmittance_of(*p)));
  }
  return out;
}

// ---------------------------------------------------------------- Bob

struct BobOutput {
  PhotonicState received;    // after PBS_B
  PhotonicState pre_parity;  // just before PBS_P
  PhotonicState output;      // after PBS_P
  std::vector<Branch> branches;
};

inline std::set<std::string> bob_paths() {
  return {paths::a_dump, paths::c_h, paths::c_v, paths::b, paths::b_dump, paths::b_vac,
          paths::l,      paths::s,   paths::x,   paths::y};
}

inline BobOutput run_bob(const PhotonicState& channel_state, double delta_t_b_ns, double tau_ns,
                         const ProtocolFlags& flags = {}, double delta_t_a_ns = 3.0,
                         PhaseConvention convention = PhaseConvention::quadrature,
                         const OverlapKernel& kernel = {},
                         const std::map<std::string, double>& transmittance = {}) {
  const auto t_of = [&](const std::string& p) {
    auto it = transmittance.find(p);
    return it == transmittance.end() ? 1.0 : it->second;
  };
  BobOutput out;
  out.received = apply_circuit(
      channel_state,
      Circuit(bob_paths(),
              {delay(paths::c_v, tau_ns),
               polarizing_beam_splitter(paths::c_h, paths::c_v, paths::b, paths::b_dump)}),
      convention);

  std::vector<OpticalElement> arms;
  if (flags.fast_switches) {
    arms.push_back(time_switch(paths::b, paths::b_vac, paths::l, paths::s,
                               (delta_t_a_ns + tau_ns) / 2.0));
  } else {
    arms.push_back(beam_splitter(paths::b, paths::b_vac, paths::l, paths::s));
  }
  arms.push_back(half_wave_plate(paths::l, std::numbers::pi / 4));
  arms.push_back(delay(paths::l, delta_t_b_ns));
  for (const auto* p : {&paths::l, &paths::s}) {
    if (t_of(*p) < 1.0) arms.push_back(loss(*p, t_of(*p)));
  }
  out.pre_parity = apply_circuit(out.received, Circuit(bob_paths(), std::move(arms)), convention);
  out.output = apply_circuit(
      out.pre_parity,
      Circuit(bob_paths(), {polarizing_beam_splitter(paths::s, paths::l, paths::x, paths::y)}),
      convention);

  out.branches = detail::split_branches(out.pre_parity, kernel, [](const BasisKet& k) {
    const ModeLabel* r = detail::find_source(k, kReferenceSource);
    const ModeLabel* s = detail::find_source(k, kSignalSource);
    const auto arm = [](const ModeLabel* m) {
      return !m ? 'x' : m->path == paths::l ? 'L' : m->path == paths::s ? 'S' : 'x';
    };
    const char ra = arm(r), sa = arm(s);
    if (ra == 'x' || sa == 'x') return std::string("rejected");
    if (sa == 'S' && ra == 'L') return std::string("signal_S_reference_L");
    if (sa == 'S' && ra == 'S') return std::string("both_S");
    if (sa == 'L' && ra == 'L') return std::string("both_L");
    return std::string("signal_L_reference_S");
  });
  return out;
}

// ---------------------------------------------------------------- detection

enum class Pattern { xy, xx, yy, single, none };
enum class XResult { none, d, dbar };
enum class YResult { none, pass, block };

inline const char* to_string(Pattern p) {
  switch (p) {
    case Pattern::xy: return "XY";
    case Pattern::xx: return "XX";
    case Pattern::yy: return "YY";
    case Pattern::single: return "single";
    case Pattern::none: return "none";
  }
  return "?";
}

struct DetectionOutcome {
  Pattern pattern = Pattern::none;
  XResult x = XResult::none;
  YResult y = YResult::none;
  int peak = 0;           // round((t_X - t_Y) / Δt_A), XY only
  bool in_window = false;  // |t_X - t_Y| <= window / 2, XY only
  double delay_ns = 0.0;   // amplitude-weighted t_X - t_Y
  double probability = 0.0;
};

struct Histogram {
  double lo_ns = 0.0;
  double bin_ns = 0.1;
  std::vector<double> weights;

  double bin_center(std::size_t i) const {
    return lo_ns + (static_cast<double>(i) + 0.5) * bin_ns;
  }
};

struct DetectionTable {
  std::vector<DetectionOutcome> outcomes;
  Histogram histogram;  // XY coincidences with a D result on X

  double total() const {
    double t = 0.0;
    for (const auto& o : outcomes) t += o.probability;
    return t;
  }
  double probability(Pattern p, XResult x, YResult y, bool central_only) const {
    double t = 0.0;
    for (const auto& o : outcomes) {
      if (o.pattern == p && o.x == x && o.y == y && (!central_only || o.in_window)) {
        t += o.probability;
      }
    }
    return t;
  }
};

// HWP_X at 22.5° + PBS_X: D exits on X_D, D̄ on X_Dbar.
inline Circuit x_analyzer(double transmittance = 1.0) {
  std::vector<OpticalElement> el;
  if (transmittance < 1.0) el.push_back(loss(paths::x, transmittance));
  el.push_back(half_wave_plate(paths::x, std::numbers::pi / 8));
  el.push_back(polarizing_beam_splitter(paths::x, paths::x_vac, paths::x_d, paths::x_dbar));
  auto p = bob_paths();
  p.insert({paths::x_vac, paths::x_d, paths::x_dbar, paths::y_vac, paths::y_pass, paths::y_block});
  return Circuit(std::move(p), std::move(el));
}

inline Circuit y_analyzer(const std::optional<MeasurementSetting>& setting,
                          double transmittance = 1.0) {
  std::vector<OpticalElement> el;
  if (transmittance < 1.0) el.push_back(loss(paths::y, transmittance));
  if (setting) {
    el.push_back(quarter_wave_plate(paths::y, setting->qwp_angle));
    el.push_back(half_wave_plate(paths::y, setting->hwp_angle));
    el.push_back(polarizing_beam_splitter(paths::y, paths::y_vac, paths::y_pass, paths::y_block));
  }
  auto p = bob_paths();
  p.insert({paths::x_vac, paths::x_d, paths::x_dbar, paths::y_vac, paths::y_pass, paths::y_block});
  return Circuit(std::move(p), std::move(el));
}

struct DetectionSettings {
  OverlapKernel kernel{};
  double window_ns = 2.5;
  double delta_t_a_ns = 3.0;
  std::optional<MeasurementSetting> y_setting;
  PhaseConvention convention = PhaseConvention::quadrature;
  double x_transmittance = 1.0;
  double y_transmittance = 1.0;
};

// Outcome probabilities of the state leaving PBS_P. Kets are grouped by what
// the detectors can tell apart (pattern, results, coincidence peak); each
// group's probability is its Gram norm, so near-coincident kets interfere.
inline DetectionTable detect(const PhotonicState& parity_output, const DetectionSettings& ds) {
  if (!(ds.window_ns > 0.0)) throw ValidationError("coincidence window must be positive");
  const PhotonicState analysed = apply_circuit(
      apply_circuit(parity_output, x_analyzer(ds.x_transmittance), ds.convention),
      y_analyzer(ds.y_setting, ds.y_transmittance), ds.convention);

  struct Key {
    Pattern pattern;
    XResult x;
    YResult y;
    int peak;
    bool in_window;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, PhotonicState::Terms> groups;
  std::map<Key, std::pair<double, double>> delay_acc;  // Σ|a|² Δ, Σ|a|²
  std::map<long, PhotonicState::Terms> bins;

  // 0.1 ns bins centred on multiples of 0.1 ns, spanning ±2.5 Δt_A.
  const double span = 2.5 * ds.delta_t_a_ns;
  Histogram hist;
  hist.bin_ns = 0.1;
  const long half_bins = std::lround(span / hist.bin_ns);
  hist.lo_ns = -(static_cast<double>(half_bins) + 0.5) * hist.bin_ns;
  hist.weights.assign(static_cast<std::size_t>(2 * half_bins + 1), 0.0);
  const double hi_ns = -hist.lo_ns;

  for (const auto& [ket, amp] : analysed.terms()) {
    std::vector<const ModeLabel*> xs, ys;
    for (const auto& m : ket.modes()) {
      if (m.path == paths::x_d || m.path == paths::x_dbar) xs.push_back(&m);
      if (m.path == paths::y || m.path == paths::y_pass || m.path == paths::y_block) {
        ys.push_back(&m);
      }
    }
    Key key{Pattern::none, XResult::none, YResult::none, 0, false};
    double dt = 0.0;
    if (xs.size() == 1 && ys.size() == 1) {
      dt = xs[0]->time_ns - ys[0]->time_ns;
      key.pattern = Pattern::xy;
      key.x = xs[0]->path == paths::x_d ? XResult::d : XResult::dbar;
      key.y = ys[0]->path == paths::y_block ? YResult::block : YResult::pass;
      key.peak = static_cast<int>(std::lround(dt / ds.delta_t_a_ns));
      key.in_window = std::abs(dt) <= ds.window_ns / 2.0;
      if (key.x == XResult::d && key.y == YResult::pass && dt >= hist.lo_ns && dt < hi_ns) {
        bins[std::lround(dt / hist.bin_ns) + half_bins].emplace(ket, amp);
      }
    } else if (xs.size() == 2) {
      key.pattern = Pattern::xx;
    } else if (ys.size() == 2) {
      key.pattern = Pattern::yy;
    } else if (xs.size() + ys.size() == 1) {
      key.pattern = Pattern::single;
    }
    groups[key].emplace(ket, amp);
    auto& acc = delay_acc[key];
    acc.first += std::norm(amp) * dt;
    acc.second += std::norm(amp);
  }

  DetectionTable table;
  for (auto& [key, terms] : groups) {
    DetectionOutcome o{key.pattern, key.x, key.y, key.peak, key.in_window, 0.0, 0.0};
    const auto& acc = delay_acc[key];
    o.delay_ns = acc.second > 0.0 ? acc.first / acc.second : 0.0;
    o.probability = gram_norm(PhotonicState(std::move(terms)), ds.kernel);
    table.outcomes.push_back(o);
  }
  for (auto& [bin, terms] : bins) {
    if (bin >= 0 && static_cast<std::size_t>(bin) < hist.weights.size()) {
      hist.weights[static_cast<std::size_t>(bin)] +=
          gram_norm(PhotonicState(std::move(terms)), ds.kernel);
    }
  }
  table.histogram = std::move(hist);
  return table;
}

// Joint (unnormalized) Y polarization matrix for central-window XY events
// with the given X result. Trace = probability of the event.
inline Eigen::Matrix2cd conditional_output_matrix(const PhotonicState& parity_output,
                                                  const DetectionSettings& ds, XResult which) {
  const PhotonicState analysed =
      apply_circuit(parity_output, x_analyzer(ds.x_transmittance), ds.convention);
  const std::string& x_path = which == XResult::d ? paths::x_d : paths::x_dbar;
  const PhotonicState accepted = analysed.filter([&](const BasisKet& k) {
    const ModeLabel* xm = nullptr;
    const ModeLabel* ym = nullptr;
    int nx = 0, ny = 0;
    for (const auto& m : k.modes()) {
      if (m.path == paths::x_d || m.path == paths::x_dbar) ++nx, xm = &m;
      if (m.path == paths::y) ++ny, ym = &m;
    }
    return nx == 1 && ny == 1 && xm->path == x_path &&
           std::abs(xm->time_ns - ym->time_ns) <= ds.window_ns / 2.0;
  });
  return ds.y_transmittance * reduced_polarization(accepted, ds.kernel, paths::y);
}

struct ConditionalQubit {
  DensityMatrix2 rho;
  double probability = 0.0;
};

// D outcome; with feed-forward the D̄ outcome is phase-flipped (Z on Y) and merged.
inline Eigen::Matrix2cd accepted_output_matrix(const PhotonicState& parity_output,
                                               const DetectionSettings& ds, bool feed_forward) {
  Eigen::Matrix2cd joint = conditional_output_matrix(parity_output, ds, XResult::d);
  if (feed_forward) {
    const Eigen::Matrix2cd z = pauli(3);
    joint += z * conditional_output_matrix(parity_output, ds, XResult::dbar) * z;
  }
  return joint;
}

inline ConditionalQubit extract_output_qubit(const Eigen::Matrix2cd& joint) {
  const double p = joint.trace().real();
  if (!(p > 1e-300)) {
    throw UndefinedConditionalError("conditioning event has zero probability");
  }
  return {DensityMatrix2::normalized(joint), p};
}

inline ConditionalQubit extract_output_qubit(const PhotonicState& parity_output,
                                             const DetectionSettings& ds, bool feed_forward) {
  return extract_output_qubit(accepted_output_matrix(parity_output, ds, feed_forward));
}

// ---------------------------------------------------------------- pipeline

inline DetectionSettings detection_settings(const Scenario& s) {
  DetectionSettings ds;
  ds.kernel = s.kernel;
  ds.window_ns = s.window_ns;
  ds.delta_t_a_ns = s.delta_t_a_ns;
  ds.convention = s.convention;
  ds.x_transmittance = s.transmittance_of(paths::x);
  ds.y_transmittance = s.transmittance_of(paths::y);
  return ds;
}

// Bob's output (after PBS_P) for a channel state that already carries its phases.
inline PhotonicState bob_output(const Scenario& s, const PhotonicState& channel_state) {
  return run_bob(channel_state, s.delta_t_b_ns, s.tau_ns, s.flags, s.delta_t_a_ns, s.convention,
                 s.kernel, s.transmittance)
      .output;
}

// Direct transmission without an ancilla: signal -> PBS_A -> rails -> PBS_B.
inline PhotonicState direct_channel_input(const JonesVector& signal, PhaseConvention convention) {
  auto el = signal_preparation(signal, paths::a);
  el.push_back(polarizing_beam_splitter(paths::a, paths::a_vac, paths::c_h, paths::c_v));
  return apply_circuit(
      PhotonicState({{BasisKet{ModeLabel{paths::a, Pol::H, 0.0, kSignalSource}}, 1.0}}),
      Circuit({paths::a, paths::a_vac, paths::c_h, paths::c_v}, std::move(el)), convention);
}

inline Eigen::Matrix2cd direct_output_matrix(const Scenario& s,
                                             const PhotonicState& channel_state) {
  const PhotonicState received = apply_circuit(
      channel_state,
      Circuit({paths::c_h, paths::c_v, paths::b, paths::b_dump},
              {delay(paths::c_v, s.tau_ns),
               polarizing_beam_splitter(paths::c_h, paths::c_v, paths::b, paths::b_dump)}),
      s.convention);
  return reduced_polarization(received, s.kernel, paths::b);
}

inline PhotonicState channel_input_for(const Scenario& s, const JonesVector& signal) {
  if (s.scheme == Scheme::direct) return direct_channel_input(signal, s.convention);
  return run_alice(signal, s.delta_t_a_ns, s.flags, s.convention, s.kernel).channel_input;
}

// Accepted joint output matrix for one channel state carrying its phases.
inline Eigen::Matrix2cd accepted_for_channel_state(const Scenario& s,
                                                   const PhotonicState& channel_state) {
  if (s.scheme == Scheme::direct) return direct_output_matrix(s, channel_state);
  return accepted_output_matrix(bob_output(s, channel_state), detection_settings(s),
                                s.flags.feed_forward);
}

// Noise average of f(channel state with phases applied). Analytic mode sums f
// over the phase-orbit blocks; otherwise trials are averaged in index order,
// so the result does not depend on the worker count.
template <class T, class F>
T average_over_noise(const Scenario& s, const PhotonicState& channel_input, F&& f,
                     std::size_t workers = 1) {
  DualRail rail = protocol_rail();
  if (s.analytic) {
    const PhaseMixture mix = dephase_average(channel_input, s.noise, s.kernel, rail);
    T acc = f(apply_channel(mix.blocks.front().state, NoiseRealization::constant(0, 0), s));
    for (std::size_t i = 1; i < mix.blocks.size(); ++i) {
      acc += f(apply_channel(mix.blocks[i].state, NoiseRealization::constant(0, 0), s));
    }
    return acc;
  }
  const std::vector<double> times = channel_times(channel_input, rail);
  auto per_trial = detail::parallel_map<T>(s.trials, workers, [&](std::size_t t) {
    Rng rng = stream_rng(s.noise.seed, t);
    const NoiseRealization r = sample_realization(s.noise, rng, times);
    return f(apply_channel(channel_input, r, s));
  });
  T acc = per_trial.front();
  for (std::size_t i = 1; i < per_trial.size(); ++i) acc += per_trial[i];
  return acc / static_cast<double>(s.trials);
}

// ---------------------------------------------------------------- ledger

// Exhaustive route enumeration with exact rationals: each photon's routing at
// BS_A / BS_B, the reference's polarization on the rails, and the X readout.
// The signal's own polarization enters with weights |α|², |β|²; the two
// coefficients must agree, which makes the result input independent.
inline Fraction enumerate_success_probability(const ProtocolFlags& flags, double delta_t_a_ns,
                                              double delta_t_b_ns, double tau_ns,
                                              double window_ns) {
  const Fraction half{1, 2}, one{1, 1}, zero{0, 1};
  Fraction coeff[2] = {zero, zero};  // [signal H, signal V]
  struct Route {
    bool taken;
    Fraction p;
  };
  // Alice: photon reaches the channel port of BS_A.
  const std::vector<Route> alice_routes =
      flags.fast_switches ? std::vector<Route>{{true, one}, {false, zero}}
                          : std::vector<Route>{{true, half}, {false, half}};
  for (const auto& ra : alice_routes) {
    for (const auto& sa : alice_routes) {
      if (!(ra.taken && sa.taken)) continue;
      for (int ref_pol = 0; ref_pol < 2; ++ref_pol) {
        for (int sig_pol = 0; sig_pol < 2; ++sig_pol) {
          // Bob: true = long arm.
          for (int ref_long = 0; ref_long < 2; ++ref_long) {
            for (int sig_long = 0; sig_long < 2; ++sig_long) {
              Fraction p = ra.p * sa.p * half;  // reference |D>: 1/2 per rail
              if (flags.fast_switches) {
                if (!(ref_long == 1 && sig_long == 0)) continue;
              } else {
                p = p * half * half;
              }
              const auto land = [&](int pol, int is_long, double t0, int& det, double& t) {
                t = t0 + (pol == 1 ? tau_ns : 0.0) + (is_long ? delta_t_b_ns : 0.0);
                const int out_pol = is_long ? 1 - pol : pol;
                // PBS_P: S-H -> X, S-V -> Y, L-H -> Y, L-V -> X.
                det = is_long ? (out_pol == 0 ? 1 : 0) : (out_pol == 0 ? 0 : 1);
              };
              int rd = 0, sd = 0;
              double rt = 0.0, st = 0.0;
              land(ref_pol, ref_long, 0.0, rd, rt);
              land(sig_pol, sig_long, delta_t_a_ns, sd, st);
              if (rd == sd) continue;
              const double dt = rd == 0 ? rt - st : st - rt;
              if (std::abs(dt) > window_ns / 2.0) continue;
              p = p * (flags.feed_forward ? one : half);
              coeff[sig_pol] = coeff[sig_pol] + p;
            }
          }
        }
      }
    }
  }
  if (!(coeff[0] == coeff[1])) {
    throw ValidationError("success probability depends on the signal state");
  }
  return coeff[0];
}

struct SuccessLedger {
  double p_prep = 0.0;
  double p_route = 0.0;
  double p_parity = 0.0;
  double p_readout = 0.0;
  double p_transmission = 1.0;
  double p_total = 0.0;
  double simulated_total = 0.0;  // accepted probability straight from the pipeline
  Fraction exact_lossless_total;
};

inline SuccessLedger compute_ledger(const Scenario& s) {
  s.validate();
  if (s.scheme != Scheme::ancilla) throw ValidationError("the ledger needs the ancilla scheme");
  const JonesVector probe = s.inputs.front().state;
  Scenario lossless = s;
  lossless.transmittance.clear();
  const auto zero = NoiseRealization::constant(0.0, 0.0);

  SuccessLedger led;
  const AliceOutput alice =
      run_alice(probe, s.delta_t_a_ns, s.flags, s.convention, s.kernel);
  led.p_prep = find_branch(alice.branches, "both_to_channel").weight;

  const BobOutput bob = run_bob(apply_channel(alice.channel_input, zero, lossless),
                                s.delta_t_b_ns, s.tau_ns, s.flags, s.delta_t_a_ns, s.convention,
                                s.kernel);
  const Branch& routed = find_branch(bob.branches, "signal_S_reference_L");
  led.p_route = led.p_prep > 0.0 ? routed.weight / led.p_prep : 0.0;

  // XY split within the routed branch.
  const PhotonicState routed_out = apply_circuit(
      routed.state,
      Circuit(bob_paths(), {polarizing_beam_splitter(paths::s, paths::l, paths::x, paths::y)}),
      s.convention);
  const PhotonicState split = routed_out.filter([](const BasisKet& k) {
    int nx = 0, ny = 0;
    for (const auto& m : k.modes()) nx += m.path == paths::x, ny += m.path == paths::y;
    return nx == 1 && ny == 1;
  });
  led.p_parity = gram_norm(split, s.kernel);

  const double lossless_accept =
      accepted_output_matrix(bob.output, detection_settings(lossless), s.flags.feed_forward)
          .trace()
          .real();
  const double base = led.p_prep * led.p_route * led.p_parity;
  led.p_readout = base > 0.0 ? lossless_accept / base : 0.0;

  const PhotonicState lossy_channel = apply_channel(alice.channel_input, zero, s);
  led.simulated_total = accepted_for_channel_state(s, lossy_channel).trace().real();
  led.p_transmission = lossless_accept > 0.0 ? led.simulated_total / lossless_accept : 0.0;
  led.p_total = led.p_prep * led.p_route * led.p_parity * led.p_readout * led.p_transmission;
  led.exact_lossless_total = enumerate_success_probability(s.flags, s.delta_t_a_ns,
                                                           s.delta_t_b_ns, s.tau_ns, s.window_ns);
  return led;
}

struct BudgetRow {
  ProtocolFlags flags;
  SuccessLedger ledger;
};

inline std::vector<BudgetRow> budget_table(const Scenario& s) {
  std::vector<BudgetRow> rows;
  for (bool sw : {false, true}) {
    for (bool ff : {false, true}) {
      Scenario v = s;
      v.flags = {sw, ff};
      rows.push_back({v.flags, compute_ledger(v)});
    }
  }
  return rows;
}

// ---------------------------------------------------------------- reports

struct InputReport {
  std::string name;
  JonesVector input;
  DensityMatrix2 rho;
  double fidelity = 0.0;
  double accepted_probability = 0.0;
  Histogram histogram;
};

struct ProcessReport {
  ChiMatrix chi;
  double entanglement_fidelity = 0.0;
  double average_fidelity = 0.0;
};

struct ScenarioReport {
  std::vector<InputReport> inputs;
  std::optional<SuccessLedger> ledger;
  std::optional<double> visibility;
  std::optional<ProcessReport> process;
  std::vector<std::string> warnings;
};

// Central-window rates for X = D with Y analysed in D and D̄, input |D>.
inline Eigen::Vector2d fringe_rates(const Scenario& s, std::size_t workers = 1) {
  const PhotonicState input = channel_input_for(s, JonesVector::d());
  const DetectionSettings ds = detection_settings(s);
  const Eigen::Vector2cd d = to_vector(JonesVector::d());
  const Eigen::Vector2cd dbar = to_vector(JonesVector::dbar());
  return average_over_noise<Eigen::Vector2d>(
      s, input,
      [&](const PhotonicState& channel) {
        const Eigen::Matrix2cd joint =
            conditional_output_matrix(bob_output(s, channel), ds, XResult::d);
        return Eigen::Vector2d((d.adjoint() * joint * d)(0, 0).real(),
                               (dbar.adjoint() * joint * dbar)(0, 0).real());
      },
      workers);
}

inline double visibility_of(const Eigen::Vector2d& rates) {
  const double hi = rates.maxCoeff(), lo = rates.minCoeff();
  return hi + lo > 0.0 ? (hi - lo) / (hi + lo) : 0.0;
}

// Process tomography from the four probe outputs when all four are present.
inline std::optional<ProcessReport> process_report(const std::vector<InputReport>& inputs) {
  std::vector<DensityMatrix2> probes;
  for (const char* name : {"H", "V", "D", "L"}) {
    auto it = std::find_if(inputs.begin(), inputs.end(),
                           [&](const InputReport& r) { return r.name == name; });
    if (it == inputs.end()) return std::nullopt;
    probes.push_back(it->rho);
  }
  ChiMatrix chi = reconstruct_process(probes);
  const double fe = entanglement_fidelity(chi);
  return ProcessReport{chi, fe, average_fidelity(std::clamp(fe, 0.0, 1.0))};
}

inline ScenarioReport run_endtoend(const Scenario& s, std::size_t workers = 1) {
  ScenarioReport report;
  report.warnings = s.validate();
  for (const auto& in : s.inputs) {
    const PhotonicState channel_input = channel_input_for(s, in.state);
    const Eigen::Matrix2cd joint = average_over_noise<Eigen::Matrix2cd>(
        s, channel_input,
        [&](const PhotonicState& channel) { return accepted_for_channel_state(s, channel); },
        workers);
    const ConditionalQubit q = extract_output_qubit(joint);
    InputReport r{in.name, in.state, q.rho, fidelity(q.rho, in.state), q.probability, {}};
    if (s.scheme == Scheme::ancilla) {
      r.histogram = detect(bob_output(s, apply_channel(channel_input,
                                                       NoiseRealization::constant(0, 0), s)),
                           detection_settings(s))
                        .histogram;
    }
    report.inputs.push_back(std::move(r));
  }
  report.process = process_report(report.inputs);
  if (s.scheme == Scheme::ancilla) {
    report.ledger = compute_ledger(s);
    report.visibility = visibility_of(fringe_rates(s, workers));
  }
  return report;
}

// ---------------------------------------------------------------- fringe scan

struct ScanPoint {
  double offset_um = 0.0;  // optical path of Δt_B - Δt_A
  double rate_d = 0.0;
  double rate_dbar = 0.0;
  double visibility = 0.0;
};

struct GaussianFit {
  bool ok = false;
  double amplitude = 0.0;
  double center_um = 0.0;
  double fwhm_um = 0.0;
  std::string note;
};

// Least-squares fit of a·exp(-4 ln2 (x - x0)² / w²) by Levenberg-Marquardt.
inline GaussianFit fit_gaussian(const std::vector<double>& xs, const std::vector<double>& ys) {
  GaussianFit fit;
  if (xs.size() != ys.size()) throw ValidationError("fit needs equally many x and y values");
  if (xs.size() < 4) {
    fit.note = "too few points to fit";
    return fit;
  }
  const auto peak_it = std::max_element(ys.begin(), ys.end());
  const std::size_t ip = static_cast<std::size_t>(peak_it - ys.begin());
  if (!(*peak_it > 1e-9)) {
    fit.note = "no fringe";
    return fit;
  }
  // Initial width from the half-maximum crossings.
  const double half = *peak_it / 2.0;
  double left = xs.front(), right = xs.back();
  for (std::size_t i = ip; i > 0; --i) {
    if (ys[i - 1] < half) {
      left = xs[i - 1] + (half - ys[i - 1]) * (xs[i] - xs[i - 1]) / (ys[i] - ys[i - 1]);
      break;
    }
  }
  for (std::size_t i = ip; i + 1 < xs.size(); ++i) {
    if (ys[i + 1] < half) {
      right = xs[i] + (ys[i] - half) * (xs[i + 1] - xs[i]) / (ys[i] - ys[i + 1]);
      break;
    }
  }
  Eigen::Vector3d p(*peak_it, xs[ip], std::max(right - left, 1e-6));
  const double k = 4.0 * std::numbers::ln2;
  const auto residuals = [&](const Eigen::Vector3d& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r.resize(static_cast<Eigen::Index>(xs.size()));
    if (jac) jac->resize(r.size(), 3);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double u = xs[i] - q(1);
      const double e = std::exp(-k * u * u / (q(2) * q(2)));
      const auto ii = static_cast<Eigen::Index>(i);
      r(ii) = q(0) * e - ys[i];
      if (jac) {
        (*jac)(ii, 0) = e;
        (*jac)(ii, 1) = q(0) * e * 2.0 * k * u / (q(2) * q(2));
        (*jac)(ii, 2) = q(0) * e * 2.0 * k * u * u / (q(2) * q(2) * q(2));
      }
    }
  };
  double lambda = 1e-3;
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  residuals(p, r, &jac);
  double cost = r.squaredNorm();
  for (int it = 0; it < 200; ++it) {
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    const Eigen::Vector3d g = jac.transpose() * r;
    Eigen::Matrix3d a = jtj;
    a.diagonal() *= (1.0 + lambda);
    const Eigen::Vector3d step = a.ldlt().solve(-g);
    const Eigen::Vector3d trial = p + step;
    Eigen::VectorXd rt;
    residuals(trial, rt, nullptr);
    const double trial_cost = rt.squaredNorm();
    if (trial_cost < cost) {
      p = trial;
      cost = trial_cost;
      residuals(p, r, &jac);
      lambda = std::max(lambda / 10.0, 1e-12);
      if (step.norm() < 1e-12 * (1.0 + p.norm())) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  fit.ok = true;
  fit.amplitude = p(0);
  fit.center_um = p(1);
  fit.fwhm_um = std::abs(p(2));
  return fit;
}

struct ScanResult {
  std::vector<ScanPoint> points;
  GaussianFit fit;
  std::vector<std::string> warnings;
};

inline std::vector<double> scan_offsets(double start_um, double stop_um, double step_um,
                                        std::vector<std::string>* warnings = nullptr) {
  if (!(step_um > 0.0) || !std::isfinite(start_um) || !std::isfinite(stop_um)) {
    throw ValidationError("scan needs a finite range and a positive step");
  }
  if (stop_um < start_um) throw ValidationError("scan stop lies before start");
  if (step_um > stop_um - start_um) {
    if (warnings) warnings->push_back("scan step exceeds the range; single point only");
    return {start_um};
  }
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((stop_um - start_um) / step_um + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(start_um + static_cast<double>(i) * step_um);
  return out;
}

inline ScanResult interference_scan(const Scenario& s, const std::vector<double>& offsets_um,
                                    std::size_t workers = 1) {
  ScanResult out;
  out.warnings = s.validate();
  if (s.scheme != Scheme::ancilla) throw ValidationError("the fringe scan needs the ancilla scheme");
  for (double x : offsets_um) {
    Scenario v = s;
    v.delta_t_b_ns = s.delta_t_a_ns + x / kSpeedOfLightUmPerNs;
    const Eigen::Vector2d rates = fringe_rates(v, workers);
    out.points.push_back({x, rates(0), rates(1), visibility_of(rates)});
  }
  std::vector<double> xs, ys;
  for (const auto& p : out.points) xs.push_back(p.offset_um), ys.push_back(p.visibility);
  out.fit = fit_gaussian(xs, ys);
  return out;
}

}  // namespace paritylink
