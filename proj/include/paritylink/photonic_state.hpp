#pragma once

// Few-photon pure states over labelled optical modes.
//
// A ket stores up to two creation operators a†(m1) a†(m2) acting on vacuum.
// Mode labels carry a continuous arrival time, so kets that differ only in
// time are not orthogonal; every norm and inner product goes through the
// overlap kernel (the Gram form) instead of a plain sum of |amplitude|^2.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "paritylink/errors.hpp"

namespace paritylink {

using cplx = std::complex<double>;
inline constexpr cplx kI{0.0, 1.0};

inline constexpr double kSpeedOfLightUmPerNs = 299792.458;
inline constexpr std::size_t kMaxPhotons = 2;
inline constexpr double kPruneThreshold = 1e-15;

enum class Pol : std::uint8_t { H = 0, V = 1 };

inline const char* to_string(Pol p) { return p == Pol::H ? "H" : "V"; }

// One optical mode: spatial path, polarization, arrival time (ns) and the
// source photon whose wavepacket occupies it. Keys compare exactly; physics
// only ever looks at times through OverlapKernel.
struct ModeLabel {
  std::string path;
  Pol pol = Pol::H;
  double time_ns = 0.0;
  std::uint8_t source = 0;

  friend bool operator==(const ModeLabel&, const ModeLabel&) = default;
  friend bool operator<(const ModeLabel& a, const ModeLabel& b) {
    return std::tie(a.path, a.pol, a.time_ns, a.source) <
           std::tie(b.path, b.pol, b.time_ns, b.source);
  }
};

class BasisKet {
 public:
  BasisKet() = default;
  BasisKet(std::initializer_list<ModeLabel> modes)
      : BasisKet(std::span<const ModeLabel>(modes.begin(), modes.size())) {}

  explicit BasisKet(std::span<const ModeLabel> modes) {
    if (modes.size() > kMaxPhotons) {
      throw CapacityError("ket holds at most " + std::to_string(kMaxPhotons) +
                          " photons, got " + std::to_string(modes.size()));
    }
    for (const auto& m : modes) {
      if (!std::isfinite(m.time_ns)) throw ValidationError("mode time must be finite");
    }
    std::copy(modes.begin(), modes.end(), modes_.begin());
    count_ = modes.size();
    std::sort(modes_.begin(), modes_.begin() + static_cast<std::ptrdiff_t>(count_));
  }

  std::span<const ModeLabel> modes() const { return {modes_.data(), count_}; }
  std::size_t photon_count() const { return count_; }
  const ModeLabel& operator[](std::size_t i) const { return modes_[i]; }

  friend bool operator==(const BasisKet& a, const BasisKet& b) {
    return std::ranges::equal(a.modes(), b.modes());
  }
  friend bool operator<(const BasisKet& a, const BasisKet& b) {
    const auto ma = a.modes(), mb = b.modes();
    return std::lexicographical_compare(ma.begin(), ma.end(), mb.begin(), mb.end());
  }

 private:
  std::array<ModeLabel, kMaxPhotons> modes_{};
  std::size_t count_ = 0;
};

// Sparse superposition Σ amplitude · ket. Immutable once built.
class PhotonicState {
 public:
  using Terms = std::map<BasisKet, cplx>;

  PhotonicState() = default;

  explicit PhotonicState(Terms terms) {
    for (auto it = terms.begin(); it != terms.end();) {
      if (std::abs(it->second) < kPruneThreshold) {
        it = terms.erase(it);
      } else {
        ++it;
      }
    }
    if (!terms.empty()) {
      photon_count_ = terms.begin()->first.photon_count();
      for (const auto& [ket, amp] : terms) {
        if (ket.photon_count() != photon_count_) {
          throw ValidationError("all kets of a state must hold the same photon count");
        }
      }
    }
    terms_ = std::move(terms);
  }

  const Terms& terms() const { return terms_; }
  std::size_t photon_count() const { return photon_count_; }
  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }

  cplx amplitude(const BasisKet& ket) const {
    auto it = terms_.find(ket);
    return it == terms_.end() ? cplx{} : it->second;
  }

  template <class Pred>
  PhotonicState filter(Pred&& keep) const {
    Terms out;
    for (const auto& [ket, amp] : terms_) {
      if (keep(ket)) out.emplace(ket, amp);
    }
    return PhotonicState(std::move(out));
  }

  PhotonicState scaled(cplx factor) const {
    Terms out;
    for (const auto& [ket, amp] : terms_) out.emplace(ket, amp * factor);
    return PhotonicState(std::move(out));
  }

  friend PhotonicState operator+(const PhotonicState& a, const PhotonicState& b) {
    Terms out = a.terms_;
    for (const auto& [ket, amp] : b.terms_) out[ket] += amp;
    return PhotonicState(std::move(out));
  }

 private:
  Terms terms_;
  std::size_t photon_count_ = 0;
};

// Temporal-mode overlap between wavepackets.
//
// g(Δ) = exp(-4 ln2 (cΔ)^2 / (√2 l_c)^2) for one photon; two-photon fringes
// multiply two such factors, giving an envelope of FWHM l_c. Wavepackets from
// different sources additionally overlap by √v_m, so the two-photon fringe
// visibility at zero delay is v_m.
struct OverlapKernel {
  double coherence_length_um = 75.0;
  double distinguishability = 1.0;  // v_m

  void validate() const {
    if (!(coherence_length_um > 0.0) || !std::isfinite(coherence_length_um)) {
      throw ValidationError("coherence length must be positive");
    }
    if (!(distinguishability >= 0.0 && distinguishability <= 1.0)) {
      throw ValidationError("distinguishability v_m must lie in [0, 1]");
    }
  }

  double envelope(double delta_ns) const {
    const double path_um = kSpeedOfLightUmPerNs * delta_ns;
    const double width = std::numbers::sqrt2 * coherence_length_um;
    return std::exp(-4.0 * std::numbers::ln2 * path_um * path_um / (width * width));
  }

  double overlap(const ModeLabel& a, const ModeLabel& b) const {
    if (a.pol != b.pol || a.path != b.path) return 0.0;
    const double g = envelope(a.time_ns - b.time_ns);
    return a.source == b.source ? g : std::sqrt(distinguishability) * g;
  }
};

// <bra|ket> for creation-operator kets: the permanent of the mode-overlap
// matrix (bosonic symmetrization).
inline double ket_overlap(const BasisKet& bra, const BasisKet& ket, const OverlapKernel& kernel) {
  if (bra.photon_count() != ket.photon_count()) return 0.0;
  switch (ket.photon_count()) {
    case 0:
      return 1.0;
    case 1:
      return kernel.overlap(bra[0], ket[0]);
    default:
      return kernel.overlap(bra[0], ket[0]) * kernel.overlap(bra[1], ket[1]) +
             kernel.overlap(bra[0], ket[1]) * kernel.overlap(bra[1], ket[0]);
  }
}

// <a|b> under the Gram form.
inline cplx inner_product(const PhotonicState& a, const PhotonicState& b,
                          const OverlapKernel& kernel) {
  cplx sum{};
  for (const auto& [bra, ca] : a.terms()) {
    for (const auto& [ket, cb] : b.terms()) {
      const double g = ket_overlap(bra, ket, kernel);
      if (g != 0.0) sum += std::conj(ca) * cb * g;
    }
  }
  return sum;
}

inline double gram_norm(const PhotonicState& state, const OverlapKernel& kernel) {
  return std::max(0.0, inner_product(state, state, kernel).real());
}

// Single-photon polarization state α|H> + β|V>.
class JonesVector {
 public:
  JonesVector(cplx alpha, cplx beta) : alpha_(alpha), beta_(beta) {
    const double n = std::norm(alpha) + std::norm(beta);
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-12) {
      throw ValidationError("Jones vector is not normalized (|alpha|^2+|beta|^2 = " +
                            std::to_string(n) + ")");
    }
  }

  static JonesVector normalized(cplx alpha, cplx beta) {
    const double n = std::sqrt(std::norm(alpha) + std::norm(beta));
    if (!(n > 0.0)) throw ValidationError("cannot normalize a zero Jones vector");
    return {alpha / n, beta / n};
  }

  static JonesVector h() { return {1.0, 0.0}; }
  static JonesVector v() { return {0.0, 1.0}; }
  static JonesVector d() { return {std::numbers::sqrt2 / 2, std::numbers::sqrt2 / 2}; }
  static JonesVector dbar() { return {std::numbers::sqrt2 / 2, -std::numbers::sqrt2 / 2}; }
  static JonesVector l() { return {std::numbers::sqrt2 / 2, kI * (std::numbers::sqrt2 / 2)}; }
  static JonesVector r() { return {std::numbers::sqrt2 / 2, -kI * (std::numbers::sqrt2 / 2)}; }

  cplx alpha() const { return alpha_; }
  cplx beta() const { return beta_; }

 private:
  cplx alpha_;
  cplx beta_;
};

inline PhotonicState make_single_photon(const JonesVector& pol_state, const std::string& path,
                                        double time_ns, std::uint8_t source = 0) {
  PhotonicState::Terms terms;
  terms[BasisKet{ModeLabel{path, Pol::H, time_ns, source}}] = pol_state.alpha();
  terms[BasisKet{ModeLabel{path, Pol::V, time_ns, source}}] = pol_state.beta();
  return PhotonicState(std::move(terms));
}

inline PhotonicState tensor(const PhotonicState& a, const PhotonicState& b) {
  if (a.empty() || b.empty()) throw ValidationError("tensor product with the zero state");
  if (a.photon_count() + b.photon_count() > kMaxPhotons) {
    throw CapacityError("tensor product exceeds the photon cap");
  }
  PhotonicState::Terms out;
  std::vector<ModeLabel> modes;
  for (const auto& [ka, ca] : a.terms()) {
    for (const auto& [kb, cb] : b.terms()) {
      modes.assign(ka.modes().begin(), ka.modes().end());
      modes.insert(modes.end(), kb.modes().begin(), kb.modes().end());
      out[BasisKet(modes)] += ca * cb;
    }
  }
  return PhotonicState(std::move(out));
}

}  // namespace paritylink
