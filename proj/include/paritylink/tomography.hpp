#pragma once

// Single-qubit state tomography, process (χ) tomography and fidelity metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "paritylink/errors.hpp"
#include "paritylink/noise_channel.hpp"
#include "paritylink/optical_elements.hpp"
#include "paritylink/photonic_state.hpp"

namespace paritylink {

inline Eigen::Vector2cd to_vector(const JonesVector& psi) { return {psi.alpha(), psi.beta()}; }

// Pauli basis {I, X, Y, Z}.
inline Eigen::Matrix2cd pauli(int k) {
  Eigen::Matrix2cd m;
  switch (k) {
    case 0: m << 1, 0, 0, 1; break;
    case 1: m << 0, 1, 1, 0; break;
    case 2: m << 0, -kI, kI, 0; break;
    case 3: m << 1, 0, 0, -1; break;
    default: throw ValidationError("Pauli index out of range");
  }
  return m;
}

// Closest PSD, unit-trace matrix by eigenvalue clipping.
template <class Matrix>
Matrix clip_to_physical(const Matrix& m) {
  const Matrix herm = (m + m.adjoint()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(herm);
  auto values = eig.eigenvalues().eval();
  for (auto& v : values) v = std::max(v, 0.0);
  const double total = values.sum();
  if (!(total > 0.0)) throw ValidationError("matrix has no positive spectrum to keep");
  values /= total;
  return eig.eigenvectors() * values.template cast<cplx>().asDiagonal() *
         eig.eigenvectors().adjoint();
}

class DensityMatrix2 {
 public:
  explicit DensityMatrix2(const Eigen::Matrix2cd& m) : m_(m) {
    if ((m - m.adjoint()).cwiseAbs().maxCoeff() > 1e-10) {
      throw ValidationError("density matrix is not Hermitian");
    }
    if (std::abs(m.trace() - 1.0) > 1e-10) throw ValidationError("density matrix trace != 1");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> eig((m + m.adjoint()) / 2.0);
    if (eig.eigenvalues().minCoeff() < -1e-10) {
      throw ValidationError("density matrix has a negative eigenvalue");
    }
  }

  static DensityMatrix2 pure(const JonesVector& psi) {
    const Eigen::Vector2cd v = to_vector(psi);
    return DensityMatrix2(v * v.adjoint());
  }
  static DensityMatrix2 maximally_mixed() {
    return DensityMatrix2(Eigen::Matrix2cd::Identity() / 2.0);
  }
  // Divides by the trace; for conditional states built from joint weights.
  static DensityMatrix2 normalized(const Eigen::Matrix2cd& m) {
    const double tr = m.trace().real();
    if (!(tr > 0.0)) throw UndefinedConditionalError("cannot normalize a zero-trace matrix");
    return DensityMatrix2(m / tr);
  }

  const Eigen::Matrix2cd& matrix() const { return m_; }
  cplx operator()(int r, int c) const { return m_(r, c); }

 private:
  Eigen::Matrix2cd m_;
};

inline double fidelity(const DensityMatrix2& rho, const JonesVector& psi) {
  const Eigen::Vector2cd v = to_vector(psi);
  return std::clamp((v.adjoint() * rho.matrix() * v)(0, 0).real(), 0.0, 1.0);
}

// Analysis optics: QWP(qwp) then HWP(hwp) then a polarizer passing H.
// The projector is onto the back-propagated state (HWP·QWP)† |H>.
// Uhlmann fidelity between two qubit states: Tr(ρσ) + 2 sqrt(det ρ det σ).
inline double state_fidelity(const DensityMatrix2& rho, const DensityMatrix2& sigma) {
  const double overlap = (rho.matrix() * sigma.matrix()).trace().real();
  const double dets = std::max(0.0, rho.matrix().determinant().real()) *
                      std::max(0.0, sigma.matrix().determinant().real());
  return std::clamp(overlap + 2.0 * std::sqrt(dets), 0.0, 1.0);
}

struct MeasurementSetting {
  std::string label;
  double qwp_angle = 0.0;
  double hwp_angle = 0.0;

  Eigen::Vector2cd analysis_state() const {
    return (hwp_matrix(hwp_angle) * qwp_matrix(qwp_angle)).adjoint() * Eigen::Vector2cd(1.0, 0.0);
  }
  Eigen::Matrix2cd projector() const {
    const Eigen::Vector2cd e = analysis_state();
    return e * e.adjoint();
  }
};

// {H, V, D, L}, in the order reconstruct_state expects.
inline std::array<MeasurementSetting, 4> standard_settings() {
  constexpr double pi = std::numbers::pi;
  return {{{"H", 0.0, 0.0}, {"V", 0.0, pi / 4}, {"D", pi / 4, pi / 8}, {"L", pi / 4, 0.0}}};
}

// Counts (or exact expected counts) recorded on the H, V, D, L settings.
struct TomographyCounts {
  std::array<double, 4> counts{};
};

inline TomographyCounts expected_counts(const DensityMatrix2& rho, double n_total) {
  TomographyCounts out;
  const auto settings = standard_settings();
  for (std::size_t i = 0; i < 4; ++i) {
    out.counts[i] = n_total * std::max(0.0, (rho.matrix() * settings[i].projector()).trace().real());
  }
  return out;
}

inline TomographyCounts simulate_counts(const DensityMatrix2& rho, double n_total, Rng& rng) {
  if (!(n_total >= 1.0)) throw ValidationError("n_total must be at least 1");
  TomographyCounts mean = expected_counts(rho, n_total);
  TomographyCounts out;
  for (std::size_t i = 0; i < 4; ++i) {
    std::poisson_distribution<long long> draw(std::max(mean.counts[i], 1e-300));
    out.counts[i] = static_cast<double>(mean.counts[i] > 0.0 ? draw(rng) : 0);
  }
  return out;
}

struct StateEstimate {
  DensityMatrix2 rho;
  bool clipped = false;
};

// Stokes linear inversion, then eigenvalue clipping if the estimate is unphysical.
inline StateEstimate reconstruct_state_detailed(const TomographyCounts& c) {
  const auto [nh, nv, nd, nl] = c.counts;
  const double norm = nh + nv;
  if (!(norm > 0.0)) throw InsufficientDataError("no counts on the H/V settings");
  const double s1 = (nh - nv) / norm;
  const double s2 = 2.0 * nd / norm - 1.0;
  const double s3 = 2.0 * nl / norm - 1.0;
  const Eigen::Matrix2cd m =
      (pauli(0) + s1 * pauli(3) + s2 * pauli(1) + s3 * pauli(2)) / 2.0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> eig(m);
  if (eig.eigenvalues().minCoeff() < 0.0) return {DensityMatrix2(clip_to_physical(m)), true};
  return {DensityMatrix2(m), false};
}

inline DensityMatrix2 reconstruct_state(const TomographyCounts& c) {
  return reconstruct_state_detailed(c).rho;
}

// Process matrix in the Pauli basis: E(ρ) = Σ χ_mn σ_m ρ σ_n†.
class ChiMatrix {
 public:
  explicit ChiMatrix(const Eigen::Matrix4cd& m, bool projected = false)
      : m_(m), projected_(projected) {
    if ((m - m.adjoint()).cwiseAbs().maxCoeff() > 1e-10) {
      throw ValidationError("chi matrix is not Hermitian");
    }
  }

  const Eigen::Matrix4cd& matrix() const { return m_; }
  cplx operator()(int r, int c) const { return m_(r, c); }
  bool projected() const { return projected_; }

  // Σ χ_mn σ_n† σ_m; the identity for a trace-preserving process.
  Eigen::Matrix2cd trace_condition() const {
    Eigen::Matrix2cd acc = Eigen::Matrix2cd::Zero();
    for (int m = 0; m < 4; ++m) {
      for (int n = 0; n < 4; ++n) acc += m_(m, n) * pauli(n).adjoint() * pauli(m);
    }
    return acc;
  }

  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> eig((m_ + m_.adjoint()) / 2.0);
    return eig.eigenvalues().minCoeff();
  }

 private:
  Eigen::Matrix4cd m_;
  bool projected_ = false;
};

inline Eigen::Matrix2cd apply_process(const ChiMatrix& chi, const Eigen::Matrix2cd& rho) {
  Eigen::Matrix2cd out = Eigen::Matrix2cd::Zero();
  for (int m = 0; m < 4; ++m) {
    for (int n = 0; n < 4; ++n) {
      if (chi(m, n) == cplx{}) continue;
      out += chi(m, n) * pauli(m) * rho * pauli(n).adjoint();
    }
  }
  return out;
}

// (I ⊗ σ_m)|Ω>, |Ω> = |00> + |11>; index 2*reference + system.
inline Eigen::Vector4cd pauli_choi_vector(int m) {
  const Eigen::Matrix2cd s = pauli(m);
  Eigen::Vector4cd v;
  for (int i = 0; i < 2; ++i) {
    for (int a = 0; a < 2; ++a) v(2 * i + a) = s(a, i);
  }
  return v;
}

// Outputs for the probes H, V, D, L (in that order).
inline ChiMatrix reconstruct_process(const std::vector<DensityMatrix2>& outputs) {
  if (outputs.size() != 4) {
    throw ValidationError("process tomography needs outputs for the four probes H, V, D, L");
  }
  const Eigen::Matrix2cd& rh = outputs[0].matrix();
  const Eigen::Matrix2cd& rv = outputs[1].matrix();
  const Eigen::Matrix2cd& rd = outputs[2].matrix();
  const Eigen::Matrix2cd& rl = outputs[3].matrix();
  // |0><1| = |D><D| + i|L><L| - (1+i)/2 (|0><0| + |1><1|), and its adjoint.
  const Eigen::Matrix2cd e01 = rd + kI * rl - (1.0 + kI) / 2.0 * (rh + rv);
  const Eigen::Matrix2cd e10 = rd - kI * rl - (1.0 - kI) / 2.0 * (rh + rv);
  Eigen::Matrix4cd choi;
  choi.block<2, 2>(0, 0) = rh;
  choi.block<2, 2>(0, 2) = e01;
  choi.block<2, 2>(2, 0) = e10;
  choi.block<2, 2>(2, 2) = rv;

  Eigen::Matrix4cd chi;
  for (int m = 0; m < 4; ++m) {
    for (int n = 0; n < 4; ++n) {
      chi(m, n) = (pauli_choi_vector(m).adjoint() * choi * pauli_choi_vector(n))(0, 0) / 4.0;
    }
  }
  chi = (chi + chi.adjoint()).eval() / 2.0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> eig(chi);
  if (eig.eigenvalues().minCoeff() < -1e-12) return ChiMatrix(clip_to_physical(chi), true);
  return ChiMatrix(chi);
}

inline ChiMatrix identity_process() {
  Eigen::Matrix4cd m = Eigen::Matrix4cd::Zero();
  m(0, 0) = 1.0;
  return ChiMatrix(m);
}

inline double entanglement_fidelity(const ChiMatrix& chi) { return chi(0, 0).real(); }

// F_e computed by sending half of (|HH> + |VV>)/√2 through the process.
inline double entanglement_fidelity_bell(const ChiMatrix& chi) {
  Eigen::Vector4cd phi = Eigen::Vector4cd::Zero();
  phi(0) = phi(3) = 1.0 / std::numbers::sqrt2;
  const Eigen::Matrix4cd bell = phi * phi.adjoint();
  Eigen::Matrix4cd out = Eigen::Matrix4cd::Zero();
  for (int m = 0; m < 4; ++m) {
    const Eigen::Matrix4cd am = Eigen::kroneckerProduct(Eigen::Matrix2cd::Identity(), pauli(m));
    for (int n = 0; n < 4; ++n) {
      if (chi(m, n) == cplx{}) continue;
      const Eigen::Matrix4cd an =
          Eigen::kroneckerProduct(Eigen::Matrix2cd::Identity(), pauli(n));
      out += chi(m, n) * am * bell * an.adjoint();
    }
  }
  return (phi.adjoint() * out * phi)(0, 0).real();
}

inline double average_fidelity(double entanglement_fid) {
  if (!(entanglement_fid >= -1e-12 && entanglement_fid <= 1.0 + 1e-12)) {
    throw ValidationError("entanglement fidelity must lie in [0, 1]");
  }
  return (2.0 * std::clamp(entanglement_fid, 0.0, 1.0) + 1.0) / 3.0;
}

struct FidelityEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

inline JonesVector haar_random_state(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    const cplx a(g(rng), g(rng));
    const cplx b(g(rng), g(rng));
    if (std::norm(a) + std::norm(b) > 1e-300) return JonesVector::normalized(a, b);
  }
}

using QubitProcess = std::function<Eigen::Matrix2cd(const JonesVector&)>;

// Monte Carlo mean of <ψ|E(ψ)|ψ> over Haar-random pure inputs.
inline FidelityEstimate haar_average_fidelity(const QubitProcess& process, std::size_t n_samples,
                                              Rng& rng) {
  if (n_samples == 0) throw ValidationError("need at least one sample");
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const JonesVector psi = haar_random_state(rng);
    const Eigen::Vector2cd v = to_vector(psi);
    const double f = (v.adjoint() * process(psi) * v)(0, 0).real();
    sum += f;
    sum_sq += f * f;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

inline FidelityEstimate haar_average_fidelity(const ChiMatrix& chi, std::size_t n_samples,
                                              Rng& rng) {
  return haar_average_fidelity(
      [&chi](const JonesVector& psi) {
        const Eigen::Vector2cd v = to_vector(psi);
        return apply_process(chi, v * v.adjoint());
      },
      n_samples, rng);
}

// Unnormalized polarization matrix of the single photon on `path`, traced over
// everything else with the Gram form. Kets without exactly one photon on the
// path do not contribute.
inline Eigen::Matrix2cd reduced_polarization(const PhotonicState& state,
                                             const OverlapKernel& kernel,
                                             const std::string& path) {
  struct Entry {
    int pol;
    BasisKet rest;  // the path photon relabelled to H
    cplx amp;
  };
  std::vector<Entry> entries;
  std::vector<ModeLabel> modes;
  for (const auto& [ket, amp] : state.terms()) {
    int on_path = 0, pol = 0;
    modes.assign(ket.modes().begin(), ket.modes().end());
    for (auto& m : modes) {
      if (m.path == path) {
        ++on_path;
        pol = static_cast<int>(m.pol);
        m.pol = Pol::H;
      }
    }
    if (on_path == 1) entries.push_back({pol, BasisKet(modes), amp});
  }
  Eigen::Matrix2cd rho = Eigen::Matrix2cd::Zero();
  for (const auto& k : entries) {
    for (const auto& l : entries) {
      const double g = ket_overlap(l.rest, k.rest, kernel);
      if (g != 0.0) rho(k.pol, l.pol) += k.amp * std::conj(l.amp) * g;
    }
  }
  return rho;
}

}  // namespace paritylink
