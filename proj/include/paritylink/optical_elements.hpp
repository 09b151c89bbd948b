#pragma once

// Linear optical elements acting on (path, polarization) modes.
//
// Conventions:
//  - Wave-plate angles are measured from the H axis, R(θ) = [[cosθ, -sinθ], [sinθ, cosθ]].
//    HWP(θ) = R(θ) diag(1, -1) R(-θ), QWP(θ) = R(θ) diag(1, i) R(-θ).
//  - Two-port elements map input port a -> output a and b -> output b when
//    transmitting. PBS transmits H and reflects V.
//  - PhaseConvention::quadrature: BS reflection i√R from either port; PBS
//    reflection +i out of port a, -i out of port b.
//    PhaseConvention::real: BS reflection +√R (a -> b) and -√R (b -> a);
//    PBS reflection +1 both ways.
//  Both conventions give the same postselected protocol output.

#include <cmath>
#include <complex>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "paritylink/errors.hpp"
#include "paritylink/photonic_state.hpp"

namespace paritylink {

enum class ElementKind { BS, PBS, HWP, QWP, Retarder, Delay, PhaseShift, Loss, Switch };

enum class PhaseConvention { quadrature, real };

inline std::string_view to_string(ElementKind kind) {
  switch (kind) {
    case ElementKind::BS: return "BS";
    case ElementKind::PBS: return "PBS";
    case ElementKind::HWP: return "HWP";
    case ElementKind::QWP: return "QWP";
    case ElementKind::Retarder: return "Retarder";
    case ElementKind::Delay: return "Delay";
    case ElementKind::PhaseShift: return "PhaseShift";
    case ElementKind::Loss: return "Loss";
    case ElementKind::Switch: return "Switch";
  }
  throw ConfigurationError("unknown element kind");
}

inline ElementKind parse_element_kind(std::string_view name) {
  for (auto k : {ElementKind::BS, ElementKind::PBS, ElementKind::HWP, ElementKind::QWP,
                 ElementKind::Retarder, ElementKind::Delay, ElementKind::PhaseShift,
                 ElementKind::Loss, ElementKind::Switch}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigurationError("unknown element kind '" + std::string(name) + "'");
}

inline bool is_two_port(ElementKind kind) {
  return kind == ElementKind::BS || kind == ElementKind::PBS || kind == ElementKind::Switch;
}

// parameter meaning by kind: BS reflectivity; HWP/QWP angle (rad);
// Retarder/PhaseShift phase (rad); Delay ns; Loss transmittance;
// Switch time threshold (ns): earlier photons pass straight, later ones cross.
struct OpticalElement {
  ElementKind kind = ElementKind::Delay;
  std::vector<std::string> ports;
  std::vector<std::string> outputs;  // empty: same as ports
  double parameter = 0.0;
  std::string name;

  const std::vector<std::string>& output_paths() const {
    return outputs.empty() ? ports : outputs;
  }

  void validate() const {
    const std::size_t want = is_two_port(kind) ? 2 : 1;
    if (ports.size() != want || output_paths().size() != want) {
      throw ConfigurationError(std::string(to_string(kind)) + " needs exactly " +
                               std::to_string(want) + " port(s)");
    }
    if (want == 2 && (ports[0] == ports[1] || output_paths()[0] == output_paths()[1])) {
      throw ConfigurationError(std::string(to_string(kind)) + " ports must be distinct");
    }
    if (!std::isfinite(parameter)) throw ConfigurationError("element parameter must be finite");
    if ((kind == ElementKind::BS || kind == ElementKind::Loss) &&
        (parameter < 0.0 || parameter > 1.0)) {
      throw ConfigurationError(std::string(to_string(kind)) + " parameter must lie in [0, 1]");
    }
  }
};

inline OpticalElement beam_splitter(std::string a, std::string b, std::string out_a,
                                    std::string out_b, double reflectivity = 0.5) {
  return {ElementKind::BS, {std::move(a), std::move(b)}, {std::move(out_a), std::move(out_b)},
          reflectivity, "BS"};
}

inline OpticalElement polarizing_beam_splitter(std::string a, std::string b, std::string out_a,
                                               std::string out_b) {
  return {ElementKind::PBS, {std::move(a), std::move(b)}, {std::move(out_a), std::move(out_b)},
          0.0, "PBS"};
}

inline OpticalElement time_switch(std::string a, std::string b, std::string out_a,
                                  std::string out_b, double threshold_ns) {
  return {ElementKind::Switch, {std::move(a), std::move(b)},
          {std::move(out_a), std::move(out_b)}, threshold_ns, "Switch"};
}

inline OpticalElement half_wave_plate(std::string path, double angle) {
  return {ElementKind::HWP, {std::move(path)}, {}, angle, "HWP"};
}
inline OpticalElement quarter_wave_plate(std::string path, double angle) {
  return {ElementKind::QWP, {std::move(path)}, {}, angle, "QWP"};
}
inline OpticalElement retarder(std::string path, double phase) {
  return {ElementKind::Retarder, {std::move(path)}, {}, phase, "Retarder"};
}
inline OpticalElement delay(std::string path, double delay_ns) {
  return {ElementKind::Delay, {std::move(path)}, {}, delay_ns, "Delay"};
}
inline OpticalElement phase_shift(std::string path, double phase) {
  return {ElementKind::PhaseShift, {std::move(path)}, {}, phase, "PhaseShift"};
}
inline OpticalElement loss(std::string path, double transmittance) {
  return {ElementKind::Loss, {std::move(path)}, {}, transmittance, "Loss"};
}

inline Eigen::Matrix2cd rotation(double theta) {
  Eigen::Matrix2cd r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

inline Eigen::Matrix2cd hwp_matrix(double theta) {
  return rotation(theta) * Eigen::Vector2cd(1.0, -1.0).asDiagonal() * rotation(-theta);
}

inline Eigen::Matrix2cd qwp_matrix(double theta) {
  return rotation(theta) * Eigen::Vector2cd(1.0, kI).asDiagonal() * rotation(-theta);
}

// Polarization (Jones) matrix of a single-port element.
inline Eigen::Matrix2cd jones_matrix(const OpticalElement& e) {
  switch (e.kind) {
    case ElementKind::HWP: return hwp_matrix(e.parameter);
    case ElementKind::QWP: return qwp_matrix(e.parameter);
    case ElementKind::Retarder:
      return Eigen::Vector2cd(1.0, std::polar(1.0, e.parameter)).asDiagonal();
    case ElementKind::PhaseShift:
      return std::polar(1.0, e.parameter) * Eigen::Matrix2cd::Identity();
    case ElementKind::Delay: return Eigen::Matrix2cd::Identity();
    case ElementKind::Loss: return std::sqrt(e.parameter) * Eigen::Matrix2cd::Identity();
    default:
      throw ConfigurationError(std::string(to_string(e.kind)) + " is not a single-port element");
  }
}

// Single-photon transformation over (path, pol) modes; arrival time moves by
// delay_ns. Basis index = 2 * port + pol.
struct LinearModeMap {
  std::vector<std::pair<std::string, Pol>> inputs;
  std::vector<std::pair<std::string, Pol>> outputs;
  Eigen::MatrixXcd matrix;  // outputs x inputs
  double delay_ns = 0.0;

  bool is_unitary(double tol = 1e-12) const {
    if (matrix.rows() != matrix.cols()) return false;
    return (matrix.adjoint() * matrix - Eigen::MatrixXcd::Identity(matrix.rows(), matrix.cols()))
               .cwiseAbs()
               .maxCoeff() <= tol;
  }
};

// time_ns only matters for Switch.
inline LinearModeMap element_transform(const OpticalElement& e,
                                       PhaseConvention convention = PhaseConvention::quadrature,
                                       double time_ns = 0.0) {
  e.validate();
  LinearModeMap map;
  const auto& outs = e.output_paths();
  for (std::size_t p = 0; p < e.ports.size(); ++p) {
    map.inputs.emplace_back(e.ports[p], Pol::H);
    map.inputs.emplace_back(e.ports[p], Pol::V);
    map.outputs.emplace_back(outs[p], Pol::H);
    map.outputs.emplace_back(outs[p], Pol::V);
  }
  const auto n = static_cast<Eigen::Index>(map.inputs.size());
  map.matrix = Eigen::MatrixXcd::Zero(n, n);
  constexpr Eigen::Index aH = 0, aV = 1, bH = 2, bV = 3;

  switch (e.kind) {
    case ElementKind::BS: {
      const double t = std::sqrt(1.0 - e.parameter);
      const double r = std::sqrt(e.parameter);
      const cplx r_ab = convention == PhaseConvention::quadrature ? kI * r : cplx(r);
      const cplx r_ba = convention == PhaseConvention::quadrature ? kI * r : cplx(-r);
      for (Eigen::Index pol = 0; pol < 2; ++pol) {
        map.matrix(aH + pol, aH + pol) = t;
        map.matrix(bH + pol, bH + pol) = t;
        map.matrix(bH + pol, aH + pol) = r_ab;
        map.matrix(aH + pol, bH + pol) = r_ba;
      }
      break;
    }
    case ElementKind::PBS: {
      const bool quad = convention == PhaseConvention::quadrature;
      map.matrix(aH, aH) = 1.0;
      map.matrix(bH, bH) = 1.0;
      map.matrix(bV, aV) = quad ? kI : cplx(1.0);
      map.matrix(aV, bV) = quad ? -kI : cplx(1.0);
      break;
    }
    case ElementKind::Switch: {
      const bool cross = time_ns >= e.parameter;
      for (Eigen::Index pol = 0; pol < 2; ++pol) {
        if (cross) {
          map.matrix(bH + pol, aH + pol) = 1.0;
          map.matrix(aH + pol, bH + pol) = 1.0;
        } else {
          map.matrix(aH + pol, aH + pol) = 1.0;
          map.matrix(bH + pol, bH + pol) = 1.0;
        }
      }
      break;
    }
    default:
      map.matrix = jones_matrix(e);
      if (e.kind == ElementKind::Delay) map.delay_ns = e.parameter;
      break;
  }
  return map;
}

namespace detail {

struct PhotonImage {
  ModeLabel mode;
  cplx amplitude;
};

class CompiledElement {
 public:
  CompiledElement(const OpticalElement& e, PhaseConvention convention) : element_(e) {
    straight_ = element_transform(e, convention, -std::numeric_limits<double>::infinity());
    if (e.kind == ElementKind::Switch) crossed_ = element_transform(e, convention, std::numeric_limits<double>::infinity());
  }

  // Appends the images of one photon; photons off the element pass through.
  void images(const ModeLabel& m, std::vector<PhotonImage>& out) const {
    out.clear();
    const auto& ports = element_.ports;
    std::size_t port = ports.size();
    for (std::size_t p = 0; p < ports.size(); ++p) {
      if (ports[p] == m.path) port = p;
    }
    if (port == ports.size()) {
      out.push_back({m, 1.0});
      return;
    }
    const LinearModeMap& map =
        (element_.kind == ElementKind::Switch && m.time_ns >= element_.parameter) ? crossed_
                                                                                  : straight_;
    const auto col = static_cast<Eigen::Index>(2 * port + static_cast<std::size_t>(m.pol));
    for (Eigen::Index row = 0; row < map.matrix.rows(); ++row) {
      const cplx amp = map.matrix(row, col);
      if (amp == cplx{}) continue;
      const auto& [path, pol] = map.outputs[static_cast<std::size_t>(row)];
      out.push_back({ModeLabel{path, pol, m.time_ns + map.delay_ns, m.source}, amp});
    }
  }

 private:
  OpticalElement element_;
  LinearModeMap straight_;
  LinearModeMap crossed_;
};

inline PhotonicState apply_compiled(const PhotonicState& state, const CompiledElement& ce) {
  PhotonicState::Terms out;
  std::vector<PhotonImage> first, second;
  std::vector<ModeLabel> modes;
  for (const auto& [ket, amp] : state.terms()) {
    if (ket.photon_count() == 1) {
      ce.images(ket[0], first);
      for (const auto& a : first) out[BasisKet{a.mode}] += amp * a.amplitude;
    } else if (ket.photon_count() == 2) {
      ce.images(ket[0], first);
      ce.images(ket[1], second);
      for (const auto& a : first) {
        for (const auto& b : second) {
          out[BasisKet{a.mode, b.mode}] += amp * a.amplitude * b.amplitude;
        }
      }
    } else {
      out[ket] += amp;
    }
  }
  return PhotonicState(std::move(out));
}

}  // namespace detail

inline PhotonicState apply_element(const PhotonicState& state, const OpticalElement& e,
                                   PhaseConvention convention = PhaseConvention::quadrature) {
  return detail::apply_compiled(state, detail::CompiledElement(e, convention));
}

// Ordered element list over a declared set of paths.
class Circuit {
 public:
  Circuit() = default;

  Circuit(std::set<std::string> paths, std::vector<OpticalElement> elements)
      : paths_(std::move(paths)), elements_(std::move(elements)) {
    for (const auto& e : elements_) {
      e.validate();
      for (const auto* list : {&e.ports, &e.output_paths()}) {
        for (const auto& p : *list) {
          if (!paths_.contains(p)) {
            throw ConfigurationError(std::string(to_string(e.kind)) + " references undeclared path '" +
                                     p + "'");
          }
        }
      }
    }
  }

  const std::set<std::string>& paths() const { return paths_; }
  const std::vector<OpticalElement>& elements() const { return elements_; }

  Circuit then(const Circuit& next) const {
    auto paths = paths_;
    paths.insert(next.paths_.begin(), next.paths_.end());
    auto elements = elements_;
    elements.insert(elements.end(), next.elements_.begin(), next.elements_.end());
    return Circuit(std::move(paths), std::move(elements));
  }

 private:
  std::set<std::string> paths_;
  std::vector<OpticalElement> elements_;
};

inline PhotonicState apply_circuit(const PhotonicState& state, const Circuit& circuit,
                                   PhaseConvention convention = PhaseConvention::quadrature) {
  for (const auto& [ket, amp] : state.terms()) {
    for (const auto& m : ket.modes()) {
      if (!circuit.paths().contains(m.path)) {
        throw ConfigurationError("photon on path '" + m.path + "' not declared by the circuit");
      }
    }
  }
  PhotonicState out = state;
  for (const auto& e : circuit.elements()) out = apply_element(out, e, convention);
  return out;
}

}  // namespace paritylink
