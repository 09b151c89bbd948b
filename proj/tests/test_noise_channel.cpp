#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "paritylink/noise_channel.hpp"

using namespace paritylink;

namespace {

constexpr double pi = std::numbers::pi;

PhotonicState rail_photon(Pol pol, double t, std::uint8_t src = 0) {
  return PhotonicState({{BasisKet{ModeLabel{pol == Pol::H ? "C_H" : "C_V", pol, t, src}}, 1.0}});
}

// D photon split onto the rails.
PhotonicState dual_rail_d(double t) {
  return PhotonicState({{BasisKet{ModeLabel{"C_H", Pol::H, t, 0}}, std::sqrt(0.5)},
                        {BasisKet{ModeLabel{"C_V", Pol::V, t, 0}}, std::sqrt(0.5)}});
}

// Unnormalized single-photon density matrix over (C_H,H), (C_V,V).
Eigen::Matrix2cd rail_rho(const PhotonicState& s, double t) {
  const Eigen::Vector2cd v(s.amplitude(BasisKet{ModeLabel{"C_H", Pol::H, t, 0}}),
                           s.amplitude(BasisKet{ModeLabel{"C_V", Pol::V, t, 0}}));
  return v * v.adjoint();
}

}  // namespace

TEST(Streams, ReproducibleAndDistinct) {
  Rng a = stream_rng(7, 3), b = stream_rng(7, 3), c = stream_rng(7, 4), d = stream_rng(8, 3);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
  EXPECT_NE(x, d());
}

TEST(NoiseModel, Validation) {
  NoiseModel ou{NoiseKind::ornstein_uhlenbeck, 0.0, 1.0, 1};
  EXPECT_THROW(ou.validate(), ValidationError);
  ou.correlation_time_ns = 10.0;
  ou.sigma_rad = -1.0;
  EXPECT_THROW(ou.validate(), ValidationError);
  ou.sigma_rad = 0.5;
  EXPECT_NO_THROW(ou.validate());
}

TEST(PhaseChannel, FixedPhasesOnEachRail) {
  const auto r = NoiseRealization::constant(0.3, 1.1);
  const auto h = apply_phase_channel(rail_photon(Pol::H, 0.0), r);
  const auto v = apply_phase_channel(rail_photon(Pol::V, 0.0), r);
  EXPECT_NEAR(std::arg(h.terms().begin()->second), 0.3, 1e-15);
  EXPECT_NEAR(std::arg(v.terms().begin()->second), 1.1, 1e-15);
}

TEST(PhaseChannel, TwoPhotonsAccumulateBothPhases) {
  const auto r = NoiseRealization::constant(0.2, 0.5);
  const auto s = apply_phase_channel(tensor(rail_photon(Pol::H, 0, 0), rail_photon(Pol::V, 3, 1)), r);
  EXPECT_NEAR(std::arg(s.terms().begin()->second), 0.7, 1e-15);
}

TEST(PhaseChannel, RejectsPhotonsOffTheChannel) {
  const PhotonicState off({{BasisKet{ModeLabel{"elsewhere", Pol::H, 0.0, 0}}, 1.0}});
  EXPECT_THROW(apply_phase_channel(off, NoiseRealization::constant(0, 0)), ConfigurationError);
  DualRail rail;
  rail.bypass.insert("elsewhere");
  EXPECT_NO_THROW(apply_phase_channel(off, NoiseRealization::constant(0, 0), rail));
}

TEST(PhaseChannel, SampledRealizationNeedsMatchingTimes) {
  const auto r = NoiseRealization::sampled({0.0, 3.0}, {0.1, 0.2}, {0.3, 0.4});
  EXPECT_DOUBLE_EQ(r.phi_h(3.0), 0.2);
  EXPECT_THROW(r.phi_h(1.0), ValidationError);
  EXPECT_THROW(NoiseRealization::sampled({0.0}, {0.1, 0.2}, {0.3}), ValidationError);
}

TEST(IidUniform, SinglePhotonDephasesCompletely) {
  // Averaging e^{i(φ_V - φ_H)} over uniform phases removes coherence.
  const auto in = dual_rail_d(0.0);
  const NoiseModel m{NoiseKind::iid_uniform};
  Eigen::Matrix2cd acc = Eigen::Matrix2cd::Zero();
  const int n = 20000;
  for (int t = 0; t < n; ++t) {
    Rng rng = stream_rng(5, static_cast<std::uint64_t>(t));
    acc += rail_rho(apply_phase_channel(in, sample_realization(m, rng)), 0.0);
  }
  acc /= n;
  EXPECT_NEAR(acc(0, 0).real(), 0.5, 1e-12);
  EXPECT_NEAR(std::abs(acc(0, 1)), 0.0, 4.0 * 0.5 / std::sqrt(2.0 * n));
}

TEST(DephaseAverage, BlocksMatchMonteCarlo) {
  // Two-photon D⊗D on the rails: blocks (2,0), (1,1), (0,2).
  const OverlapKernel k;
  const auto in = tensor(PhotonicState({{BasisKet{ModeLabel{"C_H", Pol::H, 0, 0}}, std::sqrt(0.5)},
                                        {BasisKet{ModeLabel{"C_V", Pol::V, 0, 0}}, std::sqrt(0.5)}}),
                         PhotonicState({{BasisKet{ModeLabel{"C_H", Pol::H, 3, 1}}, std::sqrt(0.5)},
                                        {BasisKet{ModeLabel{"C_V", Pol::V, 3, 1}}, std::sqrt(0.5)}}));
  const NoiseModel m{NoiseKind::iid_uniform};
  const PhaseMixture mix = dephase_average(in, m, k);
  ASSERT_EQ(mix.blocks.size(), 3u);
  EXPECT_NEAR(mix.total_weight(), 1.0, 1e-14);
  for (const auto& b : mix.blocks) {
    const double expect = (b.photons_h == 1 && b.photons_v == 1) ? 0.5 : 0.25;
    EXPECT_NEAR(b.weight, expect, 1e-14);
  }

  // Monte Carlo density matrix over the 4 kets vs the block-diagonal average.
  std::vector<BasisKet> kets;
  for (const auto& [ket, a] : in.terms()) kets.push_back(ket);
  const auto vec = [&](const PhotonicState& s) {
    Eigen::Vector4cd v;
    for (int i = 0; i < 4; ++i) v(i) = s.amplitude(kets[static_cast<std::size_t>(i)]);
    return v;
  };
  Eigen::Matrix4cd mc = Eigen::Matrix4cd::Zero(), exact = Eigen::Matrix4cd::Zero();
  const int n = 20000;
  for (int t = 0; t < n; ++t) {
    Rng rng = stream_rng(11, static_cast<std::uint64_t>(t));
    const Eigen::Vector4cd v = vec(apply_phase_channel(in, sample_realization(m, rng)));
    mc += v * v.adjoint();
  }
  mc /= n;
  for (const auto& b : mix.blocks) {
    const Eigen::Vector4cd v = vec(b.state);
    exact += v * v.adjoint();
  }
  EXPECT_LT((mc - exact).cwiseAbs().maxCoeff(), 0.02);
}

TEST(DephaseAverage, RejectsCorrelatedModel) {
  const NoiseModel ou{NoiseKind::ornstein_uhlenbeck, 10.0, 1.0, 1};
  EXPECT_THROW(dephase_average(dual_rail_d(0.0), ou, OverlapKernel{}), UnsupportedModelError);
}

TEST(OrnsteinUhlenbeck, StationaryVarianceAndLagCorrelation) {
  const NoiseModel m{NoiseKind::ornstein_uhlenbeck, 5.0, 0.8, 1};
  const std::vector<double> times{0.0, 2.0, 7.0};
  const int n = 40000;
  double s0 = 0, s00 = 0, s01 = 0, s02 = 0, s22 = 0, s11 = 0;
  for (int t = 0; t < n; ++t) {
    Rng rng = stream_rng(3, static_cast<std::uint64_t>(t));
    const auto r = sample_realization(m, rng, times);
    const double a = r.phi_h(0.0), b = r.phi_h(2.0), c = r.phi_h(7.0);
    s0 += a;
    s00 += a * a;
    s11 += b * b;
    s22 += c * c;
    s01 += a * b;
    s02 += a * c;
  }
  const double var = 0.64;
  EXPECT_NEAR(s0 / n, 0.0, 4 * 0.8 / std::sqrt(n));
  EXPECT_NEAR(s00 / n, var, 0.03);
  EXPECT_NEAR(s11 / n, var, 0.03);
  EXPECT_NEAR(s22 / n, var, 0.03);
  EXPECT_NEAR(s01 / n / var, std::exp(-2.0 / 5.0), 0.03);
  EXPECT_NEAR(s02 / n / var, std::exp(-7.0 / 5.0), 0.03);
}

TEST(OrnsteinUhlenbeck, RailsAreIndependent) {
  const NoiseModel m{NoiseKind::ornstein_uhlenbeck, 5.0, 1.0, 1};
  const int n = 20000;
  double shv = 0.0;
  for (int t = 0; t < n; ++t) {
    Rng rng = stream_rng(9, static_cast<std::uint64_t>(t));
    const auto r = sample_realization(m, rng, std::vector<double>{0.0});
    shv += r.phi_h(0.0) * r.phi_v(0.0);
  }
  EXPECT_NEAR(shv / n, 0.0, 4.0 / std::sqrt(n));
}

TEST(OrnsteinUhlenbeck, InfiniteCorrelationTimeFreezesPhase) {
  const NoiseModel m{NoiseKind::ornstein_uhlenbeck, std::numeric_limits<double>::infinity(), 1.0, 1};
  Rng rng = stream_rng(1, 0);
  const auto r = sample_realization(m, rng, std::vector<double>{0.0, 3.0, 100.0});
  EXPECT_DOUBLE_EQ(r.phi_h(0.0), r.phi_h(100.0));
  EXPECT_DOUBLE_EQ(r.phi_v(0.0), r.phi_v(3.0));
}

TEST(ChannelTimes, CollectsRailTimesOnly) {
  DualRail rail;
  rail.bypass.insert("dump");
  const auto s = tensor(rail_photon(Pol::H, 0.0, 0),
                        PhotonicState({{BasisKet{ModeLabel{"dump", Pol::H, 9.0, 1}}, 1.0}}));
  const auto t = channel_times(s, rail);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_DOUBLE_EQ(t[0], 0.0);
}

TEST(IidUniform, PhasesCoverTheCircle) {
  const NoiseModel m{NoiseKind::iid_uniform};
  Rng rng = stream_rng(2, 0);
  double lo = 10, hi = -10;
  for (int i = 0; i < 5000; ++i) {
    const auto r = sample_realization(m, rng);
    lo = std::min(lo, r.phi_h(0));
    hi = std::max(hi, r.phi_v(0));
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 2 * pi);
  EXPECT_LT(lo, 0.01);
  EXPECT_GT(hi, 2 * pi - 0.01);
}
