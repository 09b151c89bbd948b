#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <unsupported/Eigen/KroneckerProduct>

#include "paritylink/tomography.hpp"

using namespace paritylink;

namespace {

constexpr double pi = std::numbers::pi;

Eigen::Matrix2cd random_rho(Rng& rng) {
  std::normal_distribution<double> g;
  Eigen::Matrix2cd a;
  for (int i = 0; i < 4; ++i) a(i / 2, i % 2) = cplx(g(rng), g(rng));
  Eigen::Matrix2cd m = a * a.adjoint();
  return m / m.trace();
}

std::vector<Eigen::Matrix2cd> random_kraus(Rng& rng, int n) {
  std::normal_distribution<double> g;
  std::vector<Eigen::Matrix2cd> ks(static_cast<std::size_t>(n));
  Eigen::Matrix2cd s = Eigen::Matrix2cd::Zero();
  for (auto& k : ks) {
    for (int i = 0; i < 4; ++i) k(i / 2, i % 2) = cplx(g(rng), g(rng));
    s += k.adjoint() * k;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> eig(s);
  const Eigen::Matrix2cd inv_sqrt = eig.eigenvectors() *
                                    eig.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                                    eig.eigenvectors().adjoint();
  for (auto& k : ks) k = k * inv_sqrt;
  return ks;
}

Eigen::Matrix2cd apply_kraus(const std::vector<Eigen::Matrix2cd>& ks, const Eigen::Matrix2cd& rho) {
  Eigen::Matrix2cd out = Eigen::Matrix2cd::Zero();
  for (const auto& k : ks) out += k * rho * k.adjoint();
  return out;
}

std::vector<DensityMatrix2> probe_outputs(const std::vector<Eigen::Matrix2cd>& ks) {
  std::vector<DensityMatrix2> out;
  for (const auto& psi : {JonesVector::h(), JonesVector::v(), JonesVector::d(), JonesVector::l()}) {
    const Eigen::Vector2cd v = to_vector(psi);
    out.emplace_back(apply_kraus(ks, v * v.adjoint()));
  }
  return out;
}

// Σ |Tr K / 2|^2: entanglement fidelity straight from the Kraus form.
double kraus_entanglement_fidelity(const std::vector<Eigen::Matrix2cd>& ks) {
  double f = 0.0;
  for (const auto& k : ks) f += std::norm(k.trace() / 2.0);
  return f;
}

std::vector<DensityMatrix2> dephased_probes() {
  return {DensityMatrix2::pure(JonesVector::h()), DensityMatrix2::pure(JonesVector::v()),
          DensityMatrix2::maximally_mixed(), DensityMatrix2::maximally_mixed()};
}

}  // namespace

TEST(DensityMatrix, Invariants) {
  Eigen::Matrix2cd bad;
  bad << 1.0, 0.0, 0.5, 0.0;
  EXPECT_THROW(DensityMatrix2{bad}, ValidationError);  // not Hermitian
  bad << 0.7, 0.0, 0.0, 0.7;
  EXPECT_THROW(DensityMatrix2{bad}, ValidationError);  // trace
  bad << 1.2, 0.0, 0.0, -0.2;
  EXPECT_THROW(DensityMatrix2{bad}, ValidationError);  // negative eigenvalue
  EXPECT_THROW(DensityMatrix2::normalized(Eigen::Matrix2cd::Zero()), UndefinedConditionalError);
}

TEST(Fidelity, PureAndMixed) {
  const auto psi = JonesVector::normalized({0.2, 0.4}, {0.9, -0.1});
  EXPECT_NEAR(fidelity(DensityMatrix2::pure(psi), psi), 1.0, 1e-15);
  EXPECT_NEAR(fidelity(DensityMatrix2::maximally_mixed(), psi), 0.5, 1e-15);
  EXPECT_NEAR(fidelity(DensityMatrix2::pure(JonesVector::h()), JonesVector::v()), 0.0, 1e-15);
}

TEST(Fidelity, StateFidelityMatchesPureCase) {
  const auto psi = JonesVector::d();
  const Eigen::Matrix2cd m = (Eigen::Matrix2cd() << 0.7, 0.2, 0.2, 0.3).finished();
  const DensityMatrix2 rho(m);
  EXPECT_NEAR(state_fidelity(rho, DensityMatrix2::pure(psi)), fidelity(rho, psi), 1e-14);
  EXPECT_NEAR(state_fidelity(rho, rho), 1.0, 1e-12);
}

TEST(Settings, ProjectorsAreTheNamedStates) {
  const auto s = standard_settings();
  const JonesVector expect[] = {JonesVector::h(), JonesVector::v(), JonesVector::d(), JonesVector::l()};
  for (std::size_t i = 0; i < 4; ++i) {
    const Eigen::Vector2cd e = to_vector(expect[i]);
    EXPECT_NEAR((s[i].projector() - e * e.adjoint()).cwiseAbs().maxCoeff(), 0.0, 1e-15) << s[i].label;
    EXPECT_NEAR(s[i].projector().trace().real(), 1.0, 1e-15);
  }
}

TEST(Counts, ExpectedRatesForKnownStates) {
  const double n = 1000.0;
  const auto h = expected_counts(DensityMatrix2::pure(JonesVector::h()), n);
  const auto mixed = expected_counts(DensityMatrix2::maximally_mixed(), n);
  const auto d = expected_counts(DensityMatrix2::pure(JonesVector::d()), n);
  const std::array<double, 4> eh{1.0, 0.0, 0.5, 0.5}, em{0.5, 0.5, 0.5, 0.5}, ed{0.5, 0.5, 1.0, 0.5};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(h.counts[i], eh[i] * n, 1e-9);
    EXPECT_NEAR(mixed.counts[i], em[i] * n, 1e-9);
    EXPECT_NEAR(d.counts[i], ed[i] * n, 1e-9);
  }
}

TEST(Counts, PoissonMeansConverge) {
  Rng rng(12);
  std::array<double, 4> sum{};
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    const auto c = simulate_counts(DensityMatrix2::pure(JonesVector::d()), 1000.0, rng);
    for (std::size_t i = 0; i < 4; ++i) sum[i] += c.counts[i];
  }
  EXPECT_NEAR(sum[2] / reps, 1000.0, 4 * std::sqrt(1000.0 / reps));
  EXPECT_NEAR(sum[0] / reps, 500.0, 4 * std::sqrt(500.0 / reps));
  EXPECT_THROW(simulate_counts(DensityMatrix2::maximally_mixed(), 0.0, rng), ValidationError);
}

TEST(StateReconstruction, StokesArithmetic) {
  const auto rho = reconstruct_state(TomographyCounts{{60, 40, 50, 50}});
  EXPECT_NEAR(rho(0, 0).real(), 0.6, 1e-15);
  EXPECT_NEAR(rho(1, 1).real(), 0.4, 1e-15);
  EXPECT_NEAR(std::abs(rho(0, 1)), 0.0, 1e-15);
}

TEST(StateReconstruction, ExactProbabilitiesInvert) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const DensityMatrix2 truth(random_rho(rng));
    const auto est = reconstruct_state(expected_counts(truth, 1.0));
    EXPECT_LT((est.matrix() - truth.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
  const auto v = reconstruct_state(expected_counts(DensityMatrix2::pure(JonesVector::v()), 1e4));
  EXPECT_NEAR(v(1, 1).real(), 1.0, 1e-12);
}

TEST(StateReconstruction, ClipsUnphysicalCounts) {
  // N_D = N_L = N_H + N_V puts the Stokes vector well outside the sphere.
  const auto est = reconstruct_state_detailed(TomographyCounts{{50, 50, 100, 100}});
  EXPECT_TRUE(est.clipped);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> eig(est.rho.matrix());
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
  EXPECT_NEAR(est.rho.matrix().trace().real(), 1.0, 1e-12);
}

TEST(StateReconstruction, NeedsHvCounts) {
  EXPECT_THROW(reconstruct_state(TomographyCounts{{0, 0, 5, 5}}), InsufficientDataError);
}

TEST(ProcessReconstruction, IdentityProbes) {
  std::vector<DensityMatrix2> outs;
  for (const auto& psi : {JonesVector::h(), JonesVector::v(), JonesVector::d(), JonesVector::l()}) {
    outs.push_back(DensityMatrix2::pure(psi));
  }
  const ChiMatrix chi = reconstruct_process(outs);
  Eigen::Matrix4cd expect = Eigen::Matrix4cd::Zero();
  expect(0, 0) = 1.0;
  EXPECT_LT((chi.matrix() - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_FALSE(chi.projected());
}

TEST(ProcessReconstruction, FullDephasing) {
  const ChiMatrix chi = reconstruct_process(dephased_probes());
  Eigen::Matrix4cd expect = Eigen::Matrix4cd::Zero();
  expect(0, 0) = 0.5;
  expect(3, 3) = 0.5;
  EXPECT_LT((chi.matrix() - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(entanglement_fidelity(chi), 0.5, 1e-12);
  EXPECT_NEAR(average_fidelity(entanglement_fidelity(chi)), 2.0 / 3.0, 1e-12);
}

TEST(ProcessReconstruction, HalfWavePlateAt45IsPauliX) {
  const std::vector<Eigen::Matrix2cd> ks{hwp_matrix(pi / 4)};
  const ChiMatrix chi = reconstruct_process(probe_outputs(ks));
  EXPECT_NEAR(chi(1, 1).real(), 1.0, 1e-12);
  EXPECT_NEAR(chi.matrix().cwiseAbs().sum(), 1.0, 1e-12);
}

TEST(ProcessReconstruction, MissingProbe) {
  EXPECT_THROW(reconstruct_process({DensityMatrix2::maximally_mixed()}), ValidationError);
}

TEST(ProcessReconstruction, RandomChannelsSatisfyConstraints) {
  Rng rng(21);
  for (int i = 0; i < 30; ++i) {
    const auto ks = random_kraus(rng, 1 + i % 4);
    const ChiMatrix chi = reconstruct_process(probe_outputs(ks));
    EXPECT_LT((chi.matrix() - chi.matrix().adjoint()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT(chi.min_eigenvalue(), -1e-10);
    EXPECT_LT((chi.trace_condition() - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff(), 1e-8);
    // χ reproduces the channel on a fresh input.
    const Eigen::Matrix2cd rho = random_rho(rng);
    EXPECT_LT((apply_process(chi, rho) - apply_kraus(ks, rho)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(entanglement_fidelity(chi), kraus_entanglement_fidelity(ks), 1e-12);
    EXPECT_NEAR(entanglement_fidelity(chi), entanglement_fidelity_bell(chi), 1e-10);
  }
}

TEST(EntanglementFidelity, BellPathOnKnownProcesses) {
  EXPECT_NEAR(entanglement_fidelity_bell(identity_process()), 1.0, 1e-12);
  EXPECT_NEAR(entanglement_fidelity_bell(reconstruct_process(dephased_probes())), 0.5, 1e-12);
}

TEST(AverageFidelity, Formula) {
  EXPECT_DOUBLE_EQ(average_fidelity(1.0), 1.0);
  EXPECT_NEAR(average_fidelity(0.958), 0.972, 1e-12);
  EXPECT_NEAR(average_fidelity(0.5), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(average_fidelity(1.1), ValidationError);
  EXPECT_THROW(average_fidelity(-0.1), ValidationError);
}

TEST(HaarAverage, IdentityIsExactlyOne) {
  Rng rng(1);
  const auto est = haar_average_fidelity(identity_process(), 1000, rng);
  EXPECT_NEAR(est.mean, 1.0, 1e-12);
  EXPECT_NEAR(est.standard_error, 0.0, 1e-9);
}

TEST(HaarAverage, DephasingMatchesFormula) {
  Rng rng(2);
  const auto est = haar_average_fidelity(reconstruct_process(dephased_probes()), 100000, rng);
  EXPECT_NEAR(est.mean, 2.0 / 3.0, 3 * est.standard_error);
}

TEST(HaarAverage, SimulatorCallbackForm) {
  // Callback returning the Z-dephased state directly.
  Rng rng(8);
  const auto est = haar_average_fidelity(
      [](const JonesVector& psi) {
        const Eigen::Vector2cd v = to_vector(psi);
        Eigen::Matrix2cd rho = v * v.adjoint();
        rho(0, 1) = rho(1, 0) = 0.0;
        return rho;
      },
      50000, rng);
  EXPECT_NEAR(est.mean, 2.0 / 3.0, 3 * est.standard_error);
}

TEST(HaarAverage, StatesAreUniformOnTheSphere) {
  Rng rng(4);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto psi = haar_random_state(rng);
    const Eigen::Vector2cd v = to_vector(psi);
    const Eigen::Matrix2cd rho = v * v.adjoint();
    mean += Eigen::Vector3d((rho * pauli(1)).trace().real(), (rho * pauli(2)).trace().real(),
                            (rho * pauli(3)).trace().real());
  }
  mean /= n;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 4.0 / std::sqrt(3.0 * n));
}

TEST(StatisticalConsistency, PoissonReconstructionFidelity) {
  // 200 repetitions at 1e4 counts per setting, pooled over the four probes.
  Rng rng(31);
  double pooled = 0.0;
  for (const auto& psi : {JonesVector::h(), JonesVector::v(), JonesVector::d(), JonesVector::l()}) {
    const auto truth = DensityMatrix2::pure(psi);
    for (int r = 0; r < 200; ++r) {
      pooled += fidelity(reconstruct_state(simulate_counts(truth, 1e4, rng)), psi);
    }
  }
  EXPECT_GE(pooled / 800, 0.995);
}

TEST(StatisticalConsistency, MixedTruthsEachClearThreshold) {
  Rng rng(32);
  std::normal_distribution<double> g;
  for (int i = 0; i < 10; ++i) {
    Eigen::Matrix2cd a;
    for (int k = 0; k < 4; ++k) a(k / 2, k % 2) = cplx(g(rng), g(rng));
    const auto truth = DensityMatrix2::normalized(a * a.adjoint());
    double sum = 0.0;
    for (int r = 0; r < 200; ++r) {
      sum += state_fidelity(reconstruct_state(simulate_counts(truth, 1e4, rng)), truth);
    }
    EXPECT_GE(sum / 200, 0.995) << i;
  }
}

TEST(StatisticalConsistency, PureEquatorialTruthLosesAboutHalfAPercent) {
  // S2 carries Gaussian error of width 2*sqrt(2/N); the shortening half costs
  // E[max(-δ,0)]/2 = 1/sqrt(πN), the lengthening half is clipped back to pure.
  Rng rng(33);
  const auto truth = DensityMatrix2::pure(JonesVector::d());
  double sum = 0.0;
  for (int r = 0; r < 200; ++r) {
    sum += fidelity(reconstruct_state(simulate_counts(truth, 1e4, rng)), JonesVector::d());
  }
  EXPECT_NEAR(sum / 200, 1.0 - 1.0 / std::sqrt(std::numbers::pi * 1e4), 0.0015);
}
