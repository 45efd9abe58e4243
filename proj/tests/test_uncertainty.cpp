#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "halluc/uncertainty.hpp"
#include "oracles.hpp"

using namespace halluc;
using namespace halluc::uncertainty;
using std::numbers::pi;

namespace {

KernelMatrix to_kernel(const oracle::Matrix& m) {
    KernelMatrix km;
    const auto n = static_cast<Eigen::Index>(m.size());
    km.k.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) km.k(i, j) = m[i][j];
    return km;
}

}  // namespace

TEST(Epistemic, ScalarHandCases) {
    EXPECT_EQ(epistemic_variance(std::vector<double>{0.3, 0.3, 0.3}).variance, 0.0);
    const auto a = epistemic_variance(std::vector<double>{0.0, 1.0});
    EXPECT_DOUBLE_EQ(a.mean, 0.5);
    EXPECT_DOUBLE_EQ(a.variance, 0.25);
    const auto b = epistemic_variance(std::vector<double>{0.2, 0.4, 0.6});
    EXPECT_NEAR(b.mean, 0.4, 1e-15);
    EXPECT_NEAR(b.variance, 0.08 / 3.0, 1e-15);
    EXPECT_THROW(epistemic_variance(std::vector<double>{0.5}), InputError);
}

TEST(Epistemic, EnsembleRun) {
    EnsembleRun run{{ProbVector({1.0, 0.0}), ProbVector({0.0, 1.0})}, std::nullopt};
    EXPECT_EQ(predictive_mean(run), ProbVector({0.5, 0.5}));
    const auto est = epistemic_variance(run);
    EXPECT_EQ(est.selected_index, 0u);
    EXPECT_DOUBLE_EQ(est.variance, 0.25);
    EXPECT_DOUBLE_EQ(est.per_token_variance[1], 0.25);
    run.selected_index = 5;
    EXPECT_THROW(epistemic_variance(run), InputError);
    EXPECT_THROW(epistemic_variance(EnsembleRun{{ProbVector({1.0, 0.0})}, 0}), InputError);
    EXPECT_EQ(predictive_mean(EnsembleRun{{ProbVector({0.3, 0.7})}, {}}), ProbVector({0.3, 0.7}));
}

TEST(Epistemic, FuzzedMeansAreValid) {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t V = 2 + rng.below(20), T = 2 + rng.below(10);
        EnsembleRun run;
        for (std::size_t t = 0; t < T; ++t) run.passes.emplace_back(oracle::random_dist(rng, V, 0.1));
        EXPECT_NO_THROW(predictive_mean(run));
        const auto est = epistemic_variance(run);
        for (double v : est.per_token_variance) EXPECT_GE(v, 0.0);
    }
}

TEST(Ece, HandCases) {
    EXPECT_EQ(ece({{1.0, true}, {1.0, true}}, 10).ece, 0.0);
    const auto rep = ece({{0.9, true}, {0.9, false}}, 10);
    EXPECT_NEAR(rep.ece, 0.4, 1e-15);
    EXPECT_EQ(rep.bins[9].count, 2u);
    EXPECT_NEAR(rep.bins[9].accuracy, 0.5, 1e-15);
    EXPECT_THROW(ece({}, 10), InputError);
    EXPECT_THROW(ece({{1.5, true}}, 10), InputError);
    EXPECT_THROW(ece({{0.5, true}}, 0), InputError);
}

TEST(Ece, BinBoundaries) {
    EXPECT_EQ(bin_of(0.0, 10), 0u);
    EXPECT_EQ(bin_of(0.5, 10), 5u);
    EXPECT_EQ(bin_of(0.99, 10), 9u);
    EXPECT_EQ(bin_of(1.0, 10), 9u);
}

TEST(Ece, CalibratedAndOverconfidentPredictors) {
    Rng rng(2024);
    std::vector<CalibrationRecord> calibrated, overconfident;
    for (int i = 0; i < 100000; ++i) {
        const double c = rng.uniform();
        calibrated.push_back({c, rng.bernoulli(c)});
        overconfident.push_back({1.0, rng.bernoulli(0.5)});
    }
    EXPECT_LT(ece(calibrated, 10).ece, 0.01);
    EXPECT_NEAR(ece(overconfident, 10).ece, 0.5, 0.01);
}

TEST(PhaseVariance, GammaFamily) {
    EXPECT_DOUBLE_EQ(phase_variance_gamma(0.3, 1.1, 0.0).value, 0.3);
    EXPECT_DOUBLE_EQ(phase_variance_gamma(0.3, 0.0, 2.0).value, 0.3);
    EXPECT_NEAR(phase_variance_gamma(2.0, pi / 2, 1.0).value, 4.0, 1e-15);
    for (int i = 0; i < 4096; ++i) {
        const double phi = 2 * pi * i / 4096.0;
        const double v = phase_variance_gamma(1.5, phi, 0.7).value;
        EXPECT_GE(v, 1.5);
        EXPECT_LE(v, 1.5 * 1.7 + 1e-15);
    }
}

TEST(PhaseVariance, Oscillatory) {
    const PhaseModParams none{};
    EXPECT_DOUBLE_EQ(oscillatory_variance(0.2, 0.9, none).value, 0.2);
    const PhaseModParams p{0, 0.5, 0.3};
    EXPECT_DOUBLE_EQ(oscillatory_variance(0.2, 0.0, p).value, 0.2 * 1.5);
    const auto cap = oscillatory_variance(0.2, pi / 2, PhaseModParams{0, 0, 1.0});
    EXPECT_TRUE(cap.capped);
    EXPECT_DOUBLE_EQ(cap.multiplier, 1.0 + 1e6);
    EXPECT_FALSE(oscillatory_variance(0.2, pi / 2, PhaseModParams{0, 1.0, 0.0}).capped);
    EXPECT_THROW(oscillatory_variance(0.2, 0.0, PhaseModParams{0, -1.0, 0}), ConfigError);
    EXPECT_THROW(oscillatory_variance(-0.2, 0.0, p), InputError);
}

TEST(PhaseVariance, GeneralForm) {
    EXPECT_DOUBLE_EQ(oscillatory_variance_general(0.4, 0.7, PhaseModParams{}).value, 0.4);
    const auto v = oscillatory_variance_general(1.0, pi / 6, PhaseModParams{0, 1, 1, 0});
    EXPECT_NEAR(v.multiplier, 2.75, 1e-12);
    const auto c = oscillatory_variance_general(1.0, pi / 4, PhaseModParams{0, 0, 0, 1});
    EXPECT_TRUE(c.capped);
}

TEST(PhaseVariance, CapFlagMatchesTangentRoot) {
    Rng rng(31);
    for (int i = 0; i < 20000; ++i) {
        const double phi = rng.uniform(-10, 10);
        const double cap = std::pow(10.0, rng.uniform(0, 8));
        const auto r = oscillatory_variance(1.0, phi, PhaseModParams{0, 0, 1, 0, cap});
        EXPECT_EQ(r.capped, std::abs(std::tan(phi)) > std::sqrt(cap));
        EXPECT_LE(r.multiplier, 1.0 + cap);
    }
}

TEST(PhaseVariance, Periodic) {
    const PhaseModParams p{0.8, 0.5, 0.3, 0.2};
    for (int i = 0; i < 4096; ++i) {
        const double phi = oracle::sweep_phase(i, 4096);
        auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); };
        EXPECT_TRUE(close(oscillatory_variance_general(1, phi, p).multiplier,
                          oscillatory_variance_general(1, phi + 2 * pi, p).multiplier));
        EXPECT_TRUE(close(phase_variance_gamma(1, phi, 0.8).multiplier,
                          phase_variance_gamma(1, phi + 2 * pi, 0.8).multiplier));
    }
}

TEST(VonNeumann, HandCases) {
    EXPECT_NEAR(von_neumann_entropy({Eigen::MatrixXd::Identity(2, 2), {}}), std::log(2.0), 1e-12);
    EXPECT_NEAR(von_neumann_entropy({Eigen::MatrixXd::Identity(7, 7), {}}), std::log(7.0), 1e-9);
    EXPECT_NEAR(von_neumann_entropy({Eigen::MatrixXd::Ones(5, 5), {}}), 0.0, 1e-9);
    Eigen::MatrixXd k(2, 2);
    k << 1, 0.5, 0.5, 1;
    EXPECT_NEAR(von_neumann_entropy({k, {}}), 0.562335, 1e-6);
}

TEST(VonNeumann, Errors) {
    Eigen::MatrixXd asym(2, 2);
    asym << 1, 0.5, 0.2, 1;
    EXPECT_THROW(von_neumann_entropy({asym, {}}), InputError);
    Eigen::MatrixXd neg(2, 2);
    neg << 1, 2, 2, 1;
    EXPECT_THROW(von_neumann_entropy({neg, {}}), NumericalError);
    EXPECT_THROW(von_neumann_entropy({Eigen::MatrixXd::Zero(2, 2), {}}), InputError);
    // a tiny negative eigenvalue is clamped rather than rejected
    Eigen::MatrixXd tiny(2, 2);
    tiny << 1, 1 + 1e-9, 1 + 1e-9, 1;
    EXPECT_NEAR(von_neumann_entropy({tiny, {}}), 0.0, 1e-6);
}

TEST(VonNeumann, MatchesJacobiOracleAndScaleInvariant) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const auto m = oracle::random_psd(rng, n, 1 + rng.below(8));
        const auto km = to_kernel(m);
        const double s = von_neumann_entropy(km);
        EXPECT_NEAR(s, oracle::von_neumann(m), 1e-9);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, std::log(static_cast<double>(n)) + 1e-12);
        for (double c : {1e-3, 1e-2, 1e-1, 1e1, 1e2, 1e3}) EXPECT_NEAR(von_neumann_entropy({km.k * c, {}}), s, 1e-9);
    }
}

TEST(VonNeumann, PermutationInvariant) {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(6);
        const auto m = oracle::random_psd(rng, n, n);
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        oracle::Matrix pm(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) pm[i][j] = m[perm[i]][perm[j]];
        EXPECT_NEAR(von_neumann_entropy(to_kernel(pm)), von_neumann_entropy(to_kernel(m)), 1e-9);
    }
}

TEST(PhaseShifted, HandCases) {
    Eigen::MatrixXd k(2, 2);
    k << 1, 0.5, 0.5, 1;
    const auto zero = phase_shifted_entropy({k, {}}, {0.0, 0.0});
    EXPECT_NEAR(zero.entropy, zero.unshifted_entropy, 1e-12);
    const auto r = phase_shifted_entropy({k, {}}, {0.0, pi / 3});
    EXPECT_NEAR(r.entropy, 0.562335, 1e-6);
    EXPECT_NEAR(r.z.real(), 2.0, 1e-12);
    EXPECT_NEAR(r.z.imag(), 0.0, 1e-12);
    EXPECT_LT(r.invariance_gap, 1e-9);
    EXPECT_THROW(phase_shifted_entropy({k, {}}, {0.0}), InputError);
}

TEST(PhaseShifted, InvariantOnFuzzedKernels) {
    Rng rng(55);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(7);
        const auto km = to_kernel(oracle::random_psd(rng, n, n + 1));
        std::vector<double> phases(n);
        for (double& p : phases) p = rng.uniform(-pi, pi);
        const auto r = phase_shifted_entropy(km, phases);
        EXPECT_NEAR(r.entropy, von_neumann_entropy(km), 1e-9);
    }
}

TEST(Kle, Candidates) {
    const std::vector<std::vector<double>> same(4, {0.3, -1.0, 2.0});
    EXPECT_NEAR(kle_from_candidates(same, {}).entropy, 0.0, 1e-9);
    const auto narrow = kle_from_candidates({{1, 0}, {0, 1}}, {KernelKind::rbf, 0.05});
    EXPECT_NEAR(narrow.entropy, std::log(2.0), 1e-9);
    EXPECT_THROW(kle_from_candidates({{0, 0}, {0, 1}}, {KernelKind::cosine, 1.0}), InputError);
    EXPECT_THROW(kle_from_candidates({{0, 0}, {0}}, {}), InputError);
}

TEST(Kle, ClusteredCandidatesMatchClosedForm) {
    const std::vector<std::vector<double>> e{{0.2, 0.1, 0}, {0.2, 0.1, 0}, {3, -2, 1}};
    const double a = std::exp(-(2.8 * 2.8 + 2.1 * 2.1 + 1.0) / 2.0);
    const double r = std::sqrt(1.0 + 8.0 * a * a);
    const double l1 = (3.0 + r) / 6.0, l2 = (3.0 - r) / 6.0;
    const double expect = -(l1 * std::log(l1) + l2 * std::log(l2));
    const auto res = kle_from_candidates(e, {});
    EXPECT_NEAR(res.entropy, expect, 1e-9);
    EXPECT_GT(res.entropy, 0.0);
    EXPECT_LT(res.entropy, std::log(3.0));
    EXPECT_LT(std::abs(res.entropy - std::log(2.0)), std::abs(res.entropy - std::log(3.0)));
}

TEST(Kle, CosineKernelIsPsd) {
    Rng rng(66);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<double>> e(2 + rng.below(6), std::vector<double>(3));
        for (auto& row : e)
            for (double& v : row) v = rng.normal();
        EXPECT_NO_THROW(kle_from_candidates(e, {KernelKind::cosine, 1.0}));
    }
}
