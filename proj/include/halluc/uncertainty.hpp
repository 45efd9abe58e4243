#pragma once
// Uncertainty estimators: MC-dropout epistemic variance, expected calibration
// error, phase-modulated variance multipliers, and kernel (von Neumann)
// entropy over candidate continuations.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "halluc/error.hpp"
#include "halluc/phase.hpp"
#include "halluc/prob.hpp"

namespace halluc::uncertainty {

// ---------------------------------------------------------------- ensembles

struct EnsembleRun {
    std::vector<ProbVector> passes;
    // Token whose probability is the scalar prediction of each pass. When
    // unset, the argmax of the predictive mean is used.
    std::optional<TokenId> selected_index;
};

inline ProbVector predictive_mean(const EnsembleRun& run) {
    detail::require_input(!run.passes.empty(), "ensemble has no passes");
    const std::size_t V = run.passes.front().size();
    std::vector<double> mean(V, 0.0);
    for (const auto& p : run.passes) {
        detail::require_input(p.size() == V, "ensemble passes differ in length");
        for (std::size_t i = 0; i < V; ++i) mean[i] += p[i];
    }
    const double T = static_cast<double>(run.passes.size());
    for (double& m : mean) m /= T;
    return ProbVector(std::move(mean));
}

struct EpistemicEstimate {
    TokenId selected_index = 0;
    double mean = 0.0;
    double variance = 0.0;                  // population variance (divide by T)
    std::vector<double> per_token_variance;  // same estimator for every token
};

inline EpistemicEstimate epistemic_variance(const EnsembleRun& run) {
    detail::require_input(run.passes.size() >= 2, "epistemic variance needs at least 2 passes");
    const ProbVector mean = predictive_mean(run);
    const std::size_t V = mean.size();
    const double T = static_cast<double>(run.passes.size());

    EpistemicEstimate est;
    est.selected_index = run.selected_index.value_or(mean.argmax());
    detail::require_input(est.selected_index < V, "selected index out of range");
    est.per_token_variance.assign(V, 0.0);
    for (const auto& p : run.passes)
        for (std::size_t i = 0; i < V; ++i) {
            const double dev = p[i] - mean[i];
            est.per_token_variance[i] += dev * dev;
        }
    for (double& v : est.per_token_variance) v /= T;
    est.mean = mean[est.selected_index];
    est.variance = est.per_token_variance[est.selected_index];
    return est;
}

// Scalar-prediction variant used when only the per-pass values are known.
inline EpistemicEstimate epistemic_variance(const std::vector<double>& predictions) {
    detail::require_input(predictions.size() >= 2, "epistemic variance needs at least 2 passes");
    EpistemicEstimate est;
    double sum = 0.0;
    for (double y : predictions) sum += y;
    est.mean = sum / static_cast<double>(predictions.size());
    double ss = 0.0;
    for (double y : predictions) ss += (y - est.mean) * (y - est.mean);
    est.variance = ss / static_cast<double>(predictions.size());
    return est;
}

// ------------------------------------------------------------- calibration

struct CalibrationRecord {
    double confidence = 0.0;
    bool correct = false;
};

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double confidence = 0.0;  // mean confidence, 0 for empty bins
    double accuracy = 0.0;    // empirical accuracy, 0 for empty bins
};

struct EceReport {
    double ece = 0.0;
    std::vector<CalibrationBin> bins;
};

// Equal-width bins on [0,1], left-closed right-open except the last, which is closed.
inline std::size_t bin_of(double confidence, std::size_t bins) {
    const auto b = static_cast<std::size_t>(std::floor(confidence * static_cast<double>(bins)));
    return std::min(b, bins - 1);
}

inline EceReport ece(const std::vector<CalibrationRecord>& records, std::size_t bins) {
    detail::require_input(!records.empty(), "ECE needs at least one record");
    detail::require_input(bins >= 1, "ECE needs at least one bin");
    EceReport rep;
    rep.bins.resize(bins);
    std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
    for (const auto& r : records) {
        detail::require_input(std::isfinite(r.confidence) && r.confidence >= 0.0 && r.confidence <= 1.0,
                              "calibration confidence outside [0,1]");
        const std::size_t b = bin_of(r.confidence, bins);
        ++rep.bins[b].count;
        conf_sum[b] += r.confidence;
        hit_sum[b] += r.correct ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(records.size());
    for (std::size_t b = 0; b < bins; ++b) {
        auto& bin = rep.bins[b];
        bin.lower = static_cast<double>(b) / static_cast<double>(bins);
        bin.upper = static_cast<double>(b + 1) / static_cast<double>(bins);
        if (bin.count == 0) continue;
        const double c = static_cast<double>(bin.count);
        bin.confidence = conf_sum[b] / c;
        bin.accuracy = hit_sum[b] / c;
        rep.ece += (c / n) * std::abs(bin.confidence - bin.accuracy);
    }
    return rep;
}

// ------------------------------------------------- phase-modulated variance

struct PhaseModParams {
    double gamma = 0.0;  // sin^2 family
    double alpha = 0.0;  // cos^2 weight
    double beta = 0.0;   // tan^2 weight (main form) or sin^2(3 phi) weight (general form)
    double kappa = 0.0;  // tan^2(2 phi) weight, general form only
    double tan_sq_cap = 1e6;

    void validate() const {
        for (double v : {gamma, alpha, beta, kappa})
            detail::require_config(std::isfinite(v) && v >= 0.0, "phase modulation weights must be finite and >= 0");
        detail::require_config(std::isfinite(tan_sq_cap) && tan_sq_cap > 0.0, "tan^2 cap must be finite and > 0");
    }
};

struct ModulatedVariance {
    double value = 0.0;
    double multiplier = 1.0;
    bool capped = false;  // a tan^2 term hit the cap
};

struct CappedTanSq {
    double value;
    bool capped;
};

// tan^2(x) limited to the cap. Capping happens exactly when |tan x| exceeds sqrt(cap).
inline CappedTanSq capped_tan_sq(double x, double cap) {
    const double t = std::tan(x);
    if (!(std::abs(t) <= std::sqrt(cap))) return {cap, true};
    return {std::min(t * t, cap), false};
}

inline ModulatedVariance phase_variance_gamma(double base_variance, double raw_phi, double gamma) {
    const double phi = phase::wrap_phase(raw_phi);
    detail::require_input(base_variance >= 0.0, "base variance must be >= 0");
    detail::require_config(std::isfinite(gamma) && gamma >= 0.0, "gamma must be finite and >= 0");
    const double s = std::sin(phi);
    ModulatedVariance out;
    out.multiplier = 1.0 + gamma * s * s;
    out.value = base_variance * out.multiplier;
    return out;
}

// 1 + alpha cos^2(phi) + beta min(tan^2(phi), cap)
inline ModulatedVariance oscillatory_variance(double epi_variance, double raw_phi, const PhaseModParams& p) {
    const double phi = phase::wrap_phase(raw_phi);
    detail::require_input(epi_variance >= 0.0, "epistemic variance must be >= 0");
    p.validate();
    const double c = std::cos(phi);
    const auto t = capped_tan_sq(phi, p.tan_sq_cap);
    ModulatedVariance out;
    out.multiplier = 1.0 + p.alpha * c * c + p.beta * t.value;
    out.capped = t.capped && p.beta > 0.0;
    out.value = epi_variance * out.multiplier;
    return out;
}

// 1 + alpha cos^2(phi) + beta sin^2(3 phi) + kappa min(tan^2(2 phi), cap)
inline ModulatedVariance oscillatory_variance_general(double epi_variance, double raw_phi, const PhaseModParams& p) {
    const double phi = phase::wrap_phase(raw_phi);
    detail::require_input(epi_variance >= 0.0, "epistemic variance must be >= 0");
    p.validate();
    const double c = std::cos(phi);
    const double s3 = std::sin(3.0 * phi);
    const auto t = capped_tan_sq(2.0 * phi, p.tan_sq_cap);
    ModulatedVariance out;
    out.multiplier = 1.0 + p.alpha * c * c + p.beta * s3 * s3 + p.kappa * t.value;
    out.capped = t.capped && p.kappa > 0.0;
    out.value = epi_variance * out.multiplier;
    return out;
}

// ------------------------------------------------------- kernel entropy

inline constexpr double kSymmetryTolerance = 1e-9;
inline constexpr double kEigenClampTolerance = 1e-8;

struct KernelMatrix {
    Eigen::MatrixXd k;
    std::vector<std::string> labels;

    Eigen::Index n() const noexcept { return k.rows(); }

    void validate() const {
        detail::require_input(k.rows() >= 1 && k.rows() == k.cols(), "kernel matrix must be square and non-empty");
        detail::require_input(k.allFinite(), "kernel matrix has non-finite entries");
        const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
        detail::require_input((k - k.transpose()).cwiseAbs().maxCoeff() <= kSymmetryTolerance * scale,
                              "kernel matrix is not symmetric");
        detail::require_input(k.trace() > 0.0, "kernel matrix trace must be > 0");
    }
};

// -sum l ln l over a spectrum normalized to sum 1. Eigenvalues below
// -kEigenClampTolerance are a genuine PSD violation; smaller negatives are noise.
inline double spectrum_entropy(std::vector<double> eig) {
    for (double l : eig)
        if (l < -kEigenClampTolerance)
            throw NumericalError("kernel is not positive semi-definite (eigenvalue " + std::to_string(l) + ")");
    double sum = 0.0;
    for (double& l : eig) {
        l = std::clamp(l, 0.0, 1.0);
        sum += l;
    }
    if (!(sum > 0.0)) throw NumericalError("density matrix has an all-zero spectrum");
    double s = 0.0;
    for (double l : eig) {
        const double x = l / sum;
        if (x > 0.0) s -= x * std::log(x);
    }
    return s < 0.0 ? 0.0 : s;
}

// Eigenvalues of rho = K / Tr(K).
inline std::vector<double> density_spectrum(const KernelMatrix& km) {
    km.validate();
    const Eigen::MatrixXd rho = km.k / km.k.trace();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(rho, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    const auto& ev = solver.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
}

inline double von_neumann_entropy(const KernelMatrix& km) { return spectrum_entropy(density_spectrum(km)); }

struct PhaseShiftedEntropy {
    double entropy = 0.0;
    std::complex<double> z;     // Tr(W K W^-1)
    double unshifted_entropy = 0.0;
    double invariance_gap = 0.0;  // |S(rho_phi) - S(rho)|
};

// rho_phi = W K W^-1 / Z with W = diag(e^{i phi_j}). The spectrum is taken
// from a general complex eigensolver, so the similarity invariance is
// observed rather than assumed.
inline PhaseShiftedEntropy phase_shifted_entropy(const KernelMatrix& km, const std::vector<double>& phases) {
    km.validate();
    const Eigen::Index n = km.n();
    detail::require_input(static_cast<Eigen::Index>(phases.size()) == n, "need one phase per kernel row");
    Eigen::MatrixXcd shifted(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c)
            shifted(r, c) = std::polar(1.0, phases[static_cast<std::size_t>(r)]) * km.k(r, c) *
                            std::polar(1.0, -phases[static_cast<std::size_t>(c)]);

    PhaseShiftedEntropy out;
    out.z = shifted.trace();
    const double tr = km.k.trace();
    if (std::abs(out.z - std::complex<double>(tr, 0.0)) > 1e-9 * std::max(1.0, std::abs(tr)))
        throw NumericalError("phase-shifted trace differs from Tr(K)");
    const Eigen::MatrixXcd rho = shifted / out.z;

    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> solver(rho, false);
    if (solver.info() != Eigen::Success) throw NumericalError("complex eigendecomposition failed");
    std::vector<double> eig;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto l = solver.eigenvalues()(i);
        if (std::abs(l.imag()) > kEigenClampTolerance)
            throw NumericalError("phase-shifted density matrix has a complex eigenvalue");
        eig.push_back(l.real());
    }
    out.entropy = spectrum_entropy(std::move(eig));
    out.unshifted_entropy = von_neumann_entropy(km);
    out.invariance_gap = std::abs(out.entropy - out.unshifted_entropy);
    return out;
}

enum class KernelKind { rbf, cosine };

struct KernelConfig {
    KernelKind kind = KernelKind::rbf;
    double width = 1.0;  // RBF bandwidth w in exp(-|x-y|^2 / (2 w^2))
};

// RBF: exp(-|e_i - e_j|^2 / (2 w^2)). Cosine: (1 + cos)/2, kept in [0,1].
inline KernelMatrix build_kernel(const std::vector<std::vector<double>>& embeddings, const KernelConfig& cfg,
                                 std::vector<std::string> labels = {}) {
    detail::require_input(!embeddings.empty(), "need at least one candidate embedding");
    detail::require_config(std::isfinite(cfg.width) && cfg.width > 0.0, "kernel width must be > 0");
    const std::size_t n = embeddings.size();
    const std::size_t m = embeddings.front().size();
    Eigen::MatrixXd e(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
        detail::require_input(embeddings[i].size() == m, "candidate embeddings differ in length");
        for (std::size_t j = 0; j < m; ++j) {
            detail::require_input(std::isfinite(embeddings[i][j]), "candidate embedding has non-finite entries");
            e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = embeddings[i][j];
        }
    }
    KernelMatrix km;
    km.labels = std::move(labels);
    km.k.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    if (cfg.kind == KernelKind::cosine) {
        Eigen::VectorXd norms = e.rowwise().norm();
        for (Eigen::Index i = 0; i < norms.size(); ++i)
            detail::require_input(norms(i) > 0.0, "cosine kernel undefined for a zero-norm embedding");
        for (Eigen::Index i = 0; i < e.rows(); ++i)
            for (Eigen::Index j = 0; j < e.rows(); ++j) {
                const double cosine = std::clamp(e.row(i).dot(e.row(j)) / (norms(i) * norms(j)), -1.0, 1.0);
                km.k(i, j) = 0.5 * (1.0 + cosine);
            }
    } else {
        const double denom = 2.0 * cfg.width * cfg.width;
        for (Eigen::Index i = 0; i < e.rows(); ++i)
            for (Eigen::Index j = 0; j < e.rows(); ++j)
                km.k(i, j) = std::exp(-(e.row(i) - e.row(j)).squaredNorm() / denom);
    }
    return km;
}

struct KleResult {
    KernelMatrix kernel;
    double entropy = 0.0;
};

inline KleResult kle_from_candidates(const std::vector<std::vector<double>>& embeddings, const KernelConfig& cfg,
                                     std::vector<std::string> labels = {}) {
    KleResult r;
    r.kernel = build_kernel(embeddings, cfg, std::move(labels));
    r.entropy = von_neumann_entropy(r.kernel);
    return r;
}

}  // namespace halluc::uncertainty
