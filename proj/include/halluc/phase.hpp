#pragma once
// Sinusoidal positional encodings, the scalar positional phase, Fourier
// decomposition of logits over the phase, and complex-valued softmax.

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "halluc/error.hpp"

namespace halluc::phase {

inline constexpr double kDefaultBase = 10000.0;

// Angular frequency of pair i: 1 / base^(2i/d).
inline double pair_frequency(std::size_t pair, std::size_t d, double base) {
    return 1.0 / std::pow(base, 2.0 * static_cast<double>(pair) / static_cast<double>(d));
}

inline void check_dim(std::size_t d) {
    detail::require_config(d >= 2 && d % 2 == 0, "embedding dimension must be even and >= 2, got " + std::to_string(d));
}

// Entry 2i = sin(pos * w_i), entry 2i+1 = cos(pos * w_i).
inline std::vector<double> positional_encoding(double pos, std::size_t d, double base = kDefaultBase) {
    check_dim(d);
    detail::require_input(pos >= 0.0 && std::isfinite(pos), "position must be finite and non-negative");
    std::vector<double> pe(d);
    for (std::size_t i = 0; i < d / 2; ++i) {
        const double arg = pos * pair_frequency(i, d, base);
        pe[2 * i] = std::sin(arg);
        pe[2 * i + 1] = std::cos(arg);
    }
    return pe;
}

// One frequency pair of the encoding selects the scalar phase phi_t.
struct PhaseSchedule {
    std::size_t d = 2;
    double base = kDefaultBase;
    std::size_t pair_index = 0;

    void validate() const {
        check_dim(d);
        detail::require_config(pair_index < d / 2, "phase pair index must be < d/2");
        detail::require_config(std::isfinite(base) && base > 1.0, "phase base must be > 1");
    }
};

// phi = pos / base^(2 i* / d); unwrapped (not reduced mod 2 pi).
inline double phase_of(double pos, const PhaseSchedule& schedule) {
    schedule.validate();
    detail::require_input(pos >= 0.0, "position must be non-negative");
    if (schedule.pair_index == 0) return pos;
    return pos / std::pow(schedule.base, 2.0 * static_cast<double>(schedule.pair_index) /
                                             static_cast<double>(schedule.d));
}

// Reduces phi into [-pi, pi] by an exact remainder against the double 2 pi.
inline double wrap_phase(double phi) { return std::remainder(phi, 2.0 * std::numbers::pi); }

// z(phi) = A_0 + sum_n A_n cos(n phi) + B_n sin(n phi).
struct FourierFit {
    std::size_t order = 0;
    std::vector<double> a;  // A_0..A_N
    std::vector<double> b;  // B_1..B_N
    double residual_rms = 0.0;
    double condition = 1.0;

    double evaluate(double phi) const {
        double z = a[0];
        for (std::size_t n = 1; n <= order; ++n) {
            const double nphi = static_cast<double>(n) * phi;
            z += a[n] * std::cos(nphi) + b[n - 1] * std::sin(nphi);
        }
        return z;
    }

    std::vector<double> reconstruct(const std::vector<double>& phases) const {
        std::vector<double> out;
        out.reserve(phases.size());
        for (double phi : phases) out.push_back(evaluate(phi));
        return out;
    }
};

// Condition numbers above this are treated as rank deficiency.
inline constexpr double kMaxFitCondition = 1e10;

// Ordinary least squares on the [1, cos n phi, sin n phi] design matrix.
inline FourierFit fit_fourier(const std::vector<double>& phases, const std::vector<double>& values, std::size_t order) {
    detail::require_input(phases.size() == values.size(), "fourier fit: phases and values differ in length");
    const std::size_t cols = 2 * order + 1;
    detail::require_input(phases.size() >= cols, "fourier fit: need at least 2N+1 samples, got " +
                                                     std::to_string(phases.size()));
    const auto rows = static_cast<Eigen::Index>(phases.size());
    Eigen::MatrixXd design(rows, static_cast<Eigen::Index>(cols));
    Eigen::VectorXd rhs(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double phi = phases[static_cast<std::size_t>(r)];
        detail::require_input(std::isfinite(phi) && std::isfinite(values[static_cast<std::size_t>(r)]),
                              "fourier fit: non-finite sample");
        design(r, 0) = 1.0;
        for (std::size_t n = 1; n <= order; ++n) {
            const double nphi = static_cast<double>(n) * phi;
            design(r, static_cast<Eigen::Index>(2 * n - 1)) = std::cos(nphi);
            design(r, static_cast<Eigen::Index>(2 * n)) = std::sin(nphi);
        }
        rhs(r) = values[static_cast<std::size_t>(r)];
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(cond <= kMaxFitCondition))
        throw NumericalError("fourier fit: design matrix is rank deficient (condition estimate " +
                             std::to_string(cond) + ")");
    const Eigen::VectorXd coef = svd.solve(rhs);

    FourierFit fit;
    fit.order = order;
    fit.condition = cond;
    fit.a.assign(order + 1, 0.0);
    fit.b.assign(order, 0.0);
    fit.a[0] = coef(0);
    for (std::size_t n = 1; n <= order; ++n) {
        fit.a[n] = coef(static_cast<Eigen::Index>(2 * n - 1));
        fit.b[n - 1] = coef(static_cast<Eigen::Index>(2 * n));
    }
    const Eigen::VectorXd resid = design * coef - rhs;
    fit.residual_rms = std::sqrt(resid.squaredNorm() / static_cast<double>(rows));
    return fit;
}

struct ComplexLogits {
    std::vector<double> u;  // real part
    std::vector<double> v;  // imaginary part, radians
};

struct ComplexSoftmax {
    std::vector<double> magnitudes;
    std::vector<double> args;
    std::vector<std::complex<double>> probs;
    std::complex<double> denominator;
    // e^{u_y} / sum e^{u_i}: exact only when every v_i is equal
    std::vector<double> approx_magnitudes;
    double max_approx_gap = 0.0;
};

inline constexpr double kDegenerateDenominator = 1e-12;

inline ComplexSoftmax complex_softmax(const ComplexLogits& cl) {
    detail::require_input(!cl.u.empty() && cl.u.size() == cl.v.size(),
                          "complex logits: u and v must be non-empty and of equal length");
    double umax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cl.u.size(); ++i) {
        detail::require_input(std::isfinite(cl.u[i]) && std::isfinite(cl.v[i]), "complex logits: non-finite entry");
        umax = std::max(umax, cl.u[i]);
    }
    // Work with everything scaled by e^{-umax}; the ratio is unchanged.
    std::vector<std::complex<double>> terms(cl.u.size());
    std::complex<double> scaled_den{0.0, 0.0};
    double real_den = 0.0;
    for (std::size_t i = 0; i < cl.u.size(); ++i) {
        terms[i] = std::polar(std::exp(cl.u[i] - umax), cl.v[i]);
        scaled_den += terms[i];
        real_den += std::exp(cl.u[i] - umax);
    }
    if (std::abs(scaled_den) < kDegenerateDenominator)
        throw NumericalError("complex softmax: degenerate denominator (destructive interference)");

    ComplexSoftmax out;
    out.denominator = scaled_den * std::exp(umax);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const std::complex<double> p = terms[i] / scaled_den;
        out.probs.push_back(p);
        out.magnitudes.push_back(std::abs(p));
        out.args.push_back(std::arg(p));
        const double approx = std::exp(cl.u[i] - umax) / real_den;
        out.approx_magnitudes.push_back(approx);
        out.max_approx_gap = std::max(out.max_approx_gap, std::abs(approx - out.magnitudes.back()));
    }
    return out;
}

}  // namespace halluc::phase
