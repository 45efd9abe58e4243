#pragma once
// Information-theoretic primitives (nats throughout) and the autoregressive
// drift simulator.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "halluc/error.hpp"
#include "halluc/prob.hpp"

namespace halluc::info {

inline double nats_to_bits(double nats) { return nats / std::numbers::ln2; }

// 0 ln 0 is taken as 0.
inline double shannon_entropy(const ProbVector& p) {
    double h = 0.0;
    for (double v : p.values())
        if (v > 0.0) h -= v * std::log(v);
    return h < 0.0 ? 0.0 : h;
}

inline double surprisal(const ProbVector& p, TokenId index) {
    detail::require_input(index < p.size(), "surprisal index out of range");
    if (p[index] <= 0.0)
        throw NumericalError("infinite surprisal: p[" + std::to_string(index) + "] = 0");
    return -std::log(p[index]);
}

// D_KL(p || q). Requires q[i] > 0 wherever p[i] > 0.
inline double kl_divergence(const ProbVector& p, const ProbVector& q) {
    detail::require_input(p.size() == q.size(), "KL divergence of distributions with different lengths");
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0)
            throw NumericalError("KL divergence undefined: q[" + std::to_string(i) + "] = 0 where p > 0");
        d += p[i] * std::log(p[i] / q[i]);
    }
    // Gibbs: the true value is >= 0; rounding can leave a tiny negative
    return d < 0.0 ? 0.0 : d;
}

using JointTable = std::vector<std::vector<double>>;  // rows index X, columns index Y

inline void validate_joint(const JointTable& joint) {
    detail::require_input(!joint.empty() && !joint.front().empty(), "joint table is empty");
    const std::size_t cols = joint.front().size();
    double sum = 0.0;
    for (const auto& row : joint) {
        detail::require_input(row.size() == cols, "joint table rows have different lengths");
        for (double v : row) {
            detail::require_input(std::isfinite(v) && v >= 0.0, "joint table has a negative or non-finite entry");
            sum += v;
        }
    }
    detail::require_input(std::abs(sum - 1.0) <= kProbTolerance, "joint table does not sum to 1");
}

namespace detail_ {
inline double plogp_sum(double acc, double v) { return v > 0.0 ? acc - v * std::log(v) : acc; }
}  // namespace detail_

inline double joint_entropy(const JointTable& joint) {
    validate_joint(joint);
    double h = 0.0;
    for (const auto& row : joint)
        for (double v : row) h = detail_::plogp_sum(h, v);
    return h;
}

// H(Y | X) = H(X, Y) - H(X).
inline double conditional_entropy(const JointTable& joint) {
    const double hxy = joint_entropy(joint);
    double hx = 0.0;
    for (const auto& row : joint) {
        double px = 0.0;
        for (double v : row) px += v;
        hx = detail_::plogp_sum(hx, px);
    }
    const double h = hxy - hx;
    return h < 0.0 ? 0.0 : h;
}

inline double marginal_entropy_y(const JointTable& joint) {
    validate_joint(joint);
    std::vector<double> py(joint.front().size(), 0.0);
    for (const auto& row : joint)
        for (std::size_t j = 0; j < row.size(); ++j) py[j] += row[j];
    double h = 0.0;
    for (double v : py) h = detail_::plogp_sum(h, v);
    return h;
}

struct DriftScenario {
    std::vector<double> true_probs;     // P_t in (0, 1]
    std::vector<double> perturbations;  // eps_t >= 0
};

struct DriftStep {
    std::size_t t = 0;  // 1-based
    double clean_joint = 1.0;
    double perturbed_joint = 1.0;
    double ratio = 1.0;
    double log_gap = 0.0;
    // prod P * sum eps/P: the linearized change, reported as a diagnostic only
    double first_order_delta = 0.0;
};

inline void validate(const DriftScenario& s) {
    detail::require_input(!s.true_probs.empty(), "drift scenario has no steps");
    detail::require_input(s.true_probs.size() == s.perturbations.size(),
                          "drift scenario: probabilities and perturbations differ in length");
    for (std::size_t i = 0; i < s.true_probs.size(); ++i) {
        const double p = s.true_probs[i];
        const double e = s.perturbations[i];
        const std::string at = " at step " + std::to_string(i + 1);
        detail::require_input(std::isfinite(p) && p > 0.0 && p <= 1.0, "drift scenario: P_t outside (0,1]" + at);
        detail::require_input(std::isfinite(e) && e >= 0.0, "drift scenario: negative perturbation" + at);
        detail::require_input(p - e > 0.0, "drift scenario: P_t - eps_t <= 0" + at);
    }
}

inline std::vector<DriftStep> simulate_drift(const DriftScenario& s) {
    validate(s);
    std::vector<DriftStep> out;
    out.reserve(s.true_probs.size());
    DriftStep acc;
    double rel_sum = 0.0;
    for (std::size_t i = 0; i < s.true_probs.size(); ++i) {
        const double p = s.true_probs[i];
        const double q = p - s.perturbations[i];
        acc.t = i + 1;
        acc.clean_joint *= p;
        acc.perturbed_joint *= q;
        // running product of per-step factors <= 1 keeps the ratio monotone under rounding
        acc.ratio *= q / p;
        acc.log_gap += std::log(p) - std::log(q);
        rel_sum += s.perturbations[i] / p;
        acc.first_order_delta = acc.clean_joint * rel_sum;
        out.push_back(acc);
    }
    return out;
}

}  // namespace halluc::info
