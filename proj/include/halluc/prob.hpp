#pragma once
// Categorical distributions over a finite vocabulary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "halluc/error.hpp"

namespace halluc {

using TokenId = std::size_t;

// Global tolerance on sum-to-one. Distributions are never silently renormalized.
inline constexpr double kProbTolerance = 1e-9;

class ProbVector {
public:
    ProbVector() = default;

    explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) { validate(); }

    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::span<const double> values() const noexcept { return probs_; }
    const std::vector<double>& vec() const noexcept { return probs_; }

    TokenId argmax() const {
        // first maximum wins, so ties resolve to the lowest index
        return static_cast<TokenId>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
    }

    bool operator==(const ProbVector&) const = default;

private:
    void validate() const {
        detail::require_input(!probs_.empty(), "distribution is empty");
        double sum = 0.0;
        for (double p : probs_) {
            detail::require_input(std::isfinite(p), "distribution has a non-finite entry");
            detail::require_input(p >= 0.0, "distribution has a negative entry");
            sum += p;
        }
        detail::require_input(std::abs(sum - 1.0) <= kProbTolerance,
                              "distribution sums to " + std::to_string(sum) + ", expected 1");
    }

    std::vector<double> probs_;
};

// Numerically stable softmax (max-shifted).
inline ProbVector softmax(std::span<const double> logits) {
    detail::require_input(!logits.empty(), "softmax of empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    detail::require_input(std::isfinite(m), "softmax of non-finite logits");
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return ProbVector(std::move(out));
}

inline double log_sum_exp(std::span<const double> xs) {
    const double m = *std::max_element(xs.begin(), xs.end());
    double sum = 0.0;
    for (double x : xs) sum += std::exp(x - m);
    return m + std::log(sum);
}

}  // namespace halluc
