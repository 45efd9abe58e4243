#pragma once
// Factuality-aware losses with a phase-dependent weight on the verifier
// regularizer, analytic gradients through the toy model, and a central
// finite-difference gradient check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "halluc/error.hpp"
#include "halluc/phase.hpp"
#include "halluc/prob.hpp"
#include "halluc/rng.hpp"
#include "halluc/toy_lm.hpp"

namespace halluc::alignment {

// Scores how factual a predicted distribution looks, in [0, 1].
class Verifier {
public:
    virtual ~Verifier() = default;
    virtual std::string name() const = 0;
    virtual double score(const ProbVector& y) const = 0;
    virtual bool differentiable() const { return false; }
    // dS/dy; only meaningful when differentiable().
    virtual std::vector<double> gradient(const ProbVector& y) const {
        (void)y;
        throw ConfigError("verifier '" + name() + "' is not differentiable");
    }
};

class ConstantVerifier final : public Verifier {
public:
    explicit ConstantVerifier(double s) : s_(s) {}
    std::string name() const override { return "constant"; }
    double score(const ProbVector&) const override { return s_; }
    bool differentiable() const override { return true; }
    std::vector<double> gradient(const ProbVector& y) const override { return std::vector<double>(y.size(), 0.0); }

private:
    double s_;
};

// S = sigmoid(w . y + b)
class SigmoidVerifier final : public Verifier {
public:
    SigmoidVerifier(std::vector<double> weights, double bias) : w_(std::move(weights)), b_(bias) {}
    std::string name() const override { return "sigmoid"; }
    double score(const ProbVector& y) const override { return 1.0 / (1.0 + std::exp(-activation(y))); }
    bool differentiable() const override { return true; }
    std::vector<double> gradient(const ProbVector& y) const override {
        const double s = score(y);
        std::vector<double> g(w_);
        for (double& v : g) v *= s * (1.0 - s);
        return g;
    }

private:
    double activation(const ProbVector& y) const {
        detail::require_input(y.size() == w_.size(), "sigmoid verifier weight length must equal vocab size");
        double a = b_;
        for (std::size_t i = 0; i < w_.size(); ++i) a += w_[i] * y[i];
        return a;
    }
    std::vector<double> w_;
    double b_;
};

// Rule-based: full endorsement iff the top token carries at least `threshold` mass.
class ConfidenceGateVerifier final : public Verifier {
public:
    explicit ConfidenceGateVerifier(double threshold) : t_(threshold) {}
    std::string name() const override { return "confidence-gate"; }
    double score(const ProbVector& y) const override { return y[y.argmax()] >= t_ ? 1.0 : 0.0; }

private:
    double t_;
};

enum class MultiplierForm { main, extended };

inline std::string to_string(MultiplierForm f) { return f == MultiplierForm::main ? "main" : "extended"; }

inline MultiplierForm parse_multiplier_form(const std::string& s) {
    if (s == "main") return MultiplierForm::main;
    if (s == "extended") return MultiplierForm::extended;
    throw ConfigError("unknown multiplier form '" + s + "'");
}

// main: 1 + sin^2(phi); extended: 1 + sin^2(phi) + cos^2(2 phi).
inline double phase_multiplier(MultiplierForm form, double raw_phi) {
    const double phi = phase::wrap_phase(raw_phi);
    const double s = std::sin(phi);
    double m = 1.0 + s * s;
    if (form == MultiplierForm::extended) {
        const double c2 = std::cos(2.0 * phi);
        m += c2 * c2;
    }
    return m;
}

struct FactualLossParams {
    double lambda_fact = 0.0;
    MultiplierForm form = MultiplierForm::main;

    void validate() const {
        detail::require_config(std::isfinite(lambda_fact) && lambda_fact >= 0.0, "lambda_fact must be finite and >= 0");
    }
};

// R_fact = 1 - S_verifier(y)
inline double default_fact_regularizer(const ProbVector& y, const Verifier& verifier) {
    const double s = verifier.score(y);
    if (!(s >= 0.0 && s <= 1.0))
        throw ContractError("verifier '" + verifier.name() + "' returned " + std::to_string(s) + " outside [0,1]");
    return 1.0 - s;
}

struct FactualLoss {
    double loss = 0.0;
    double ce_part = 0.0;
    double reg_part = 0.0;
    double r_fact = 0.0;
    double multiplier = 1.0;
};

inline FactualLoss factual_loss(const ProbVector& y, TokenId target, double phi, const FactualLossParams& params,
                                const Verifier& verifier) {
    params.validate();
    detail::require_input(target < y.size(), "target index out of range");
    if (y[target] <= 0.0) throw NumericalError("infinite loss: predicted probability of the target is 0");
    FactualLoss out;
    out.ce_part = -std::log(y[target]);
    out.multiplier = phase_multiplier(params.form, phi);
    out.r_fact = default_fact_regularizer(y, verifier);
    out.reg_part = params.lambda_fact * out.r_fact * out.multiplier;
    out.loss = out.ce_part + out.reg_part;
    return out;
}

// dLoss/dlogits for y = softmax(z).
inline std::vector<double> logit_gradient(const ProbVector& y, TokenId target, double phi,
                                          const FactualLossParams& params, const Verifier& verifier) {
    std::vector<double> g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] - (i == target ? 1.0 : 0.0);
    if (params.lambda_fact == 0.0) return g;
    if (!verifier.differentiable())
        throw ConfigError("gradient requires a differentiable verifier, got '" + verifier.name() + "'");
    // dReg/dy = -lambda * m * dS/dy, pulled back through the softmax Jacobian
    const double scale = -params.lambda_fact * phase_multiplier(params.form, phi);
    const auto ds = verifier.gradient(y);
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * ds[i];
    for (std::size_t i = 0; i < y.size(); ++i) g[i] += scale * y[i] * (ds[i] - dot);
    return g;
}

struct Example {
    std::vector<TokenId> context;
    TokenId target = 0;
};

struct LossConfig {
    FactualLossParams params;
    phase::PhaseSchedule schedule;  // phi is taken at the target position
    const DropoutMask* mask = nullptr;
};

inline double target_phase(const Example& ex, const LossConfig& cfg) {
    return phase::phase_of(static_cast<double>(ex.context.size()), cfg.schedule);
}

// Mean factual loss over a batch.
inline double batch_loss(const ToyLmParams& model, const std::vector<Example>& batch, const LossConfig& cfg,
                         const Verifier& verifier) {
    detail::require_input(!batch.empty(), "batch must be non-empty");
    double total = 0.0;
    for (const auto& ex : batch) {
        const ProbVector y = forward(model, ex.context, cfg.mask);
        total += factual_loss(y, ex.target, target_phase(ex, cfg), cfg.params, verifier).loss;
    }
    return total / static_cast<double>(batch.size());
}

struct Gradients {
    Eigen::MatrixXd embeddings;
    Eigen::MatrixXd hidden;
    Eigen::MatrixXd output;
};

inline Gradients batch_gradient(const ToyLmParams& model, const std::vector<Example>& batch, const LossConfig& cfg,
                                const Verifier& verifier) {
    detail::require_input(!batch.empty(), "batch must be non-empty");
    Gradients g{Eigen::MatrixXd::Zero(model.embeddings.rows(), model.embeddings.cols()),
                Eigen::MatrixXd::Zero(model.hidden.rows(), model.hidden.cols()),
                Eigen::MatrixXd::Zero(model.output.rows(), model.output.cols())};
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
        const auto cache = forward_cache(model, ex.context, cfg.mask);
        const ProbVector y = softmax(std::span<const double>(cache.logits.data(), cache.logits.size()));
        const auto dz_vec = logit_gradient(y, ex.target, target_phase(ex, cfg), cfg.params, verifier);
        const Eigen::VectorXd dz = Eigen::Map<const Eigen::VectorXd>(dz_vec.data(), cache.logits.size()) * inv_batch;

        g.output += cache.dropped * dz.transpose();
        Eigen::VectorXd dh = model.output * dz;
        if (cfg.mask != nullptr)
            for (Eigen::Index j = 0; j < dh.size(); ++j)
                dh(j) *= cfg.mask->bits[static_cast<std::size_t>(j)] ? cfg.mask->keep_scale : 0.0;
        const Eigen::VectorXd da = dh.array() * (1.0 - cache.activation.array().square());
        g.hidden += cache.pooled * da.transpose();
        const Eigen::VectorXd dx = model.hidden * da / static_cast<double>(ex.context.size());
        for (TokenId t : ex.context) g.embeddings.row(static_cast<Eigen::Index>(t)) += dx.transpose();
    }
    return g;
}

struct BlockReport {
    std::string block;
    std::size_t entries = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

struct GradCheckReport {
    std::vector<BlockReport> blocks;
    double step = 0.0;
    double max_rel_error = 0.0;
};

struct GradCheckConfig {
    double step = 1e-5;
    // Relative error is |a - n| / max(|a| + |n|, abs_floor); the floor keeps
    // entries whose true gradient is ~0 from dividing rounding noise by zero.
    double abs_floor = 1e-6;
};

inline GradCheckReport gradient_check(const ToyLmParams& model, const std::vector<Example>& batch,
                                      const LossConfig& cfg, const Verifier& verifier,
                                      const GradCheckConfig& gc = {}) {
    if (cfg.params.lambda_fact != 0.0 && !verifier.differentiable())
        throw ConfigError("gradient check requires a differentiable verifier, got '" + verifier.name() + "'");
    detail::require_config(gc.step > 0.0 && gc.abs_floor > 0.0, "step and floor must be > 0");
    const Gradients analytic = batch_gradient(model, batch, cfg, verifier);

    GradCheckReport report;
    report.step = gc.step;
    ToyLmParams probe = model;
    const auto check_block = [&](const char* name, Eigen::MatrixXd ToyLmParams::*member,
                                 const Eigen::MatrixXd& grad) {
        BlockReport br{name, 0, 0.0, 0.0};
        Eigen::MatrixXd& w = probe.*member;
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                const double saved = w(r, c);
                w(r, c) = saved + gc.step;
                const double up = batch_loss(probe, batch, cfg, verifier);
                w(r, c) = saved - gc.step;
                const double down = batch_loss(probe, batch, cfg, verifier);
                w(r, c) = saved;
                const double numeric = (up - down) / (2.0 * gc.step);
                const double a = grad(r, c);
                const double abs_err = std::abs(a - numeric);
                const double rel = abs_err / std::max(std::abs(a) + std::abs(numeric), gc.abs_floor);
                br.max_abs_error = std::max(br.max_abs_error, abs_err);
                br.max_rel_error = std::max(br.max_rel_error, rel);
                ++br.entries;
            }
        report.max_rel_error = std::max(report.max_rel_error, br.max_rel_error);
        report.blocks.push_back(br);
    };
    check_block("embeddings", &ToyLmParams::embeddings, analytic.embeddings);
    check_block("hidden", &ToyLmParams::hidden, analytic.hidden);
    check_block("output", &ToyLmParams::output, analytic.output);
    return report;
}

// Small seeded problem for gradient checks: a 5-token model with d=4, h=6,
// four examples with contexts of length 1..4, and a verifier of the requested
// kind ("sigmoid", "constant", or the non-differentiable "gate").
struct GradCheckSetup {
    ToyLmParams model;
    std::vector<Example> batch;
    std::unique_ptr<Verifier> verifier;
};

inline GradCheckSetup make_gradcheck_setup(std::uint64_t seed, const std::string& verifier_kind = "sigmoid") {
    GradCheckSetup s;
    s.model = init_params(Vocab({"a", "b", "c", "d", "."}), ToyLmConfig{4, 6, 0.0, seed, phase::kDefaultBase});
    Rng rng(derive_seed(seed, "gradcheck.batch"));
    const std::size_t V = s.model.vocab_size();
    for (std::size_t len = 1; len <= 4; ++len) {
        Example ex;
        for (std::size_t i = 0; i < len; ++i) ex.context.push_back(rng.below(V));
        ex.target = rng.below(V);
        s.batch.push_back(std::move(ex));
    }
    if (verifier_kind == "sigmoid") {
        std::vector<double> w(V);
        for (double& v : w) v = rng.uniform(-2.0, 2.0);
        s.verifier = std::make_unique<SigmoidVerifier>(std::move(w), rng.uniform(-0.5, 0.5));
    } else if (verifier_kind == "constant") {
        s.verifier = std::make_unique<ConstantVerifier>(0.5);
    } else if (verifier_kind == "gate") {
        s.verifier = std::make_unique<ConfidenceGateVerifier>(0.5);
    } else {
        throw ConfigError("unknown verifier '" + verifier_kind + "'");
    }
    return s;
}

}  // namespace halluc::alignment
