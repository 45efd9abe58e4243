#pragma once
// Phase-regularized contrastive decoding and the greedy / sampling / beam
// decode loops.
//
// The phase bias eta * sin(phi_t) is the same for every candidate token at a
// given step, so it never changes the within-step ranking. It only matters
// when beam hypotheses accumulate scores across positions with different
// phases.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "halluc/error.hpp"
#include "halluc/phase.hpp"
#include "halluc/prob.hpp"
#include "halluc/rng.hpp"
#include "halluc/toy_lm.hpp"

namespace halluc::decoding {

struct ContrastiveParams {
    double lambda = 0.0;       // baseline penalty
    double eta = 0.0;          // phase bias weight, may be negative
    double prob_floor = 1e-12; // probabilities are clamped to this before log

    void validate() const {
        detail::require_config(std::isfinite(lambda) && lambda >= 0.0, "lambda must be finite and >= 0");
        detail::require_config(std::isfinite(eta), "eta must be finite");
        detail::require_config(prob_floor > 0.0 && prob_floor < 1.0, "probability floor must be in (0,1)");
    }
};

// score_i = ln max(p_full_i, floor) - lambda ln max(p_base_i, floor) + eta sin(phi)
inline std::vector<double> contrastive_scores(const ProbVector& p_full, const ProbVector& p_base, double phi,
                                              const ContrastiveParams& params) {
    params.validate();
    detail::require_input(p_full.size() == p_base.size(), "full and baseline distributions differ in length");
    const double bias = params.eta * std::sin(phi);
    std::vector<double> scores(p_full.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        scores[i] = std::log(std::max(p_full[i], params.prob_floor)) -
                    params.lambda * std::log(std::max(p_base[i], params.prob_floor)) + bias;
    return scores;
}

enum class Strategy { greedy, sample, beam };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::greedy: return "greedy";
        case Strategy::sample: return "sample";
        case Strategy::beam: return "beam";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "greedy") return Strategy::greedy;
    if (s == "sample") return Strategy::sample;
    if (s == "beam") return Strategy::beam;
    throw ConfigError("unknown decoding strategy '" + s + "'");
}

struct DecodeConfig {
    Strategy strategy = Strategy::greedy;
    std::size_t max_len = 8;  // generated tokens, prompt excluded
    std::size_t beam_width = 1;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::set<TokenId> stop_tokens;
    phase::PhaseSchedule schedule;

    void validate() const {
        detail::require_config(max_len >= 1, "max_len must be >= 1");
        detail::require_config(beam_width >= 1, "beam width must be >= 1");
        detail::require_config(std::isfinite(temperature) && temperature > 0.0, "temperature must be > 0");
        schedule.validate();
    }
};

struct DecodeStep {
    std::size_t position = 0;  // absolute position of the generated token
    TokenId token = 0;
    double phi = 0.0;
    ProbVector p_full;
    ProbVector p_base;
    std::vector<double> scores;
    double cumulative_score = 0.0;
};

struct DecodeTrace {
    std::vector<TokenId> prompt;
    std::vector<TokenId> tokens;  // generated tokens only
    std::vector<DecodeStep> steps;
    double total_score = 0.0;
};

// Index of the largest value; ties resolve to the lowest index.
inline TokenId argmax(const std::vector<double>& v) {
    return static_cast<TokenId>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Inverse-CDF draw from softmax(scores / temperature).
inline TokenId sample_token(const std::vector<double>& scores, double temperature, Rng& rng) {
    std::vector<double> scaled(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) scaled[i] = scores[i] / temperature;
    const ProbVector p = softmax(scaled);
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    // u landed in the rounding slack above the final partial sum
    for (std::size_t i = p.size(); i-- > 0;)
        if (p[i] > 0.0) return i;
    return p.size() - 1;
}

template <NextTokenModel Full, NextTokenModel Base>
void check_models(const Full& full, const Base& base, std::span<const TokenId> prompt) {
    detail::require_config(full.vocab_size() == base.vocab_size(), "full and baseline models have different vocabularies");
    detail::require_input(!prompt.empty(), "prompt must be non-empty");
    for (TokenId t : prompt) detail::require_input(t < full.vocab_size(), "prompt token out of range");
}

template <NextTokenModel Full, NextTokenModel Base>
DecodeStep score_step(const Full& full, const Base& base, const std::vector<TokenId>& context,
                      const DecodeConfig& config, const ContrastiveParams& params) {
    DecodeStep step;
    step.position = context.size();
    step.phi = phase::phase_of(static_cast<double>(step.position), config.schedule);
    step.p_full = full.next_distribution(context);
    step.p_base = base.next_distribution(context);
    step.scores = contrastive_scores(step.p_full, step.p_base, step.phi, params);
    return step;
}

namespace detail_ {

struct Hypothesis {
    std::vector<TokenId> tokens;
    double score = 0.0;
    bool finished = false;
};

// Higher score first; ties go to the lexicographically smaller token sequence.
inline bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
}

}  // namespace detail_

template <NextTokenModel Full, NextTokenModel Base>
std::vector<TokenId> beam_search(const Full& full, const Base& base, const DecodeConfig& config,
                                 const ContrastiveParams& params, const std::vector<TokenId>& prompt) {
    using detail_::Hypothesis;
    std::vector<Hypothesis> beam{Hypothesis{}};
    for (std::size_t len = 0; len < config.max_len; ++len) {
        std::vector<Hypothesis> candidates;
        bool any_open = false;
        for (const auto& h : beam) {
            if (h.finished) {
                candidates.push_back(h);
                continue;
            }
            any_open = true;
            std::vector<TokenId> ctx = prompt;
            ctx.insert(ctx.end(), h.tokens.begin(), h.tokens.end());
            const auto step = score_step(full, base, ctx, config, params);
            for (TokenId t = 0; t < step.scores.size(); ++t) {
                Hypothesis next = h;
                next.tokens.push_back(t);
                next.score += step.scores[t];
                next.finished = config.stop_tokens.count(t) != 0;
                candidates.push_back(std::move(next));
            }
        }
        if (!any_open) break;
        std::sort(candidates.begin(), candidates.end(), detail_::better);
        if (candidates.size() > config.beam_width) candidates.resize(config.beam_width);
        beam = std::move(candidates);
    }
    return beam.front().tokens;
}

template <NextTokenModel Full, NextTokenModel Base>
DecodeTrace decode(const Full& full, const Base& base, const DecodeConfig& config, const ContrastiveParams& params,
                   const std::vector<TokenId>& prompt) {
    config.validate();
    params.validate();
    check_models(full, base, prompt);

    DecodeTrace trace;
    trace.prompt = prompt;
    std::vector<TokenId> ctx = prompt;

    if (config.strategy == Strategy::beam) {
        const auto chosen = beam_search(full, base, config, params, prompt);
        for (TokenId t : chosen) {
            auto step = score_step(full, base, ctx, config, params);
            step.token = t;
            trace.total_score += step.scores[t];
            step.cumulative_score = trace.total_score;
            trace.steps.push_back(std::move(step));
            trace.tokens.push_back(t);
            ctx.push_back(t);
        }
        return trace;
    }

    Rng rng(derive_seed(config.seed, "decode.sample"));
    for (std::size_t len = 0; len < config.max_len; ++len) {
        auto step = score_step(full, base, ctx, config, params);
        step.token = config.strategy == Strategy::greedy ? argmax(step.scores)
                                                         : sample_token(step.scores, config.temperature, rng);
        trace.total_score += step.scores[step.token];
        step.cumulative_score = trace.total_score;
        const TokenId t = step.token;
        trace.steps.push_back(std::move(step));
        trace.tokens.push_back(t);
        ctx.push_back(t);
        if (config.stop_tokens.count(t)) break;
    }
    return trace;
}

}  // namespace halluc::decoding
