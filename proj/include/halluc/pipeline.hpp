#pragma once
// Verify-or-abstain generation. Each step runs an MC-dropout ensemble to get
// sigma^2_epi and its phase-modulated variants, grounds the full-model
// distribution through retrieval when the step is marked, and picks a token
// with the contrastive score. Sentence-sized spans are verified at each
// boundary; failing spans are regenerated against the top fused document up
// to a bounded number of times, then the run abstains. An optional critic
// pass may trigger one grounded revision of the whole output.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "halluc/decoding.hpp"
#include "halluc/error.hpp"
#include "halluc/grounding.hpp"
#include "halluc/phase.hpp"
#include "halluc/rng.hpp"
#include "halluc/toy_lm.hpp"
#include "halluc/uncertainty.hpp"

namespace halluc::pipeline {

// ------------------------------------------------------------ verifiers

class SpanVerifier {
public:
    virtual ~SpanVerifier() = default;
    virtual std::string name() const = 0;
    virtual bool needs_evidence() const { return false; }
    virtual double score(std::span<const TokenId> span, const grounding::DocumentStore& store) const = 0;
};

class AlwaysPass final : public SpanVerifier {
public:
    std::string name() const override { return "always-pass"; }
    double score(std::span<const TokenId>, const grounding::DocumentStore&) const override { return 1.0; }
};

class AlwaysFail final : public SpanVerifier {
public:
    std::string name() const override { return "always-fail"; }
    double score(std::span<const TokenId>, const grounding::DocumentStore&) const override { return 0.0; }
};

// Fraction of the span's content-token n-grams that occur in some document.
// Content tokens exclude the ignore set (sentence boundaries). Spans with
// fewer than n content tokens fall back to unigrams; a span with no content
// tokens makes no claim and scores 1.
class NgramSupport final : public SpanVerifier {
public:
    explicit NgramSupport(std::size_t n = 2, std::set<TokenId> ignore = {}) : n_(n), ignore_(std::move(ignore)) {
        detail::require_config(n_ >= 1, "n-gram order must be >= 1");
    }
    std::string name() const override { return "ngram"; }
    bool needs_evidence() const override { return true; }

    double score(std::span<const TokenId> span, const grounding::DocumentStore& store) const override {
        const auto content = strip(span);
        if (content.empty()) return 1.0;
        const std::size_t n = content.size() >= n_ ? n_ : 1;
        std::set<std::vector<TokenId>> evidence;
        for (const auto& d : store.documents()) {
            const auto dt = strip(d.tokens);
            for (std::size_t i = 0; i + n <= dt.size(); ++i)
                evidence.emplace(dt.begin() + static_cast<std::ptrdiff_t>(i),
                                 dt.begin() + static_cast<std::ptrdiff_t>(i + n));
        }
        std::size_t total = 0, found = 0;
        for (std::size_t i = 0; i + n <= content.size(); ++i) {
            ++total;
            const std::vector<TokenId> g(content.begin() + static_cast<std::ptrdiff_t>(i),
                                         content.begin() + static_cast<std::ptrdiff_t>(i + n));
            found += evidence.count(g);
        }
        return static_cast<double>(found) / static_cast<double>(total);
    }

private:
    std::vector<TokenId> strip(std::span<const TokenId> toks) const {
        std::vector<TokenId> out;
        for (TokenId t : toks)
            if (!ignore_.count(t)) out.push_back(t);
        return out;
    }
    std::size_t n_;
    std::set<TokenId> ignore_;
};

inline double verify_span(std::span<const TokenId> span, const grounding::DocumentStore& store,
                          const SpanVerifier& verifier) {
    detail::require_input(!span.empty(), "cannot verify an empty span");
    if (verifier.needs_evidence() && store.empty())
        throw ConfigError("verifier '" + verifier.name() + "' needs a non-empty evidence store");
    const double s = verifier.score(span, store);
    if (!(s >= 0.0 && s <= 1.0))
        throw ContractError("verifier '" + verifier.name() + "' returned " + std::to_string(s) + " outside [0,1]");
    return s;
}

enum class VerifierKind { always_pass, always_fail, ngram };

inline std::string to_string(VerifierKind k) {
    switch (k) {
        case VerifierKind::always_pass: return "always-pass";
        case VerifierKind::always_fail: return "always-fail";
        case VerifierKind::ngram: return "ngram";
    }
    return "?";
}

inline VerifierKind parse_verifier_kind(const std::string& s) {
    if (s == "always-pass") return VerifierKind::always_pass;
    if (s == "always-fail") return VerifierKind::always_fail;
    if (s == "ngram") return VerifierKind::ngram;
    throw ConfigError("unknown verifier '" + s + "'");
}

inline std::unique_ptr<SpanVerifier> make_verifier(VerifierKind kind, std::size_t ngram,
                                                   const std::set<TokenId>& ignore) {
    switch (kind) {
        case VerifierKind::always_pass: return std::make_unique<AlwaysPass>();
        case VerifierKind::always_fail: return std::make_unique<AlwaysFail>();
        case VerifierKind::ngram: return std::make_unique<NgramSupport>(ngram, ignore);
    }
    throw ConfigError("unknown verifier kind");
}

// ------------------------------------------------------------- config

enum class OscForm { main, general };

struct PipelineConfig {
    std::uint64_t seed = 7;
    std::vector<TokenId> prompt;
    std::size_t max_len = 12;  // accepted tokens, prompt excluded
    std::set<TokenId> stop_tokens;

    // uncertainty gating
    std::size_t ensemble_size = 8;
    uncertainty::PhaseModParams phase_mod;
    OscForm osc_form = OscForm::main;
    double tau_u = 1e-4;  // mark a step when sigma^2_osc >= tau_u
    phase::PhaseSchedule schedule;

    // semantic gating over span rollouts; 0 candidates disables it
    std::size_t kle_candidates = 4;
    uncertainty::KernelConfig kle_kernel;
    double tau_s = 10.0;  // a span fails when its KLE exceeds tau_s

    decoding::ContrastiveParams contrastive;
    decoding::Strategy strategy = decoding::Strategy::greedy;
    double temperature = 1.0;

    grounding::GroundingConfig grounding;

    VerifierKind verifier = VerifierKind::ngram;
    std::size_t ngram = 2;
    double verify_threshold = 0.5;
    std::size_t max_regenerations = 2;

    std::optional<VerifierKind> critic;  // unset: no self-critique pass
    double critic_threshold = 0.5;

    void validate(std::size_t vocab_size) const {
        detail::require_config(!prompt.empty(), "pipeline prompt must be non-empty");
        for (TokenId t : prompt) detail::require_config(t < vocab_size, "prompt token out of range");
        for (TokenId t : stop_tokens) detail::require_config(t < vocab_size, "stop token out of range");
        detail::require_config(max_len >= 1, "max_len must be >= 1");
        detail::require_config(ensemble_size >= 2, "ensemble size must be >= 2");
        phase_mod.validate();
        schedule.validate();
        detail::require_config(std::isfinite(tau_u) && tau_u >= 0.0, "tau_u must be finite and >= 0");
        detail::require_config(std::isfinite(tau_s) && tau_s >= 0.0, "tau_s must be finite and >= 0");
        detail::require_config(kle_candidates != 1, "KLE needs 0 (disabled) or >= 2 candidates");
        detail::require_config(kle_kernel.width > 0.0, "KLE kernel width must be > 0");
        contrastive.validate();
        detail::require_config(strategy != decoding::Strategy::beam,
                               "the pipeline decodes step by step; beam search is not supported");
        detail::require_config(std::isfinite(temperature) && temperature > 0.0, "temperature must be > 0");
        grounding.validate();
        detail::require_config(ngram >= 1, "n-gram order must be >= 1");
        detail::require_config(verify_threshold >= 0.0 && verify_threshold <= 1.0, "verify threshold must be in [0,1]");
        detail::require_config(critic_threshold >= 0.0 && critic_threshold <= 1.0, "critic threshold must be in [0,1]");
    }
};

// -------------------------------------------------------------- trace

enum class Decision { accepted, regenerated, abstained };

inline std::string to_string(Decision d) {
    switch (d) {
        case Decision::accepted: return "accepted";
        case Decision::regenerated: return "regenerated";
        case Decision::abstained: return "abstained";
    }
    return "?";
}

struct StepRecord {
    std::string segment;  // "main" or "revision"
    std::size_t span_index = 0;
    std::size_t attempt = 0;
    std::size_t position = 0;
    TokenId token = 0;
    double phi = 0.0;
    double sigma2_epi = 0.0;
    double sigma2_phi = 0.0;
    double sigma2_osc = 0.0;
    bool osc_capped = false;
    bool marked = false;    // sigma^2_osc >= tau_u
    bool grounded = false;  // retrieval mixture actually used
    bool forced = false;    // regeneration / revision conditioning on top evidence
    std::string evidence;   // document prepended when forced
    double score = 0.0;     // contrastive score of the chosen token
    Decision decision = Decision::accepted;
    double verifier_score = 0.0;
    std::optional<double> kle;
};

struct SpanRecord {
    std::string segment;
    std::size_t span_index = 0;
    std::size_t attempt = 0;
    std::vector<TokenId> tokens;
    double verifier_score = 0.0;
    std::optional<double> kle;
    Decision decision = Decision::accepted;
};

struct Critique {
    std::string critic;
    double score = 0.0;
    double threshold = 0.0;
    bool revised = false;
};

struct GenerationTrace {
    std::vector<TokenId> prompt;
    std::vector<StepRecord> steps;
    std::vector<SpanRecord> spans;
    std::vector<TokenId> output;  // accepted tokens of the final segment
    bool abstained = false;
    std::string abstain_reason;
    std::optional<Critique> critique;

    std::string status() const { return abstained ? "abstained" : "completed"; }
};

struct Summary {
    std::size_t tokens_emitted = 0;
    std::size_t steps = 0;
    std::size_t regenerations = 0;
    std::size_t abstentions = 0;
    std::size_t marked_steps = 0;
    double mean_sigma2_osc = 0.0;
};

inline Summary summarize(const GenerationTrace& t) {
    Summary s;
    s.tokens_emitted = t.output.size();
    s.steps = t.steps.size();
    for (const auto& sp : t.spans) {
        if (sp.decision == Decision::regenerated) ++s.regenerations;
        if (sp.decision == Decision::abstained) ++s.abstentions;
    }
    double sum = 0.0;
    for (const auto& st : t.steps) {
        sum += st.sigma2_osc;
        s.marked_steps += st.marked ? 1 : 0;
    }
    s.mean_sigma2_osc = t.steps.empty() ? 0.0 : sum / static_cast<double>(t.steps.size());
    return s;
}

// Steps that a threshold tau would mark, evaluated on a fixed trace.
inline std::size_t count_marked(const GenerationTrace& t, double tau) {
    std::size_t n = 0;
    for (const auto& st : t.steps) n += st.sigma2_osc >= tau ? 1 : 0;
    return n;
}

// ------------------------------------------------------------ pipeline

class Pipeline {
public:
    Pipeline(ToyLm full, ToyLm base, grounding::DocumentStore store, PipelineConfig config)
        : full_(std::move(full)), base_(std::move(base)), store_(std::move(store)), cfg_(std::move(config)) {
        detail::require_config(full_.vocab() == base_.vocab(), "full and baseline models have different vocabularies");
        cfg_.validate(full_.vocab_size());
        verifier_ = make_verifier(cfg_.verifier, cfg_.ngram, cfg_.stop_tokens);
        if (verifier_->needs_evidence() && store_.empty())
            throw ConfigError("verifier '" + verifier_->name() + "' needs a non-empty evidence store");
        if (cfg_.critic) {
            critic_ = make_verifier(*cfg_.critic, cfg_.ngram, cfg_.stop_tokens);
            if (critic_->needs_evidence() && store_.empty())
                throw ConfigError("critic '" + critic_->name() + "' needs a non-empty evidence store");
        }
    }

    const PipelineConfig& config() const noexcept { return cfg_; }
    const ToyLm& full_model() const noexcept { return full_; }

    GenerationTrace run() const {
        GenerationTrace trace;
        trace.prompt = cfg_.prompt;
        Streams streams(cfg_.seed, "main");
        generate(trace, "main", false, streams);
        if (critic_) self_critique(trace, *critic_);
        return trace;
    }

    // One critique round: a failing output is regenerated once with grounding
    // forced at every step; the revision is appended as its own segment.
    void self_critique(GenerationTrace& trace, const SpanVerifier& critic) const {
        Critique c;
        c.critic = critic.name();
        c.threshold = cfg_.critic_threshold;
        c.score = trace.output.empty() ? 0.0 : verify_span(trace.output, store_, critic);
        if (c.score < c.threshold) {
            c.revised = true;
            trace.output.clear();
            trace.abstained = false;
            trace.abstain_reason.clear();
            Streams streams(cfg_.seed, "revision");
            generate(trace, "revision", true, streams);
        }
        trace.critique = c;
    }

private:
    struct Streams {
        Streams(std::uint64_t seed, const std::string& segment)
            : ensemble(derive_seed(derive_seed(seed, segment), "ensemble")),
              sample(derive_seed(derive_seed(seed, segment), "sample")),
              kle(derive_seed(derive_seed(seed, segment), "kle")) {}
        Rng ensemble;
        Rng sample;
        Rng kle;
    };

    // Top fused document for a context, if any document matches.
    std::optional<std::string> top_evidence(const std::vector<TokenId>& ctx) const {
        if (store_.empty()) return std::nullopt;
        const auto fused = grounding::rrf_fuse(grounding::query_rankings(store_, ctx, cfg_.grounding, cfg_.stop_tokens),
                                               cfg_.grounding.k);
        if (fused.empty()) return store_.documents().front().id;
        return fused.front().id;
    }

    StepRecord step(const std::vector<TokenId>& ctx, bool forced, const std::optional<std::string>& evidence,
                    Streams& streams) const {
        StepRecord rec;
        rec.position = ctx.size();
        rec.phi = phase::phase_of(static_cast<double>(rec.position), cfg_.schedule);

        uncertainty::EnsembleRun run;
        for (const auto& mask : sample_masks(full_.params(), cfg_.ensemble_size, streams.ensemble))
            run.passes.push_back(full_.next_distribution(ctx, mask));
        const auto epi = uncertainty::epistemic_variance(run);
        rec.sigma2_epi = epi.variance;
        rec.sigma2_phi = uncertainty::phase_variance_gamma(epi.variance, rec.phi, cfg_.phase_mod.gamma).value;
        const auto osc = cfg_.osc_form == OscForm::main
                             ? uncertainty::oscillatory_variance(epi.variance, rec.phi, cfg_.phase_mod)
                             : uncertainty::oscillatory_variance_general(epi.variance, rec.phi, cfg_.phase_mod);
        rec.sigma2_osc = osc.value;
        rec.osc_capped = osc.capped;
        rec.marked = rec.sigma2_osc >= cfg_.tau_u;

        ProbVector p_full;
        if (forced && evidence) {
            rec.forced = true;
            rec.evidence = *evidence;
            rec.grounded = true;
            p_full = full_.next_distribution(
                grounding::condition_on(store_.get(*evidence), ctx, cfg_.grounding.doc_window));
        } else if (rec.marked && !store_.empty()) {
            auto g = grounding::grounded_next_token(full_, store_, ctx, cfg_.grounding, cfg_.stop_tokens);
            rec.grounded = g.grounded;
            p_full = std::move(g.dist);
        } else {
            p_full = full_.next_distribution(ctx);
        }
        const ProbVector p_base = base_.next_distribution(ctx);
        const auto scores = decoding::contrastive_scores(p_full, p_base, rec.phi, cfg_.contrastive);
        rec.token = cfg_.strategy == decoding::Strategy::greedy
                        ? decoding::argmax(scores)
                        : decoding::sample_token(scores, cfg_.temperature, streams.sample);
        rec.score = scores[rec.token];
        return rec;
    }

    // KLE over the produced span and MC-dropout greedy rollouts of equal length.
    std::optional<double> span_kle(const std::vector<TokenId>& start, const std::vector<TokenId>& span,
                                   Rng& rng) const {
        if (cfg_.kle_candidates < 2) return std::nullopt;
        const auto& E = full_.params().embeddings;
        const auto embed = [&](const std::vector<TokenId>& toks) {
            std::vector<double> e(static_cast<std::size_t>(E.cols()), 0.0);
            for (TokenId t : toks)
                for (Eigen::Index c = 0; c < E.cols(); ++c)
                    e[static_cast<std::size_t>(c)] += E(static_cast<Eigen::Index>(t), c);
            for (double& v : e) v /= static_cast<double>(toks.size());
            return e;
        };
        std::vector<std::vector<double>> embs{embed(span)};
        const auto masks = sample_masks(full_.params(), cfg_.kle_candidates - 1, rng);
        for (const auto& mask : masks) {
            std::vector<TokenId> ctx = start;
            std::vector<TokenId> rollout;
            for (std::size_t i = 0; i < span.size(); ++i) {
                const TokenId t = full_.next_distribution(ctx, mask).argmax();
                rollout.push_back(t);
                ctx.push_back(t);
            }
            embs.push_back(embed(rollout));
        }
        return uncertainty::kle_from_candidates(embs, cfg_.kle_kernel).entropy;
    }

    void generate(GenerationTrace& trace, const std::string& segment, bool force_all, Streams& streams) const {
        std::vector<TokenId> accepted;
        std::size_t span_index = 0;
        while (accepted.size() < cfg_.max_len) {
            std::vector<TokenId> start = cfg_.prompt;
            start.insert(start.end(), accepted.begin(), accepted.end());
            bool span_done = false;
            for (std::size_t attempt = 0; !span_done; ++attempt) {
                const bool forced = force_all || attempt > 0;
                const auto evidence = forced ? top_evidence(start) : std::nullopt;
                std::vector<TokenId> ctx = start;
                std::vector<TokenId> span;
                const std::size_t first_step = trace.steps.size();
                while (accepted.size() + span.size() < cfg_.max_len) {
                    StepRecord rec = step(ctx, forced, evidence, streams);
                    rec.segment = segment;
                    rec.span_index = span_index;
                    rec.attempt = attempt;
                    span.push_back(rec.token);
                    ctx.push_back(rec.token);
                    trace.steps.push_back(std::move(rec));
                    if (cfg_.stop_tokens.count(span.back())) break;
                }

                SpanRecord sr;
                sr.segment = segment;
                sr.span_index = span_index;
                sr.attempt = attempt;
                sr.tokens = span;
                sr.verifier_score = verify_span(span, store_, *verifier_);
                sr.kle = span_kle(start, span, streams.kle);
                const bool verified = sr.verifier_score >= cfg_.verify_threshold;
                const bool confident = !sr.kle || *sr.kle <= cfg_.tau_s;
                if (verified && confident) {
                    sr.decision = Decision::accepted;
                    accepted.insert(accepted.end(), span.begin(), span.end());
                    span_done = true;
                } else if (attempt < cfg_.max_regenerations) {
                    sr.decision = Decision::regenerated;
                } else {
                    sr.decision = Decision::abstained;
                    trace.abstained = true;
                    trace.abstain_reason = !verified ? "span failed verification after " +
                                                           std::to_string(attempt) + " regenerations"
                                                     : "span semantic entropy above tau_s after " +
                                                           std::to_string(attempt) + " regenerations";
                    span_done = true;
                }
                for (std::size_t i = first_step; i < trace.steps.size(); ++i) {
                    trace.steps[i].decision = sr.decision;
                    trace.steps[i].verifier_score = sr.verifier_score;
                    trace.steps[i].kle = sr.kle;
                }
                trace.spans.push_back(std::move(sr));
            }
            if (trace.abstained) break;
            ++span_index;
        }
        trace.output = std::move(accepted);
    }

    ToyLm full_;
    ToyLm base_;
    grounding::DocumentStore store_;
    PipelineConfig cfg_;
    std::unique_ptr<SpanVerifier> verifier_;
    std::unique_ptr<SpanVerifier> critic_;
};

inline GenerationTrace run_pipeline(const ToyLm& full, const ToyLm& base, const grounding::DocumentStore& store,
                                    const PipelineConfig& config) {
    return Pipeline(full, base, store, config).run();
}

}  // namespace halluc::pipeline
