#pragma once
// Reciprocal Rank Fusion, retrieval-mixture next-token distributions, and a
// small in-memory document store ranked by token overlap.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "halluc/error.hpp"
#include "halluc/prob.hpp"
#include "halluc/toy_lm.hpp"

namespace halluc::grounding {

struct Ranking {
    std::string query_id;
    std::vector<std::string> doc_ids;  // index 0 is rank 1

    void validate() const {
        std::set<std::string> seen;
        for (const auto& id : doc_ids)
            detail::require_input(seen.insert(id).second,
                                  "ranking '" + query_id + "' lists document '" + id + "' twice");
    }
};

struct ScoredDoc {
    std::string id;
    double score = 0.0;
    bool operator==(const ScoredDoc&) const = default;
};

inline constexpr double kDefaultRrfK = 60.0;

// RRF(r) = sum_q 1 / (k + rank_q(r)); descending, ties by document id.
inline std::vector<ScoredDoc> rrf_fuse(const std::vector<Ranking>& rankings, double k = kDefaultRrfK) {
    detail::require_config(std::isfinite(k) && k > 0.0, "RRF constant k must be > 0");
    detail::require_input(!rankings.empty(), "RRF needs at least one ranking");
    std::map<std::string, std::vector<std::size_t>> ranks;
    for (const auto& r : rankings) {
        r.validate();
        for (std::size_t i = 0; i < r.doc_ids.size(); ++i) ranks[r.doc_ids[i]].push_back(i + 1);
    }
    std::vector<ScoredDoc> out;
    out.reserve(ranks.size());
    for (auto& [id, rs] : ranks) {
        // summing in rank order makes the result independent of query order
        std::sort(rs.begin(), rs.end());
        double s = 0.0;
        for (std::size_t rank : rs) s += 1.0 / (k + static_cast<double>(rank));
        out.push_back({id, s});
    }
    // map iteration is id-ordered, so a stable sort keeps id order among ties
    std::stable_sort(out.begin(), out.end(), [](const ScoredDoc& a, const ScoredDoc& b) { return a.score > b.score; });
    return out;
}

inline std::vector<double> posterior_from_rrf(const std::vector<double>& scores) {
    detail::require_input(!scores.empty(), "posterior needs at least one document score");
    double sum = 0.0;
    for (double s : scores) {
        detail::require_input(std::isfinite(s) && s >= 0.0, "document scores must be finite and >= 0");
        sum += s;
    }
    detail::require_input(sum > 0.0, "all document scores are zero");
    std::vector<double> w(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) w[i] = scores[i] / sum;
    return w;
}

inline std::vector<ScoredDoc> top_r(std::vector<ScoredDoc> fused, std::size_t r) {
    if (fused.size() > r) fused.resize(r);
    return fused;
}

// sum_r P(x | ctx, r) P(r | ctx)
inline ProbVector mixture_next_token(const std::vector<ProbVector>& dists, const std::vector<double>& weights) {
    detail::require_input(!dists.empty(), "mixture needs at least one component");
    detail::require_input(dists.size() == weights.size(), "mixture: one weight per component required");
    const ProbVector w(weights);  // validates the posterior
    const std::size_t V = dists.front().size();
    std::vector<double> out(V, 0.0);
    for (std::size_t r = 0; r < dists.size(); ++r) {
        detail::require_input(dists[r].size() == V, "mixture components differ in length");
        for (std::size_t i = 0; i < V; ++i) out[i] += w[r] * dists[r][i];
    }
    return ProbVector(std::move(out));
}

struct Document {
    std::string id;
    std::string text;
    std::vector<TokenId> tokens;
};

class DocumentStore {
public:
    DocumentStore() = default;

    void add(const Vocab& vocab, std::string id, std::string text) {
        detail::require_input(!id.empty(), "document id must be non-empty");
        for (const auto& d : docs_) detail::require_input(d.id != id, "duplicate document id '" + id + "'");
        Document d{std::move(id), std::move(text), {}};
        d.tokens = vocab.encode_lenient(d.text);
        docs_.push_back(std::move(d));
    }

    const std::vector<Document>& documents() const noexcept { return docs_; }
    bool empty() const noexcept { return docs_.empty(); }

    const Document& get(const std::string& id) const {
        for (const auto& d : docs_)
            if (d.id == id) return d;
        throw InputError("unknown document id '" + id + "'");
    }

    // Documents sharing at least one distinct token with the query, ranked by
    // the number of shared distinct tokens, ties by id.
    Ranking retrieve(const std::string& query_id, const std::vector<TokenId>& query,
                     const std::set<TokenId>& ignore = {}) const {
        std::set<TokenId> q;
        for (TokenId t : query)
            if (!ignore.count(t)) q.insert(t);
        std::vector<std::pair<std::size_t, const Document*>> hits;
        for (const auto& d : docs_) {
            std::set<TokenId> dt(d.tokens.begin(), d.tokens.end());
            std::size_t overlap = 0;
            for (TokenId t : q) overlap += dt.count(t);
            if (overlap > 0) hits.emplace_back(overlap, &d);
        }
        std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second->id < b.second->id;
        });
        Ranking r{query_id, {}};
        for (const auto& [_, d] : hits) r.doc_ids.push_back(d->id);
        return r;
    }

private:
    std::vector<Document> docs_;
};

struct GroundingConfig {
    double k = kDefaultRrfK;
    std::size_t top_r = 3;
    std::size_t doc_window = 8;     // document tokens prepended to the context
    std::size_t recent_window = 3;  // size of the "recent tokens" query variant

    void validate() const {
        detail::require_config(std::isfinite(k) && k > 0.0, "RRF constant k must be > 0");
        detail::require_config(top_r >= 1, "top_r must be >= 1");
        detail::require_config(doc_window >= 1, "document window must be >= 1");
        detail::require_config(recent_window >= 1, "recent window must be >= 1");
    }
};

// Query variants derived from a context: all tokens, and the most recent ones.
inline std::vector<Ranking> query_rankings(const DocumentStore& store, const std::vector<TokenId>& context,
                                           const GroundingConfig& cfg, const std::set<TokenId>& ignore = {}) {
    std::vector<Ranking> out;
    out.push_back(store.retrieve("context", context, ignore));
    const std::size_t n = std::min(cfg.recent_window, context.size());
    std::vector<TokenId> recent(context.end() - static_cast<std::ptrdiff_t>(n), context.end());
    out.push_back(store.retrieve("recent", recent, ignore));
    return out;
}

inline std::vector<TokenId> condition_on(const Document& doc, const std::vector<TokenId>& context,
                                         std::size_t window) {
    std::vector<TokenId> ctx(doc.tokens.begin(),
                             doc.tokens.begin() + static_cast<std::ptrdiff_t>(std::min(window, doc.tokens.size())));
    ctx.insert(ctx.end(), context.begin(), context.end());
    return ctx;
}

struct GroundedDistribution {
    ProbVector dist;
    std::vector<ScoredDoc> retained;  // top-R fused documents
    std::vector<double> weights;      // posterior over retained
    bool grounded = false;            // false when nothing was retrieved
};

// Retrieval mixture for the next token. Falls back to the unconditioned
// distribution when no document matches the context.
template <class Model>
GroundedDistribution grounded_next_token(const Model& model, const DocumentStore& store,
                                         const std::vector<TokenId>& context, const GroundingConfig& cfg,
                                         const std::set<TokenId>& ignore = {}) {
    cfg.validate();
    GroundedDistribution out;
    const auto rankings = query_rankings(store, context, cfg, ignore);
    auto fused = rrf_fuse(rankings, cfg.k);
    if (fused.empty()) {
        out.dist = model.next_distribution(context);
        return out;
    }
    out.retained = top_r(std::move(fused), cfg.top_r);
    std::vector<double> scores;
    std::vector<ProbVector> dists;
    for (const auto& sd : out.retained) {
        scores.push_back(sd.score);
        dists.push_back(model.next_distribution(condition_on(store.get(sd.id), context, cfg.doc_window)));
    }
    out.weights = posterior_from_rrf(scores);
    out.dist = mixture_next_token(dists, out.weights);
    out.grounded = true;
    return out;
}

}  // namespace halluc::grounding
