#pragma once
// File formats: JSON documents, JSON-lines and CSV readers/writers for every
// module's inputs and reports.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "halluc/alignment.hpp"
#include "halluc/decoding.hpp"
#include "halluc/error.hpp"
#include "halluc/grounding.hpp"
#include "halluc/info.hpp"
#include "halluc/phase.hpp"
#include "halluc/pipeline.hpp"
#include "halluc/toy_lm.hpp"
#include "halluc/uncertainty.hpp"

namespace halluc::io {

using Json = nlohmann::ordered_json;

// Shortest round-trip representation of a double.
inline std::string fmt(double v) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(what + ": malformed JSON (" + e.what() + ")");
    }
}

inline Json read_json(const std::string& path) { return parse_json(read_file(path), path); }

inline std::vector<Json> read_jsonl(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<Json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_json(line, path + ":" + std::to_string(lineno)));
    }
    return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) {
            const auto b = cell.find_first_not_of(" \t");
            const auto e = cell.find_last_not_of(" \t");
            cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline double to_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InputError(what + ": '" + s + "' is not a number");
    }
}

// Rejects keys outside the allowed set.
inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& what) {
    if (!j.is_object()) throw InputError(what + ": expected a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, _] : j.items())
        if (!ok.count(k)) throw InputError(what + ": unknown key '" + k + "'");
}

template <class T>
T get(const Json& j, const char* key, const std::string& what) {
    if (!j.contains(key)) throw InputError(what + ": missing key '" + std::string(key) + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InputError(what + ": key '" + std::string(key) + "' has the wrong type");
    }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& what) {
    return j.contains(key) ? get<T>(j, key, what) : fallback;
}

// ------------------------------------------------------------- distributions

inline std::vector<double> to_doubles(const Json& j, const std::string& what) {
    if (!j.is_array()) throw InputError(what + ": expected an array of numbers");
    std::vector<double> v;
    for (const auto& x : j) {
        if (!x.is_number()) throw InputError(what + ": expected an array of numbers");
        v.push_back(x.get<double>());
    }
    return v;
}

inline ProbVector to_prob(const Json& j, const std::string& what) { return ProbVector(to_doubles(j, what)); }

inline info::JointTable to_joint(const Json& j, const std::string& what) {
    if (!j.is_array()) throw InputError(what + ": expected a 2-D array");
    info::JointTable t;
    for (const auto& row : j) t.push_back(to_doubles(row, what));
    return t;
}

// --------------------------------------------------------------- drift

// Either explicit per-step arrays or a constant {p, eps, horizon} shorthand.
inline info::DriftScenario to_drift_scenario(const Json& j, const std::string& what) {
    check_keys(j, {"true_probs", "perturbations", "p", "eps", "horizon"}, what);
    info::DriftScenario s;
    if (j.contains("true_probs")) {
        s.true_probs = to_doubles(j.at("true_probs"), what);
        s.perturbations = to_doubles(get<Json>(j, "perturbations", what), what);
    } else {
        const double p = get<double>(j, "p", what);
        const double eps = get<double>(j, "eps", what);
        const auto horizon = get<std::size_t>(j, "horizon", what);
        detail::require_input(horizon >= 1, what + ": horizon must be >= 1");
        s.true_probs.assign(horizon, p);
        s.perturbations.assign(horizon, eps);
    }
    return s;
}

inline std::string drift_csv(const std::vector<info::DriftStep>& steps) {
    std::string out = "t,clean,perturbed,ratio,log_gap,first_order_delta\n";
    for (const auto& s : steps)
        out += std::to_string(s.t) + "," + fmt(s.clean_joint) + "," + fmt(s.perturbed_joint) + "," + fmt(s.ratio) +
               "," + fmt(s.log_gap) + "," + fmt(s.first_order_delta) + "\n";
    return out;
}

// ----------------------------------------------------------- calibration

inline bool to_bool_cell(const std::string& s, const std::string& what) {
    if (s == "1" || s == "true" || s == "True") return true;
    if (s == "0" || s == "false" || s == "False") return false;
    throw InputError(what + ": '" + s + "' is not a boolean");
}

inline std::vector<uncertainty::CalibrationRecord> read_calibration_csv(const std::string& path) {
    std::vector<uncertainty::CalibrationRecord> out;
    for (const auto& row : read_csv(path)) {
        if (row.size() == 2 && row[0] == "confidence") continue;
        detail::require_input(row.size() == 2, path + ": expected rows 'confidence,correct'");
        out.push_back({to_double(row[0], path), to_bool_cell(row[1], path)});
    }
    return out;
}

inline Json to_json(const uncertainty::EceReport& r) {
    Json bins = Json::array();
    for (const auto& b : r.bins)
        bins.push_back(Json{{"lower", b.lower}, {"upper", b.upper}, {"count", b.count},
                            {"confidence", b.confidence}, {"accuracy", b.accuracy}});
    return Json{{"ece", r.ece}, {"bins", bins}};
}

// ------------------------------------------------------------ candidates

struct Candidate {
    std::string id;
    std::string text;
    std::vector<double> embedding;
};

inline std::vector<Candidate> read_candidates(const std::string& path) {
    std::vector<Candidate> out;
    for (const auto& j : read_jsonl(path)) {
        check_keys(j, {"id", "text", "embedding"}, path);
        Candidate c;
        c.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        c.text = get_or<std::string>(j, "text", "", path);
        c.embedding = to_doubles(get<Json>(j, "embedding", path), path);
        out.push_back(std::move(c));
    }
    detail::require_input(!out.empty(), path + ": no candidates");
    return out;
}

inline Json to_json(const uncertainty::KernelMatrix& km) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < km.k.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < km.k.cols(); ++c) row.push_back(km.k(r, c));
        rows.push_back(row);
    }
    return rows;
}

// ------------------------------------------------------------- documents

inline grounding::DocumentStore read_documents(const std::string& path, const Vocab& vocab) {
    grounding::DocumentStore store;
    for (const auto& j : read_jsonl(path)) {
        check_keys(j, {"id", "text"}, path);
        store.add(vocab, get<std::string>(j, "id", path), get<std::string>(j, "text", path));
    }
    return store;
}

// Rows (query_id, doc_id, rank); ranks within a query need not be contiguous
// but must be distinct.
inline std::vector<grounding::Ranking> read_rankings_csv(const std::string& path) {
    std::map<std::string, std::map<double, std::string>> by_query;
    std::vector<std::string> order;
    for (const auto& row : read_csv(path)) {
        if (row.size() == 3 && row[0] == "query_id") continue;
        detail::require_input(row.size() == 3, path + ": expected rows 'query_id,doc_id,rank'");
        const double rank = to_double(row[2], path);
        detail::require_input(rank >= 1.0, path + ": rank must be >= 1");
        if (!by_query.count(row[0])) order.push_back(row[0]);
        const bool fresh = by_query[row[0]].emplace(rank, row[1]).second;
        detail::require_input(fresh, path + ": duplicate rank in query '" + row[0] + "'");
    }
    std::vector<grounding::Ranking> out;
    for (const auto& q : order) {
        grounding::Ranking r{q, {}};
        for (const auto& [_, doc] : by_query[q]) r.doc_ids.push_back(doc);
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------- phase

inline Json to_json(const phase::FourierFit& f) {
    return Json{{"order", f.order}, {"a", f.a}, {"b", f.b}, {"residual_rms", f.residual_rms}};
}

inline phase::FourierFit fourier_from_json(const Json& j, const std::string& what) {
    check_keys(j, {"order", "a", "b", "residual_rms"}, what);
    phase::FourierFit f;
    f.order = get<std::size_t>(j, "order", what);
    f.a = to_doubles(get<Json>(j, "a", what), what);
    f.b = to_doubles(get<Json>(j, "b", what), what);
    f.residual_rms = get<double>(j, "residual_rms", what);
    detail::require_input(f.a.size() == f.order + 1 && f.b.size() == f.order, what + ": coefficient count mismatch");
    return f;
}

// -------------------------------------------------------------- toy model

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw InputError(what + ": matrix has the wrong number of rows");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto row = to_doubles(j[static_cast<std::size_t>(r)], what);
        if (static_cast<Eigen::Index>(row.size()) != cols) throw InputError(what + ": matrix row has the wrong length");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
    }
    return m;
}

inline Json to_json(const ToyLmParams& p) {
    return Json{{"vocab", p.vocab.tokens()},
                {"embed_dim", p.embed_dim},
                {"hidden_dim", p.hidden_dim},
                {"dropout_rate", p.dropout_rate},
                {"seed", p.seed},
                {"pe_base", p.pe_base},
                {"embeddings", matrix_to_json(p.embeddings)},
                {"hidden", matrix_to_json(p.hidden)},
                {"output", matrix_to_json(p.output)}};
}

inline ToyLmParams params_from_json(const Json& j, const std::string& what) {
    check_keys(j, {"vocab", "embed_dim", "hidden_dim", "dropout_rate", "seed", "pe_base", "embeddings", "hidden",
                   "output"},
               what);
    ToyLmParams p;
    p.vocab = Vocab(get<std::vector<std::string>>(j, "vocab", what));
    p.embed_dim = get<std::size_t>(j, "embed_dim", what);
    p.hidden_dim = get<std::size_t>(j, "hidden_dim", what);
    p.dropout_rate = get<double>(j, "dropout_rate", what);
    p.seed = get<std::uint64_t>(j, "seed", what);
    p.pe_base = get_or<double>(j, "pe_base", phase::kDefaultBase, what);
    const auto V = static_cast<Eigen::Index>(p.vocab.size());
    const auto d = static_cast<Eigen::Index>(p.embed_dim);
    const auto h = static_cast<Eigen::Index>(p.hidden_dim);
    p.embeddings = matrix_from_json(get<Json>(j, "embeddings", what), V, d, what);
    p.hidden = matrix_from_json(get<Json>(j, "hidden", what), d, h, what);
    p.output = matrix_from_json(get<Json>(j, "output", what), h, V, what);
    p.validate();
    return p;
}

// Model config: dims, dropout and seed; weights are drawn from the seed.
inline ToyLmConfig model_config_from_json(const Json& j, const std::string& what, std::vector<std::string>* vocab) {
    check_keys(j, {"vocab", "embed_dim", "hidden_dim", "dropout_rate", "seed", "pe_base"}, what);
    ToyLmConfig c;
    c.embed_dim = get_or<std::size_t>(j, "embed_dim", c.embed_dim, what);
    c.hidden_dim = get_or<std::size_t>(j, "hidden_dim", c.hidden_dim, what);
    c.dropout_rate = get_or<double>(j, "dropout_rate", c.dropout_rate, what);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed, what);
    c.pe_base = get_or<double>(j, "pe_base", c.pe_base, what);
    if (vocab && j.contains("vocab")) *vocab = get<std::vector<std::string>>(j, "vocab", what);
    return c;
}

inline Json to_json(const ToyLmConfig& c) {
    return Json{{"embed_dim", c.embed_dim}, {"hidden_dim", c.hidden_dim}, {"dropout_rate", c.dropout_rate},
                {"seed", c.seed}, {"pe_base", c.pe_base}};
}

// ---------------------------------------------------------------- decoding

inline Json to_json(const decoding::DecodeStep& s, const Vocab& vocab) {
    return Json{{"position", s.position},
                {"token", s.token},
                {"text", vocab.token(s.token)},
                {"phi", s.phi},
                {"score", s.scores[s.token]},
                {"cumulative_score", s.cumulative_score},
                {"p_full", s.p_full.vec()},
                {"p_base", s.p_base.vec()},
                {"scores", s.scores}};
}

// ----------------------------------------------------------------- pipeline

inline Json to_json(const pipeline::StepRecord& s, const Vocab& vocab) {
    Json j{{"segment", s.segment},
           {"span", s.span_index},
           {"attempt", s.attempt},
           {"position", s.position},
           {"token", s.token},
           {"text", vocab.token(s.token)},
           {"phi", s.phi},
           {"sigma2_epi", s.sigma2_epi},
           {"sigma2_phi", s.sigma2_phi},
           {"sigma2_osc", s.sigma2_osc},
           {"osc_capped", s.osc_capped},
           {"marked", s.marked},
           {"grounded", s.grounded},
           {"forced", s.forced},
           {"evidence", s.forced ? Json(s.evidence) : Json(nullptr)},
           {"score", s.score},
           {"decision", to_string(s.decision)},
           {"verifier_score", s.verifier_score},
           {"kle", s.kle ? Json(*s.kle) : Json(nullptr)}};
    return j;
}

inline std::string trace_jsonl(const pipeline::GenerationTrace& t, const Vocab& vocab) {
    std::string out;
    for (const auto& s : t.steps) out += to_json(s, vocab).dump() + "\n";
    return out;
}

inline Json summary_json(const pipeline::GenerationTrace& t, const Vocab& vocab) {
    const auto s = pipeline::summarize(t);
    Json spans = Json::array();
    for (const auto& sp : t.spans)
        spans.push_back(Json{{"segment", sp.segment},
                             {"span", sp.span_index},
                             {"attempt", sp.attempt},
                             {"text", vocab.decode(sp.tokens)},
                             {"verifier_score", sp.verifier_score},
                             {"kle", sp.kle ? Json(*sp.kle) : Json(nullptr)},
                             {"decision", to_string(sp.decision)}});
    Json j{{"status", t.status()},
           {"prompt", vocab.decode(t.prompt)},
           {"output", vocab.decode(t.output)},
           {"tokens_emitted", s.tokens_emitted},
           {"steps", s.steps},
           {"regenerations", s.regenerations},
           {"abstentions", s.abstentions},
           {"marked_steps", s.marked_steps},
           {"mean_sigma2_osc", s.mean_sigma2_osc},
           {"spans", spans}};
    if (t.abstained)
        j["abstention"] = Json{{"reason", t.abstain_reason},
                               {"partial_text", vocab.decode(t.output)},
                               {"mean_sigma2_osc", s.mean_sigma2_osc}};
    if (t.critique)
        j["critique"] = Json{{"critic", t.critique->critic},
                             {"score", t.critique->score},
                             {"threshold", t.critique->threshold},
                             {"revised", t.critique->revised}};
    return j;
}

inline std::set<TokenId> token_set(const Json& j, const Vocab& vocab, const std::string& what) {
    std::set<TokenId> out;
    for (const auto& s : get<std::vector<std::string>>(Json{{"v", j}}, "v", what)) out.insert(vocab.id(s));
    return out;
}

// Pipeline config document. Token-valued fields are strings over `vocab`.
inline pipeline::PipelineConfig pipeline_config_from_json(const Json& j, const Vocab& vocab, const std::string& what) {
    check_keys(j, {"seed", "prompt", "max_len", "stop_tokens", "ensemble_size", "gamma", "alpha", "beta", "kappa",
                   "tan_sq_cap", "osc_form", "tau_u", "phase_pair", "kle_candidates", "kle_kernel", "kle_width",
                   "tau_s", "lambda", "eta", "prob_floor", "strategy", "temperature", "rrf_k", "top_r", "doc_window",
                   "recent_window", "verifier", "ngram", "verify_threshold", "max_regenerations", "critic",
                   "critic_threshold", "full_model", "base_model", "documents"},
               what);
    pipeline::PipelineConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed, what);
    c.prompt = vocab.encode(get<std::string>(j, "prompt", what));
    c.max_len = get_or<std::size_t>(j, "max_len", c.max_len, what);
    c.stop_tokens = j.contains("stop_tokens") ? token_set(j.at("stop_tokens"), vocab, what)
                                              : std::set<TokenId>{vocab.id(".")};
    c.ensemble_size = get_or<std::size_t>(j, "ensemble_size", c.ensemble_size, what);
    c.phase_mod.gamma = get_or<double>(j, "gamma", c.phase_mod.gamma, what);
    c.phase_mod.alpha = get_or<double>(j, "alpha", c.phase_mod.alpha, what);
    c.phase_mod.beta = get_or<double>(j, "beta", c.phase_mod.beta, what);
    c.phase_mod.kappa = get_or<double>(j, "kappa", c.phase_mod.kappa, what);
    c.phase_mod.tan_sq_cap = get_or<double>(j, "tan_sq_cap", c.phase_mod.tan_sq_cap, what);
    const auto form = get_or<std::string>(j, "osc_form", "main", what);
    if (form != "main" && form != "general") throw ConfigError(what + ": osc_form must be 'main' or 'general'");
    c.osc_form = form == "main" ? pipeline::OscForm::main : pipeline::OscForm::general;
    c.tau_u = get_or<double>(j, "tau_u", c.tau_u, what);
    c.schedule.pair_index = get_or<std::size_t>(j, "phase_pair", 0, what);
    c.kle_candidates = get_or<std::size_t>(j, "kle_candidates", c.kle_candidates, what);
    const auto kernel = get_or<std::string>(j, "kle_kernel", "rbf", what);
    if (kernel != "rbf" && kernel != "cosine") throw ConfigError(what + ": kle_kernel must be 'rbf' or 'cosine'");
    c.kle_kernel.kind = kernel == "rbf" ? uncertainty::KernelKind::rbf : uncertainty::KernelKind::cosine;
    c.kle_kernel.width = get_or<double>(j, "kle_width", c.kle_kernel.width, what);
    c.tau_s = get_or<double>(j, "tau_s", c.tau_s, what);
    c.contrastive.lambda = get_or<double>(j, "lambda", c.contrastive.lambda, what);
    c.contrastive.eta = get_or<double>(j, "eta", c.contrastive.eta, what);
    c.contrastive.prob_floor = get_or<double>(j, "prob_floor", c.contrastive.prob_floor, what);
    c.strategy = decoding::parse_strategy(get_or<std::string>(j, "strategy", "greedy", what));
    c.temperature = get_or<double>(j, "temperature", c.temperature, what);
    c.grounding.k = get_or<double>(j, "rrf_k", c.grounding.k, what);
    c.grounding.top_r = get_or<std::size_t>(j, "top_r", c.grounding.top_r, what);
    c.grounding.doc_window = get_or<std::size_t>(j, "doc_window", c.grounding.doc_window, what);
    c.grounding.recent_window = get_or<std::size_t>(j, "recent_window", c.grounding.recent_window, what);
    c.verifier = pipeline::parse_verifier_kind(get_or<std::string>(j, "verifier", "ngram", what));
    c.ngram = get_or<std::size_t>(j, "ngram", c.ngram, what);
    c.verify_threshold = get_or<double>(j, "verify_threshold", c.verify_threshold, what);
    c.max_regenerations = get_or<std::size_t>(j, "max_regenerations", c.max_regenerations, what);
    if (j.contains("critic") && !j.at("critic").is_null())
        c.critic = pipeline::parse_verifier_kind(get<std::string>(j, "critic", what));
    c.critic_threshold = get_or<double>(j, "critic_threshold", c.critic_threshold, what);
    return c;
}

inline Json to_json(const pipeline::PipelineConfig& c, const Vocab& vocab) {
    Json stops = Json::array();
    for (TokenId t : c.stop_tokens) stops.push_back(vocab.token(t));
    return Json{{"seed", c.seed},
                {"prompt", vocab.decode(c.prompt)},
                {"max_len", c.max_len},
                {"stop_tokens", stops},
                {"ensemble_size", c.ensemble_size},
                {"gamma", c.phase_mod.gamma},
                {"alpha", c.phase_mod.alpha},
                {"beta", c.phase_mod.beta},
                {"kappa", c.phase_mod.kappa},
                {"tan_sq_cap", c.phase_mod.tan_sq_cap},
                {"osc_form", c.osc_form == pipeline::OscForm::main ? "main" : "general"},
                {"tau_u", c.tau_u},
                {"phase_pair", c.schedule.pair_index},
                {"kle_candidates", c.kle_candidates},
                {"kle_kernel", c.kle_kernel.kind == uncertainty::KernelKind::rbf ? "rbf" : "cosine"},
                {"kle_width", c.kle_kernel.width},
                {"tau_s", c.tau_s},
                {"lambda", c.contrastive.lambda},
                {"eta", c.contrastive.eta},
                {"prob_floor", c.contrastive.prob_floor},
                {"strategy", decoding::to_string(c.strategy)},
                {"temperature", c.temperature},
                {"rrf_k", c.grounding.k},
                {"top_r", c.grounding.top_r},
                {"doc_window", c.grounding.doc_window},
                {"recent_window", c.grounding.recent_window},
                {"verifier", to_string(c.verifier)},
                {"ngram", c.ngram},
                {"verify_threshold", c.verify_threshold},
                {"max_regenerations", c.max_regenerations},
                {"critic", c.critic ? Json(to_string(*c.critic)) : Json(nullptr)},
                {"critic_threshold", c.critic_threshold}};
}

// --------------------------------------------------------------- alignment

inline Json to_json(const alignment::GradCheckReport& r) {
    Json blocks = Json::array();
    for (const auto& b : r.blocks)
        blocks.push_back(Json{{"block", b.block}, {"entries", b.entries}, {"max_rel_error", b.max_rel_error},
                              {"max_abs_error", b.max_abs_error}});
    return Json{{"step", r.step}, {"max_rel_error", r.max_rel_error}, {"blocks", blocks}};
}

}  // namespace halluc::io
