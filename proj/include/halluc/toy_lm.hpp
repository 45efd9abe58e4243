#pragma once
// A small seeded softmax language model: mean-pooled token embeddings plus
// sinusoidal positional encodings, one tanh hidden layer with inference-time
// dropout, and a linear readout.

#include <cctype>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "halluc/error.hpp"
#include "halluc/phase.hpp"
#include "halluc/prob.hpp"
#include "halluc/rng.hpp"

namespace halluc {

class Vocab {
public:
    Vocab() = default;

    explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        detail::require_input(tokens_.size() >= 2, "vocabulary needs at least 2 tokens");
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            detail::require_input(!tokens_[i].empty(), "vocabulary contains an empty token");
            const bool fresh = index_.emplace(tokens_[i], i).second;
            detail::require_input(fresh, "duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(TokenId id) const {
        detail::require_input(id < tokens_.size(), "token id out of range");
        return tokens_[id];
    }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    bool contains(std::string_view tok) const { return index_.count(std::string(tok)) != 0; }

    TokenId id(std::string_view tok) const {
        const auto it = index_.find(std::string(tok));
        detail::require_input(it != index_.end(), "unknown token '" + std::string(tok) + "'");
        return it->second;
    }

    // Whitespace tokenization; unknown words are an input error.
    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> ids;
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) ids.push_back(id(text.substr(i, j - i)));
            i = j;
        }
        return ids;
    }

    // Like encode, but drops words that are not in the vocabulary.
    std::vector<TokenId> encode_lenient(std::string_view text) const {
        std::vector<TokenId> ids;
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) {
                const auto it = index_.find(std::string(text.substr(i, j - i)));
                if (it != index_.end()) ids.push_back(it->second);
            }
            i = j;
        }
        return ids;
    }

    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        for (TokenId id : ids) {
            if (!out.empty()) out += ' ';
            out += token(id);
        }
        return out;
    }

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

// Built-in toy vocabulary; "." is the sentence boundary.
inline Vocab default_vocab() {
    return Vocab({"the", "cat", "dog", "sat", "on", "mat", "ran", "to", "park", "a", "is", "red", "blue", "big",
                  "small", "."});
}

struct ToyLmConfig {
    std::size_t embed_dim = 8;
    std::size_t hidden_dim = 16;
    double dropout_rate = 0.1;
    std::uint64_t seed = 42;
    double pe_base = phase::kDefaultBase;
};

struct ToyLmParams {
    Vocab vocab;
    std::size_t embed_dim = 0;
    std::size_t hidden_dim = 0;
    Eigen::MatrixXd embeddings;  // V x d
    Eigen::MatrixXd hidden;      // d x h
    Eigen::MatrixXd output;      // h x V
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;
    double pe_base = phase::kDefaultBase;

    std::size_t vocab_size() const noexcept { return vocab.size(); }

    void validate() const {
        phase::check_dim(embed_dim);
        detail::require_config(hidden_dim >= 1, "hidden dimension must be >= 1");
        detail::require_config(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout rate must be in [0,1)");
        const auto V = static_cast<Eigen::Index>(vocab.size());
        const auto d = static_cast<Eigen::Index>(embed_dim);
        const auto h = static_cast<Eigen::Index>(hidden_dim);
        detail::require_config(embeddings.rows() == V && embeddings.cols() == d, "embedding matrix must be V x d");
        detail::require_config(hidden.rows() == d && hidden.cols() == h, "hidden weight matrix must be d x h");
        detail::require_config(output.rows() == h && output.cols() == V, "output weight matrix must be h x V");
        detail::require_config(embeddings.allFinite() && hidden.allFinite() && output.allFinite(),
                               "model weights must be finite");
    }
};

inline ToyLmParams zero_params(Vocab vocab, const ToyLmConfig& cfg) {
    ToyLmParams p;
    p.vocab = std::move(vocab);
    p.embed_dim = cfg.embed_dim;
    p.hidden_dim = cfg.hidden_dim;
    p.dropout_rate = cfg.dropout_rate;
    p.seed = cfg.seed;
    p.pe_base = cfg.pe_base;
    const auto V = static_cast<Eigen::Index>(p.vocab.size());
    const auto d = static_cast<Eigen::Index>(cfg.embed_dim);
    const auto h = static_cast<Eigen::Index>(cfg.hidden_dim);
    phase::check_dim(cfg.embed_dim);
    p.embeddings = Eigen::MatrixXd::Zero(V, d);
    p.hidden = Eigen::MatrixXd::Zero(d, h);
    p.output = Eigen::MatrixXd::Zero(h, V);
    p.validate();
    return p;
}

// Uniform [-0.5, 0.5] weights drawn row-major: embeddings, hidden, output.
inline ToyLmParams init_params(Vocab vocab, const ToyLmConfig& cfg) {
    ToyLmParams p = zero_params(std::move(vocab), cfg);
    Rng rng(derive_seed(cfg.seed, "params"));
    for (Eigen::MatrixXd* m : {&p.embeddings, &p.hidden, &p.output})
        for (Eigen::Index r = 0; r < m->rows(); ++r)
            for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = rng.uniform(-0.5, 0.5);
    return p;
}

struct DropoutMask {
    std::vector<std::uint8_t> bits;  // 1 = keep
    double keep_scale = 1.0;         // 1 / (1 - p)

    double kept_fraction() const {
        if (bits.empty()) return 1.0;
        std::size_t kept = 0;
        for (auto b : bits) kept += b;
        return static_cast<double>(kept) / static_cast<double>(bits.size());
    }
    bool operator==(const DropoutMask&) const = default;
};

inline std::vector<DropoutMask> sample_masks(const ToyLmParams& params, std::size_t count, Rng& rng) {
    detail::require_input(count >= 1, "mask count must be >= 1");
    const double keep = 1.0 - params.dropout_rate;
    std::vector<DropoutMask> masks(count);
    for (auto& m : masks) {
        m.keep_scale = 1.0 / keep;
        m.bits.resize(params.hidden_dim);
        for (auto& b : m.bits) b = rng.bernoulli(keep) ? 1 : 0;
    }
    return masks;
}

// Masks drawn from the model's own dropout stream; reproducible per seed.
inline std::vector<DropoutMask> sample_masks(const ToyLmParams& params, std::size_t count) {
    Rng rng(derive_seed(params.seed, "dropout"));
    return sample_masks(params, count, rng);
}

// Intermediate activations of one forward pass, kept for backpropagation.
struct ForwardCache {
    Eigen::VectorXd pooled;      // d: mean of (embedding + PE)
    Eigen::VectorXd activation;  // h: tanh(pooled . W_hidden)
    Eigen::VectorXd dropped;     // h: activation after mask and scaling
    Eigen::VectorXd logits;      // V
};

inline ForwardCache forward_cache(const ToyLmParams& params, std::span<const TokenId> context,
                                  const DropoutMask* mask = nullptr) {
    detail::require_input(!context.empty(), "context must be non-empty");
    const auto d = static_cast<Eigen::Index>(params.embed_dim);
    ForwardCache c;
    c.pooled = Eigen::VectorXd::Zero(d);
    for (std::size_t pos = 0; pos < context.size(); ++pos) {
        const TokenId tok = context[pos];
        detail::require_input(tok < params.vocab_size(),
                              "context token index " + std::to_string(tok) + " out of range");
        const auto pe = phase::positional_encoding(static_cast<double>(pos), params.embed_dim, params.pe_base);
        c.pooled += params.embeddings.row(static_cast<Eigen::Index>(tok)).transpose() +
                    Eigen::Map<const Eigen::VectorXd>(pe.data(), d);
    }
    c.pooled /= static_cast<double>(context.size());
    c.activation = (params.hidden.transpose() * c.pooled).array().tanh().matrix();
    c.dropped = c.activation;
    if (mask != nullptr) {
        detail::require_input(mask->bits.size() == params.hidden_dim, "dropout mask length must equal hidden dim");
        for (Eigen::Index j = 0; j < c.dropped.size(); ++j)
            c.dropped(j) *= mask->bits[static_cast<std::size_t>(j)] ? mask->keep_scale : 0.0;
    }
    c.logits = params.output.transpose() * c.dropped;
    return c;
}

inline std::vector<double> logits(const ToyLmParams& params, std::span<const TokenId> context,
                                  const DropoutMask* mask = nullptr) {
    const auto c = forward_cache(params, context, mask);
    return {c.logits.data(), c.logits.data() + c.logits.size()};
}

inline ProbVector forward(const ToyLmParams& params, std::span<const TokenId> context,
                          const DropoutMask* mask = nullptr) {
    const auto z = logits(params, context, mask);
    return softmax(z);
}

// Anything that maps a context to a next-token distribution.
template <class M>
concept NextTokenModel = requires(const M& m, std::span<const TokenId> ctx) {
    { m.vocab_size() } -> std::convertible_to<std::size_t>;
    { m.next_distribution(ctx) } -> std::convertible_to<ProbVector>;
};

// Deterministic (mask-free) view of a parameter set.
class ToyLm {
public:
    explicit ToyLm(ToyLmParams params) : params_(std::move(params)) { params_.validate(); }

    const ToyLmParams& params() const noexcept { return params_; }
    const Vocab& vocab() const noexcept { return params_.vocab; }
    std::size_t vocab_size() const noexcept { return params_.vocab_size(); }

    ProbVector next_distribution(std::span<const TokenId> context) const { return forward(params_, context); }
    ProbVector next_distribution(std::span<const TokenId> context, const DropoutMask& mask) const {
        return forward(params_, context, &mask);
    }

private:
    ToyLmParams params_;
};

static_assert(NextTokenModel<ToyLm>);

}  // namespace halluc
