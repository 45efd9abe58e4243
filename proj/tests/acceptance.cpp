// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "golden_cases.hpp"
#include "halluc/halluc.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

#ifndef HALLUC_SUITE_BINARIES
#error "HALLUC_SUITE_BINARIES must be defined"
#endif

using namespace halluc;
using std::numbers::pi;
using Clock = std::chrono::steady_clock;

namespace {

// Collects failed checks for one criterion.
struct Checker {
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        if (!ok && failures.size() < 5) failures.push_back(what);
        if (!ok) ++failed;
    }
    void near(double a, double b, double tol, const std::string& what) {
        std::ostringstream os;
        os.precision(17);
        os << what << " (got " << a << ", want " << b << " +- " << tol << ")";
        expect(std::abs(a - b) <= tol, os.str());
    }
    std::size_t failed = 0;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

uncertainty::KernelMatrix to_kernel(const oracle::Matrix& m) {
    uncertainty::KernelMatrix km;
    const auto n = static_cast<Eigen::Index>(m.size());
    km.k.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) km.k(i, j) = m[i][j];
    return km;
}

template <class E, class F>
bool throws(F&& f) {
    try {
        f();
    } catch (const E&) {
        return true;
    } catch (...) {
        return false;
    }
    return false;
}

// ------------------------------------------------------------------ AC1

void ac1(Checker& c) {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(1, "ac1"));
    for (int i = 0; i < 10000; ++i) {
        const std::size_t V = 1 + rng.below(64);
        const ProbVector p(oracle::random_dist(rng, V, 0.25));
        const ProbVector q(oracle::random_dist(rng, V));
        c.expect(info::kl_divergence(p, q) >= 0.0, "KL >= 0");
        c.expect(info::kl_divergence(p, p) <= 1e-12, "KL(p,p) <= 1e-12");
        const double h = info::shannon_entropy(p);
        c.expect(h >= 0.0 && h <= std::log(static_cast<double>(V)) + 1e-12, "entropy in [0, ln V]");
    }
    c.near(info::shannon_entropy(ProbVector({0.5, 0.5})), std::log(2.0), 1e-6, "H([.5,.5])");
    c.near(info::kl_divergence(ProbVector({1.0, 0.0}), ProbVector({0.5, 0.5})), std::log(2.0), 1e-6,
           "KL([1,0]||[.5,.5])");
    c.near(info::kl_divergence(ProbVector({0.75, 0.25}), ProbVector({0.25, 0.75})), 0.549306, 1e-6,
           "KL([.75,.25]||[.25,.75])");
    c.near(info::shannon_entropy(ProbVector({0.75, 0.25})), 0.562335, 1e-6, "H([.75,.25])");
    c.expect(seconds_since(t0) < 5.0, "runtime < 5 s");
}

// ------------------------------------------------------------------ AC2

void ac2(Checker& c) {
    Rng rng(derive_seed(2, "ac2"));
    for (int i = 0; i < 1000; ++i) {
        info::DriftScenario s;
        const std::size_t T = 1 + rng.below(100);
        for (std::size_t t = 0; t < T; ++t) {
            const double p = rng.uniform(0.01, 1.0);
            s.true_probs.push_back(p);
            s.perturbations.push_back(rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.0, 0.999) * p);
        }
        double prev = 1.0;
        for (const auto& st : info::simulate_drift(s)) {
            c.expect(st.ratio <= prev && st.ratio > 0.0, "ratio non-increasing and positive");
            prev = st.ratio;
        }
    }
    const auto steps = info::simulate_drift({std::vector<double>(50, 0.9), std::vector<double>(50, 0.1)});
    const double want = std::pow(8.0 / 9.0, 50);
    c.near(steps.back().ratio / want, 1.0, 1e-9, "(8/9)^50 relative");
}

// ------------------------------------------------------------------ AC3

void ac3(Checker& c) {
    Rng rng(derive_seed(3, "ac3"));
    std::vector<uncertainty::CalibrationRecord> recs;
    for (int i = 0; i < 100000; ++i) {
        const double conf = rng.uniform();
        recs.push_back({conf, rng.bernoulli(conf)});
    }
    const double e = uncertainty::ece(recs, 10).ece;
    c.expect(e < 0.01, "calibrated ECE < 0.01 (got " + std::to_string(e) + ")");
    c.expect(uncertainty::ece({{0.9, true}, {0.9, false}}, 10).ece == 0.4, "hand case ECE == 0.4");
    c.expect(uncertainty::ece(std::vector<uncertainty::CalibrationRecord>(50, {1.0, true}), 10).ece == 0.0,
             "all-correct ECE == 0");
}

// ------------------------------------------------------------------ AC4

void ac4(Checker& c) {
    for (Eigen::Index n : {1, 2, 5, 16})
        c.near(uncertainty::von_neumann_entropy({Eigen::MatrixXd::Identity(n, n), {}}), std::log(static_cast<double>(n)),
               1e-9, "identity kernel");
    for (Eigen::Index n : {2, 5, 16})
        c.near(uncertainty::von_neumann_entropy({Eigen::MatrixXd::Ones(n, n), {}}), 0.0, 1e-9, "rank-one kernel");
    Eigen::MatrixXd k(2, 2);
    k << 1, 0.5, 0.5, 1;
    c.near(uncertainty::von_neumann_entropy({k, {}}), 0.562335, 1e-6, "2x2 hand kernel");
    Rng rng(derive_seed(4, "ac4"));
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const auto m = oracle::random_psd(rng, n, 1 + rng.below(8));
        const auto km = to_kernel(m);
        const double s = uncertainty::von_neumann_entropy(km);
        c.near(s, oracle::von_neumann(m), 1e-9, "matches Jacobi oracle");
        for (double scale : {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3})
            c.near(uncertainty::von_neumann_entropy({km.k * scale, {}}), s, 1e-9, "S(cK) = S(K)");
    }
}

// ------------------------------------------------------------------ AC5

void ac5(Checker& c) {
    Rng rng(derive_seed(5, "ac5"));
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const auto km = to_kernel(oracle::random_psd(rng, n, 1 + rng.below(n + 2)));
        std::vector<double> phases(n);
        for (double& p : phases) p = rng.uniform(-2 * pi, 2 * pi);
        const auto r = uncertainty::phase_shifted_entropy(km, phases);
        c.near(r.entropy, uncertainty::von_neumann_entropy(km), 1e-9, "S(rho_phi) = S(rho)");
    }
}

// ------------------------------------------------------------------ AC6

void ac6(Checker& c) {
    for (int pos = 0; pos < 1024; ++pos)
        for (std::size_t d : {2u, 8u, 64u}) {
            const auto pe = phase::positional_encoding(pos, d);
            for (std::size_t i = 0; i < d / 2; ++i)
                c.near(pe[2 * i] * pe[2 * i] + pe[2 * i + 1] * pe[2 * i + 1], 1.0, 1e-12, "sin^2 + cos^2 = 1");
        }
    Rng rng(derive_seed(6, "ac6"));
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t N = 1 + rng.below(5);
        phase::FourierFit truth{N, std::vector<double>(N + 1), std::vector<double>(N)};
        for (double& v : truth.a) v = rng.uniform(-5, 5);
        for (double& v : truth.b) v = rng.uniform(-5, 5);
        std::vector<double> phi;
        for (int i = 0; i < 64; ++i) phi.push_back(rng.uniform(0, 2 * pi));
        const auto fit = phase::fit_fourier(phi, truth.reconstruct(phi), N);
        for (std::size_t n = 0; n <= N; ++n) c.expect(std::abs(fit.a[n] - truth.a[n]) < 1e-6, "Fourier A_n");
        for (std::size_t n = 0; n < N; ++n) c.expect(std::abs(fit.b[n] - truth.b[n]) < 1e-6, "Fourier B_n");
    }
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t V = 2 + rng.below(40);
        std::vector<double> u(V);
        for (double& x : u) x = rng.uniform(-20, 20);
        const auto cs = phase::complex_softmax({u, std::vector<double>(V, rng.uniform(-pi, pi))});
        const auto real = softmax(u);
        for (std::size_t i = 0; i < V; ++i) c.near(cs.magnitudes[i], real[i], 1e-9, "equal phases -> real softmax");
    }
    c.expect(throws<NumericalError>([] { phase::complex_softmax({{0, 0}, {0, pi}}); }), "degenerate denominator raises");
}

// ------------------------------------------------------------------ AC7

void ac7(Checker& c) {
    const uncertainty::PhaseModParams p{0.8, 0.5, 0.3, 0.2, 1e6};
    const auto periodic = [&](double a, double b, const char* what) {
        c.expect(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)), what);
    };
    for (int i = 0; i < 4096; ++i) {
        const double phi = oracle::sweep_phase(i, 4096);
        const auto g = uncertainty::phase_variance_gamma(1.0, phi, p.gamma);
        c.expect(g.multiplier >= 1.0 && g.multiplier <= 1.0 + p.gamma, "gamma multiplier in [1, 1+gamma]");
        const auto o = uncertainty::oscillatory_variance(1.0, phi, p);
        c.expect(o.multiplier >= 1.0 && o.multiplier <= 1.0 + p.alpha + p.beta * p.tan_sq_cap,
                 "main oscillatory multiplier bounds");
        const auto q = uncertainty::oscillatory_variance_general(1.0, phi, p);
        c.expect(q.multiplier >= 1.0 && q.multiplier <= 1.0 + p.alpha + p.beta + p.kappa * p.tan_sq_cap,
                 "general oscillatory multiplier bounds");
        const double m = alignment::phase_multiplier(alignment::MultiplierForm::main, phi);
        c.expect(m >= 1.0 && m <= 2.0, "loss multiplier (main) in [1, 2]");
        const double a = alignment::phase_multiplier(alignment::MultiplierForm::extended, phi);
        c.expect(a >= 23.0 / 16.0 - 1e-12 && a <= 3.0 + 1e-12, "loss multiplier (extended) in [23/16, 3]");

        const double shifted = phi + 2 * pi;
        periodic(g.multiplier, uncertainty::phase_variance_gamma(1.0, shifted, p.gamma).multiplier, "gamma periodic");
        periodic(o.multiplier, uncertainty::oscillatory_variance(1.0, shifted, p).multiplier, "main osc periodic");
        periodic(q.multiplier, uncertainty::oscillatory_variance_general(1.0, shifted, p).multiplier,
                 "general osc periodic");
        periodic(m, alignment::phase_multiplier(alignment::MultiplierForm::main, shifted), "loss main periodic");
        periodic(a, alignment::phase_multiplier(alignment::MultiplierForm::extended, shifted),
                 "loss extended periodic");
    }
    Rng rng(derive_seed(7, "ac7"));
    for (int i = 0; i < 20000; ++i) {
        const double phi = i < 4096 ? 2 * pi * i / 4096.0 : rng.uniform(-20, 20);
        const double cap = std::pow(10.0, rng.uniform(-1, 10));
        const uncertainty::PhaseModParams q{0, 0, 1, 1, cap};
        c.expect(uncertainty::oscillatory_variance(1.0, phi, q).capped == (std::abs(std::tan(phi)) > std::sqrt(cap)),
                 "main cap flag iff |tan| > sqrt(cap)");
        c.expect(uncertainty::oscillatory_variance_general(1.0, phi, q).capped ==
                     (std::abs(std::tan(2 * phi)) > std::sqrt(cap)),
                 "general cap flag iff |tan 2phi| > sqrt(cap)");
    }
}

// ------------------------------------------------------------------ AC8

void ac8(Checker& c) {
    const auto vocab = default_vocab();
    const ToyLm full(init_params(vocab, {8, 16, 0.1, derive_seed(8, "full_model")}));
    const ToyLm base(init_params(vocab, {8, 4, 0.1, derive_seed(8, "base_model")}));
    Rng rng(derive_seed(8, "ac8"));
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<TokenId> prompt(1 + rng.below(5));
        for (auto& t : prompt) t = rng.below(vocab.size());
        decoding::DecodeConfig cfg;
        cfg.max_len = 8;
        const auto trace = decoding::decode(full, base, cfg, {0.0, 0.0}, prompt);
        std::vector<TokenId> ctx = prompt, plain;
        for (std::size_t i = 0; i < cfg.max_len; ++i) {
            const TokenId t = full.next_distribution(ctx).argmax();
            plain.push_back(t);
            ctx.push_back(t);
        }
        c.expect(trace.tokens == plain, "lambda=0, eta=0 equals plain greedy");
    }

    for (int trial = 0; trial < 100; ++trial) {
        const auto f = testing_models::random_table_model(rng.next_u64(), 3);
        const auto b = testing_models::random_table_model(rng.next_u64(), 3);
        const decoding::ContrastiveParams cp{rng.uniform(0, 1.5), rng.uniform(-2, 2)};
        const std::vector<TokenId> prompt{rng.below(3)};
        const auto score = [&](const std::vector<TokenId>& ctx, TokenId t) {
            return decoding::contrastive_scores(f.next_distribution(ctx), b.next_distribution(ctx),
                                                static_cast<double>(ctx.size()), cp)[t];
        };
        // exhaustive over the 9 paths, restricted to prefixes a width-2 beam keeps
        std::vector<std::pair<double, TokenId>> first;
        for (TokenId a = 0; a < 3; ++a) first.push_back({-score(prompt, a), a});
        std::sort(first.begin(), first.end());
        double best = -INFINITY;
        std::vector<TokenId> best_path;
        for (TokenId a = 0; a < 3; ++a) {
            if (a != first[0].second && a != first[1].second) continue;
            for (TokenId t = 0; t < 3; ++t) {
                const double s = score(prompt, a) + score({prompt[0], a}, t);
                if (s > best) {
                    best = s;
                    best_path = {a, t};
                }
            }
        }
        decoding::DecodeConfig cfg;
        cfg.strategy = decoding::Strategy::beam;
        cfg.beam_width = 2;
        cfg.max_len = 2;
        c.expect(decoding::decode(f, b, cfg, cp, prompt).tokens == best_path, "beam equals path oracle");
    }

    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t V = 2 + rng.below(60);
        const ProbVector pf(oracle::random_dist(rng, V)), pb(oracle::random_dist(rng, V));
        const double phi = rng.uniform(0, 100), lambda = rng.uniform(0, 2);
        c.expect(decoding::argmax(decoding::contrastive_scores(pf, pb, phi, {lambda, rng.uniform(-10, 10)})) ==
                     decoding::argmax(decoding::contrastive_scores(pf, pb, phi, {lambda, 0.0})),
                 "step argmax invariant under eta sin(phi)");
    }
}

// ------------------------------------------------------------------ AC9

void ac9(Checker& c) {
    c.expect(grounding::rrf_fuse({{"q", {"d"}}}, 60.0)[0].score == 1.0 / 61.0, "1/61");
    c.expect(std::abs(grounding::rrf_fuse({{"q1", {"d", "x"}}, {"q2", {"x", "d"}}}, 1.0)[0].score - 5.0 / 6.0) < 1e-15, "5/6");
    Rng rng(derive_seed(9, "ac9"));
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<grounding::Ranking> rs;
        const std::size_t nq = 1 + rng.below(8), nd = 1 + rng.below(15);
        for (std::size_t q = 0; q < nq; ++q) {
            std::vector<std::string> docs;
            for (std::size_t d = 0; d < nd; ++d)
                if (rng.bernoulli(0.6)) docs.push_back("doc" + std::to_string(d));
            for (std::size_t i = docs.size(); i > 1; --i) std::swap(docs[i - 1], docs[rng.below(i)]);
            rs.push_back({"q" + std::to_string(q), docs});
        }
        const double k = rng.uniform(0.1, 120);
        const auto fused = grounding::rrf_fuse(rs, k);
        auto perm = rs;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        c.expect(grounding::rrf_fuse(perm, k) == fused, "fused order invariant under query permutation");
    }
}

// ------------------------------------------------------------------ AC10

void ac10(Checker& c) {
    for (std::uint64_t seed : {1u, 2u, 3u})
        for (auto form : {alignment::MultiplierForm::main, alignment::MultiplierForm::extended}) {
            auto s = alignment::make_gradcheck_setup(seed);
            const alignment::LossConfig cfg{{0.5, form}, {}, nullptr};
            const auto rep = alignment::gradient_check(s.model, s.batch, cfg, *s.verifier);
            for (const auto& b : rep.blocks)
                c.expect(b.max_rel_error < 1e-4, "gradient block " + b.block + " seed " + std::to_string(seed) +
                                                     " rel error " + std::to_string(b.max_rel_error));
        }
    Rng rng(derive_seed(10, "ac10"));
    const alignment::SigmoidVerifier v({0.3, -1.0, 2.0, 0.5}, 0.2);
    for (int trial = 0; trial < 1000; ++trial) {
        const ProbVector y(oracle::random_dist(rng, 4));
        const auto l = alignment::factual_loss(y, rng.below(4), rng.uniform(0, 10), {0.0, alignment::MultiplierForm::extended}, v);
        c.expect(l.loss == l.ce_part, "lambda_fact = 0 gives CE exactly");
    }
    using alignment::MultiplierForm;
    c.near(alignment::phase_multiplier(MultiplierForm::main, 0.0), 1.0, 1e-12, "main at 0");
    c.near(alignment::phase_multiplier(MultiplierForm::extended, 0.0), 2.0, 1e-12, "extended at 0");
    c.near(alignment::phase_multiplier(MultiplierForm::extended, pi / 4), 1.5, 1e-12, "extended at pi/4");
}

// ------------------------------------------------------------------ AC11

void ac11(Checker& c) {
    const auto vocab = default_vocab();
    auto demo = fixtures::load("pipeline_demo.json");
    const auto t1 = pipeline::run_pipeline(demo.full, demo.base, demo.store, demo.config);
    const auto t2 = pipeline::run_pipeline(demo.full, demo.base, demo.store, demo.config);
    c.expect(io::trace_jsonl(t1, vocab) == io::trace_jsonl(t2, vocab), "library replay byte-identical");
    const auto cli = "pipeline --config pipeline_demo.json --documents documents.jsonl";
    const auto r1 = golden::run_cli(cli), r2 = golden::run_cli(cli);
    c.expect(r1.exit_code == 0 && r1.out == r2.out && !r1.out.empty(), "CLI replay byte-identical");

    auto sampled = demo;
    sampled.config.strategy = decoding::Strategy::sample;
    c.expect(io::trace_jsonl(pipeline::run_pipeline(sampled.full, sampled.base, sampled.store, sampled.config), vocab) ==
                 io::trace_jsonl(pipeline::run_pipeline(sampled.full, sampled.base, sampled.store, sampled.config), vocab),
             "sampling replay byte-identical");

    auto fail = fixtures::load("pipeline_always_fail.json");
    for (std::size_t nr : {0u, 1u, 2u, 3u}) {
        fail.config.max_regenerations = nr;
        const auto t = pipeline::run_pipeline(fail.full, fail.base, fail.store, fail.config);
        const auto s = pipeline::summarize(t);
        c.expect(t.abstained && s.regenerations == nr && s.abstentions == 1 && t.spans.size() == nr + 1,
                 "always-fail abstains after exactly N_r = " + std::to_string(nr) + " regenerations");
    }

    std::size_t prev = t1.steps.size();
    for (int i = 0; i <= 2000; ++i) {
        const double tau = i * 1e-5;
        const std::size_t n = pipeline::count_marked(t1, tau);
        c.expect(n <= prev, "marked steps non-increasing in tau_u");
        prev = n;
    }
    auto zero = demo;
    zero.config.tau_u = 0.0;
    bool all = true;
    for (const auto& st : pipeline::run_pipeline(zero.full, zero.base, zero.store, zero.config).steps) all &= st.marked;
    c.expect(all, "tau_u = 0 marks every step");
}

// ------------------------------------------------------------------ AC12

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

void ac12(Checker& c, Clock::time_point suite_start) {
    for (const auto& gc : golden::cases()) {
        const auto o = golden::check(gc);
        c.expect(o.ok, "golden " + o.detail);
    }
    // the rest of the suite, timed together with this binary's own checks
    for (const auto& bin : split(HALLUC_SUITE_BINARIES, '|')) {
        const int rc = std::system(("'" + bin + "' --gtest_brief=1 > /dev/null 2>&1").c_str());
        c.expect(rc == 0, bin + " passes");
    }
    const double elapsed = seconds_since(suite_start);
    c.expect(elapsed < 120.0, "full suite under 2 minutes (took " + std::to_string(elapsed) + " s)");
}

}  // namespace

int main() {
    const auto start = Clock::now();
    struct Criterion {
        const char* id;
        const char* title;
        std::function<void(Checker&)> run;
    };
    const std::vector<Criterion> criteria{
        {"AC1", "information theory: Gibbs, entropy bounds, hand values", ac1},
        {"AC2", "drift simulator: monotone ratio, closed-form power", ac2},
        {"AC3", "ECE: calibrated predictor, hand case, all-correct", ac3},
        {"AC4", "von Neumann entropy: identity, rank one, hand case, scale invariance", ac4},
        {"AC5", "phase-shifted density matrix entropy equals unshifted", ac5},
        {"AC6", "positional encodings, Fourier recovery, complex softmax", ac6},
        {"AC7", "phase multipliers: bounds, periodicity, cap flags", ac7},
        {"AC8", "contrastive decoding: plain greedy, beam oracle, phase-shift invariance", ac8},
        {"AC9", "reciprocal rank fusion: hand cases, query-order invariance", ac9},
        {"AC10", "alignment: gradient check, CE reduction, multiplier values", ac10},
        {"AC11", "pipeline: replay, always-fail abstention, monotone gating", ac11},
        {"AC12", "CLI golden files and suite runtime", [&](Checker& c) { ac12(c, start); }},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        Checker c;
        const auto t0 = Clock::now();
        try {
            cr.run(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("unexpected exception: ") + e.what());
        }
        const bool ok = c.failed == 0;
        failed += ok ? 0 : 1;
        std::printf("[%s] %s %s (%.2f s)\n", ok ? "PASS" : "FAIL", cr.id, cr.title, seconds_since(t0));
        for (const auto& f : c.failures) std::printf("       %s\n", f.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
