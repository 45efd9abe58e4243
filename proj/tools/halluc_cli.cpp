// halluc: command-line front end for the drift, uncertainty, decoding,
// grounding, alignment and pipeline modules.
//
// Exit codes: 0 success, 1 input/config error, 2 numerical/contract violation.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "halluc/halluc.hpp"
#include "halluc/io.hpp"

namespace {

using halluc::io::Json;
namespace io = halluc::io;

// Inline JSON, or "@path" to read it from a file.
Json json_arg(const std::string& value, const std::string& what) {
    if (!value.empty() && value[0] == '@') return io::read_json(value.substr(1));
    return io::parse_json(value, what);
}

class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty()) {
            file_.open(path, std::ios::binary);
            if (!file_) throw halluc::InputError("cannot write '" + path + "'");
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

void log_config(const std::string& command, const Json& config) {
    std::cerr << "halluc " << command << " config: " << config.dump() << "\n";
}

void emit_report(const std::string& out_path, const std::string& command, const Json& config, Json result) {
    log_config(command, config);
    Json report{{"command", command}, {"config", config}, {"result", std::move(result)}};
    Output out(out_path);
    out.stream() << report.dump(2) << "\n";
}

// ---------------------------------------------------------------- models

struct ModelPair {
    halluc::ToyLm full;
    halluc::ToyLm base;
};

halluc::ToyLmParams load_model(const std::string& path, const halluc::ToyLmConfig& fallback) {
    if (path.empty()) return halluc::init_params(halluc::default_vocab(), fallback);
    const Json j = io::read_json(path);
    if (j.contains("embeddings")) return io::params_from_json(j, path);
    std::vector<std::string> tokens;
    const auto cfg = io::model_config_from_json(j, path, &tokens);
    return halluc::init_params(tokens.empty() ? halluc::default_vocab() : halluc::Vocab(tokens), cfg);
}

halluc::ToyLmConfig default_full_config(std::uint64_t seed) {
    return {8, 16, 0.1, halluc::derive_seed(seed, "full_model"), halluc::phase::kDefaultBase};
}

halluc::ToyLmConfig default_base_config(std::uint64_t seed) {
    return {8, 4, 0.1, halluc::derive_seed(seed, "base_model"), halluc::phase::kDefaultBase};
}

ModelPair load_models(std::uint64_t seed, const std::string& full_path, const std::string& base_path) {
    ModelPair m{halluc::ToyLm(load_model(full_path, default_full_config(seed))),
                halluc::ToyLm(load_model(base_path, default_base_config(seed)))};
    if (!(m.full.vocab() == m.base.vocab()))
        throw halluc::ConfigError("full and baseline models have different vocabularies");
    return m;
}

Json model_summary(const halluc::ToyLm& m) {
    const auto& p = m.params();
    return Json{{"vocab_size", p.vocab_size()}, {"embed_dim", p.embed_dim}, {"hidden_dim", p.hidden_dim},
                {"dropout_rate", p.dropout_rate}, {"seed", p.seed}};
}

std::set<halluc::TokenId> stop_set(const halluc::Vocab& vocab, const std::vector<std::string>& stops) {
    std::set<halluc::TokenId> out;
    for (const auto& s : stops) out.insert(vocab.id(s));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hallucination-risk diagnostics and mitigation on a toy language model"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    std::string out_path;
    app.add_option("--seed", seed, "Root seed")->default_val(0);
    app.add_option("-o,--out", out_path, "Output file (default stdout)");

    // drift
    auto* drift = app.add_subcommand("drift", "Autoregressive drift report (CSV)");
    std::string scenario_path;
    std::optional<double> drift_p, drift_eps;
    std::optional<std::size_t> drift_horizon;
    drift->add_option("--scenario", scenario_path, "Scenario JSON file");
    drift->add_option("--p", drift_p, "Constant true-token probability");
    drift->add_option("--eps", drift_eps, "Constant perturbation");
    drift->add_option("--horizon", drift_horizon, "Number of steps");

    // entropy
    auto* entropy = app.add_subcommand("entropy", "Shannon entropy, surprisal, conditional entropy");
    std::string dist_arg, joint_arg;
    std::optional<std::size_t> surprisal_index;
    bool bits = false;
    entropy->add_option("--dist", dist_arg, "Distribution as JSON array (or @file)");
    entropy->add_option("--index", surprisal_index, "Token index for surprisal");
    entropy->add_option("--joint", joint_arg, "Joint table P(x,y) as 2-D JSON array (or @file)");
    entropy->add_flag("--bits", bits, "Also report values in bits");

    // kl
    auto* kl = app.add_subcommand("kl", "KL divergence D(p || q)");
    std::string p_arg, q_arg;
    kl->add_option("--p", p_arg, "Reference distribution (JSON or @file)")->required();
    kl->add_option("--q", q_arg, "Model distribution (JSON or @file)")->required();
    kl->add_flag("--bits", bits, "Also report bits");

    // ece
    auto* ece = app.add_subcommand("ece", "Expected calibration error");
    std::string records_path;
    std::size_t bins = 10;
    ece->add_option("--records", records_path, "CSV of confidence,correct")->required();
    ece->add_option("--bins", bins, "Number of equal-width bins")->default_val(10);

    // kle
    auto* kle = app.add_subcommand("kle", "Kernel language entropy over candidates");
    std::string candidates_path, kernel_name = "rbf", phases_arg;
    double kernel_width = 1.0;
    kle->add_option("--candidates", candidates_path, "JSON-lines {id, text, embedding}")->required();
    kle->add_option("--kernel", kernel_name, "rbf | cosine | identity")->default_val("rbf");
    kle->add_option("--width", kernel_width, "RBF width")->default_val(1.0);
    kle->add_option("--phases", phases_arg, "Per-candidate phases for the phase-shifted entropy (JSON)");

    // uncertainty
    auto* unc = app.add_subcommand("uncertainty", "Ensemble and phase-modulated uncertainty report");
    std::string context_text = "the cat", predictions_arg, unc_model;
    std::size_t passes = 16, unc_pair = 0;
    std::optional<std::size_t> unc_position;
    halluc::uncertainty::PhaseModParams pm;
    unc->add_option("--context", context_text, "Context text for the toy model")->default_val("the cat");
    unc->add_option("--model", unc_model, "Model params or config JSON");
    unc->add_option("--passes", passes, "MC dropout passes")->default_val(16);
    unc->add_option("--predictions", predictions_arg, "Scalar per-pass predictions (JSON) instead of a model");
    unc->add_option("--position", unc_position, "Position for the phase (default: context length)");
    unc->add_option("--phase-pair", unc_pair, "Frequency pair for the phase")->default_val(0);
    unc->add_option("--gamma", pm.gamma)->default_val(0.0);
    unc->add_option("--alpha", pm.alpha)->default_val(0.0);
    unc->add_option("--beta", pm.beta)->default_val(0.0);
    unc->add_option("--kappa", pm.kappa)->default_val(0.0);
    unc->add_option("--cap", pm.tan_sq_cap, "tan^2 cap")->default_val(1e6);
    unc->add_option("--candidates", candidates_path, "Optional candidates JSON-lines for KLE");
    unc->add_option("--kernel", kernel_name, "rbf | cosine | identity")->default_val("rbf");
    unc->add_option("--width", kernel_width)->default_val(1.0);
    unc->add_option("--records", records_path, "Optional calibration CSV for ECE");
    unc->add_option("--bins", bins)->default_val(10);

    // phase
    auto* phase_cmd = app.add_subcommand("phase", "Positional encoding and scalar phase");
    double pos = 0.0, pe_base = halluc::phase::kDefaultBase;
    std::size_t dim = 8, pair = 0;
    phase_cmd->add_option("--pos", pos)->required();
    phase_cmd->add_option("--dim", dim)->default_val(8);
    phase_cmd->add_option("--base", pe_base)->default_val(halluc::phase::kDefaultBase);
    phase_cmd->add_option("--pair", pair)->default_val(0);

    // fourier
    auto* fourier = app.add_subcommand("fourier", "Least-squares Fourier fit of values over phases");
    std::string samples_arg;
    std::size_t order = 1;
    fourier->add_option("--samples", samples_arg, "JSON {phases:[...], values:[...]} (or @file)")->required();
    fourier->add_option("--order", order)->default_val(1);

    // csoftmax
    auto* csm = app.add_subcommand("csoftmax", "Complex-valued softmax");
    std::string u_arg, v_arg;
    csm->add_option("--u", u_arg, "Real parts (JSON)")->required();
    csm->add_option("--v", v_arg, "Imaginary parts, radians (JSON)")->required();

    // decode
    auto* decode = app.add_subcommand("decode", "Contrastive decoding trace (JSON-lines)");
    std::string prompt_text = "the cat", strategy_name = "greedy", full_model_path, base_model_path;
    halluc::decoding::ContrastiveParams cp;
    std::size_t beam_width = 1, max_len = 8, decode_pair = 0;
    double temperature = 1.0;
    std::vector<std::string> stops{"."};
    bool seed_given = false;
    decode->add_option("--prompt", prompt_text)->default_val("the cat");
    decode->add_option("--strategy", strategy_name, "greedy | sample | beam")->default_val("greedy");
    decode->add_option("--lambda", cp.lambda)->default_val(0.0);
    decode->add_option("--eta", cp.eta)->default_val(0.0);
    decode->add_option("--floor", cp.prob_floor)->default_val(1e-12);
    decode->add_option("--beam-width", beam_width)->default_val(1);
    decode->add_option("--temperature", temperature)->default_val(1.0);
    decode->add_option("--max-len", max_len)->default_val(8);
    decode->add_option("--phase-pair", decode_pair)->default_val(0);
    decode->add_option("--stop", stops, "Stop tokens")->default_val(std::vector<std::string>{"."});
    decode->add_option("--model", full_model_path, "Full model params or config JSON");
    decode->add_option("--base-model", base_model_path, "Baseline model params or config JSON");

    // fuse
    auto* fuse = app.add_subcommand("fuse", "Reciprocal rank fusion");
    std::string rankings_path;
    double rrf_k = halluc::grounding::kDefaultRrfK;
    std::size_t top_r = 3;
    fuse->add_option("--rankings", rankings_path, "CSV query_id,doc_id,rank")->required();
    fuse->add_option("--k", rrf_k)->default_val(halluc::grounding::kDefaultRrfK);
    fuse->add_option("--top-r", top_r)->default_val(3);

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "Verify-or-abstain generation (trace as JSON-lines)");
    std::string config_path, documents_path, summary_path;
    pipe->add_option("--config", config_path, "Pipeline config JSON (env HALLUC_CONFIG)");
    pipe->add_option("--documents", documents_path, "Evidence store JSON-lines {id, text}");
    pipe->add_option("--summary", summary_path, "Write the run summary JSON here");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of factual-loss gradients");
    std::vector<std::uint64_t> grad_seeds{1, 2, 3};
    double lambda_fact = 0.5, fd_step = 1e-5;
    std::string form_name = "main", verifier_name = "sigmoid";
    grad->add_option("--seeds", grad_seeds)->delimiter(',')->default_val(std::vector<std::uint64_t>{1, 2, 3});
    grad->add_option("--lambda-fact", lambda_fact)->default_val(0.5);
    grad->add_option("--form", form_name, "main | extended")->default_val("main");
    grad->add_option("--verifier", verifier_name, "sigmoid | constant | gate")->default_val("sigmoid");
    grad->add_option("--step", fd_step)->default_val(1e-5);

    // loss-sweep
    auto* sweep = app.add_subcommand("loss-sweep", "Factual loss as a function of phase (CSV)");
    std::size_t points = 64, target = 0;
    double verifier_score = 0.5;
    std::string sweep_dist = "[0.5,0.25,0.25]";
    sweep->add_option("--points", points)->default_val(64);
    sweep->add_option("--dist", sweep_dist, "Predicted distribution (JSON)")->default_val("[0.5,0.25,0.25]");
    sweep->add_option("--target", target)->default_val(0);
    sweep->add_option("--lambda-fact", lambda_fact)->default_val(0.5);
    sweep->add_option("--verifier-score", verifier_score, "Constant verifier score")->default_val(0.5);

    // init-model
    auto* init = app.add_subcommand("init-model", "Materialize seeded toy model parameters as JSON");
    std::string model_config_path;
    init->add_option("--config", model_config_path, "Model config JSON {vocab, embed_dim, hidden_dim, ...}");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    seed_given = app.get_option("--seed")->count() > 0;

    try {
        if (drift->parsed()) {
            halluc::info::DriftScenario s;
            if (!scenario_path.empty()) {
                s = io::to_drift_scenario(io::read_json(scenario_path), scenario_path);
            } else {
                if (!drift_p || !drift_eps || !drift_horizon)
                    throw halluc::InputError("drift needs --scenario or all of --p, --eps, --horizon");
                s = io::to_drift_scenario(Json{{"p", *drift_p}, {"eps", *drift_eps}, {"horizon", *drift_horizon}},
                                          "flags");
            }
            log_config("drift", Json{{"true_probs", s.true_probs}, {"perturbations", s.perturbations}});
            Output out(out_path);
            out.stream() << io::drift_csv(halluc::info::simulate_drift(s));
        } else if (entropy->parsed()) {
            Json cfg = Json::object(), res = Json::object();
            if (dist_arg.empty() && joint_arg.empty()) throw halluc::InputError("entropy needs --dist or --joint");
            if (!dist_arg.empty()) {
                const auto p = io::to_prob(json_arg(dist_arg, "--dist"), "--dist");
                cfg["dist"] = p.vec();
                const double h = halluc::info::shannon_entropy(p);
                res["entropy"] = h;
                if (bits) res["entropy_bits"] = halluc::info::nats_to_bits(h);
                res["max_entropy"] = std::log(static_cast<double>(p.size()));
                if (surprisal_index) {
                    cfg["index"] = *surprisal_index;
                    const double s = halluc::info::surprisal(p, *surprisal_index);
                    res["surprisal"] = s;
                    if (bits) res["surprisal_bits"] = halluc::info::nats_to_bits(s);
                }
            }
            if (!joint_arg.empty()) {
                const auto joint = io::to_joint(json_arg(joint_arg, "--joint"), "--joint");
                cfg["joint"] = joint;
                res["joint_entropy"] = halluc::info::joint_entropy(joint);
                res["conditional_entropy"] = halluc::info::conditional_entropy(joint);
                res["marginal_entropy_y"] = halluc::info::marginal_entropy_y(joint);
            }
            res["unit"] = "nats";
            emit_report(out_path, "entropy", cfg, res);
        } else if (kl->parsed()) {
            const auto p = io::to_prob(json_arg(p_arg, "--p"), "--p");
            const auto q = io::to_prob(json_arg(q_arg, "--q"), "--q");
            const double d = halluc::info::kl_divergence(p, q);
            Json res{{"kl", d}, {"unit", "nats"}};
            if (bits) res["kl_bits"] = halluc::info::nats_to_bits(d);
            emit_report(out_path, "kl", Json{{"p", p.vec()}, {"q", q.vec()}}, res);
        } else if (ece->parsed()) {
            const auto recs = io::read_calibration_csv(records_path);
            emit_report(out_path, "ece", Json{{"bins", bins}, {"records", recs.size()}},
                        io::to_json(halluc::uncertainty::ece(recs, bins)));
        } else if (kle->parsed()) {
            const auto cands = io::read_candidates(candidates_path);
            std::vector<std::vector<double>> embs;
            std::vector<std::string> labels;
            for (const auto& c : cands) {
                embs.push_back(c.embedding);
                labels.push_back(c.id);
            }
            halluc::uncertainty::KernelMatrix km;
            if (kernel_name == "identity") {
                km.k = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(embs.size()),
                                                 static_cast<Eigen::Index>(embs.size()));
                km.labels = labels;
            } else if (kernel_name == "rbf" || kernel_name == "cosine") {
                halluc::uncertainty::KernelConfig kc{kernel_name == "rbf" ? halluc::uncertainty::KernelKind::rbf
                                                                          : halluc::uncertainty::KernelKind::cosine,
                                                     kernel_width};
                km = halluc::uncertainty::build_kernel(embs, kc, labels);
            } else {
                throw halluc::ConfigError("unknown kernel '" + kernel_name + "'");
            }
            Json res{{"labels", labels},
                     {"entropy", halluc::uncertainty::von_neumann_entropy(km)},
                     {"max_entropy", std::log(static_cast<double>(embs.size()))},
                     {"kernel", io::to_json(km)}};
            Json cfg{{"kernel", kernel_name}, {"width", kernel_width}, {"candidates", embs.size()}};
            if (!phases_arg.empty()) {
                const auto phases = io::to_doubles(json_arg(phases_arg, "--phases"), "--phases");
                cfg["phases"] = phases;
                const auto ps = halluc::uncertainty::phase_shifted_entropy(km, phases);
                res["phase_shifted"] = Json{{"entropy", ps.entropy},
                                            {"z_real", ps.z.real()},
                                            {"z_imag", ps.z.imag()},
                                            {"invariance_gap", ps.invariance_gap}};
            }
            emit_report(out_path, "kle", cfg, res);
        } else if (unc->parsed()) {
            Json cfg{{"gamma", pm.gamma}, {"alpha", pm.alpha}, {"beta", pm.beta}, {"kappa", pm.kappa},
                     {"tan_sq_cap", pm.tan_sq_cap}, {"seed", seed}};
            Json res = Json::object();
            halluc::uncertainty::EpistemicEstimate epi;
            std::size_t position = 0;
            if (!predictions_arg.empty()) {
                const auto ys = io::to_doubles(json_arg(predictions_arg, "--predictions"), "--predictions");
                cfg["predictions"] = ys;
                epi = halluc::uncertainty::epistemic_variance(ys);
                position = unc_position.value_or(0);
            } else {
                const halluc::ToyLm model(load_model(unc_model, default_full_config(seed)));
                const auto ctx = model.vocab().encode(context_text);
                cfg["context"] = context_text;
                cfg["passes"] = passes;
                cfg["model"] = model_summary(model);
                halluc::Rng rng(halluc::derive_seed(seed, "uncertainty.ensemble"));
                halluc::uncertainty::EnsembleRun run;
                for (const auto& m : halluc::sample_masks(model.params(), passes, rng))
                    run.passes.push_back(model.next_distribution(ctx, m));
                epi = halluc::uncertainty::epistemic_variance(run);
                const auto mean = halluc::uncertainty::predictive_mean(run);
                res["predictive_mean"] = mean.vec();
                res["selected_token"] = model.vocab().token(epi.selected_index);
                res["per_token_variance"] = epi.per_token_variance;
                position = unc_position.value_or(ctx.size());
            }
            halluc::phase::PhaseSchedule sched{8, halluc::phase::kDefaultBase, unc_pair};
            const double phi = halluc::phase::phase_of(static_cast<double>(position), sched);
            cfg["position"] = position;
            cfg["phase_pair"] = unc_pair;
            const auto sphi = halluc::uncertainty::phase_variance_gamma(epi.variance, phi, pm.gamma);
            const auto osc = halluc::uncertainty::oscillatory_variance(epi.variance, phi, pm);
            const auto gen = halluc::uncertainty::oscillatory_variance_general(epi.variance, phi, pm);
            res["phi"] = phi;
            res["mean"] = epi.mean;
            res["sigma2_epi"] = epi.variance;
            res["sigma2_phi"] = sphi.value;
            res["sigma2_osc"] = Json{{"value", osc.value}, {"multiplier", osc.multiplier}, {"capped", osc.capped}};
            res["sigma2_osc_general"] =
                Json{{"value", gen.value}, {"multiplier", gen.multiplier}, {"capped", gen.capped}};
            if (!candidates_path.empty()) {
                const auto cands = io::read_candidates(candidates_path);
                std::vector<std::vector<double>> embs;
                for (const auto& c : cands) embs.push_back(c.embedding);
                halluc::uncertainty::KernelMatrix km;
                if (kernel_name == "identity") {
                    km.k = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(embs.size()),
                                                     static_cast<Eigen::Index>(embs.size()));
                } else {
                    if (kernel_name != "rbf" && kernel_name != "cosine")
                        throw halluc::ConfigError("unknown kernel '" + kernel_name + "'");
                    km = halluc::uncertainty::build_kernel(
                        embs, {kernel_name == "rbf" ? halluc::uncertainty::KernelKind::rbf
                                                    : halluc::uncertainty::KernelKind::cosine,
                               kernel_width});
                }
                cfg["kernel"] = kernel_name;
                cfg["width"] = kernel_width;
                res["kle"] = halluc::uncertainty::von_neumann_entropy(km);
            }
            if (!records_path.empty()) {
                cfg["bins"] = bins;
                res["ece"] = halluc::uncertainty::ece(io::read_calibration_csv(records_path), bins).ece;
            }
            emit_report(out_path, "uncertainty", cfg, res);
        } else if (phase_cmd->parsed()) {
            halluc::phase::PhaseSchedule sched{dim, pe_base, pair};
            sched.validate();
            emit_report(out_path, "phase", Json{{"pos", pos}, {"dim", dim}, {"base", pe_base}, {"pair", pair}},
                        Json{{"encoding", halluc::phase::positional_encoding(pos, dim, pe_base)},
                             {"phi", halluc::phase::phase_of(pos, sched)}});
        } else if (fourier->parsed()) {
            const Json samples = json_arg(samples_arg, "--samples");
            io::check_keys(samples, {"phases", "values"}, "--samples");
            const auto phases = io::to_doubles(io::get<Json>(samples, "phases", "--samples"), "--samples");
            const auto values = io::to_doubles(io::get<Json>(samples, "values", "--samples"), "--samples");
            const auto fit = halluc::phase::fit_fourier(phases, values, order);
            emit_report(out_path, "fourier", Json{{"order", order}, {"samples", phases.size()}}, io::to_json(fit));
        } else if (csm->parsed()) {
            halluc::phase::ComplexLogits cl{io::to_doubles(json_arg(u_arg, "--u"), "--u"),
                                            io::to_doubles(json_arg(v_arg, "--v"), "--v")};
            const auto r = halluc::phase::complex_softmax(cl);
            emit_report(out_path, "csoftmax", Json{{"u", cl.u}, {"v", cl.v}},
                        Json{{"magnitudes", r.magnitudes},
                             {"args", r.args},
                             {"denominator", {r.denominator.real(), r.denominator.imag()}},
                             {"approx_magnitudes", r.approx_magnitudes},
                             {"max_approx_gap", r.max_approx_gap}});
        } else if (decode->parsed()) {
            const auto strategy = halluc::decoding::parse_strategy(strategy_name);
            if (strategy == halluc::decoding::Strategy::sample && !seed_given)
                throw halluc::ConfigError("--seed is required for the sample strategy");
            const auto models = load_models(seed, full_model_path, base_model_path);
            halluc::decoding::DecodeConfig dc;
            dc.strategy = strategy;
            dc.max_len = max_len;
            dc.beam_width = beam_width;
            dc.temperature = temperature;
            dc.seed = seed;
            dc.stop_tokens = stop_set(models.full.vocab(), stops);
            dc.schedule = {models.full.params().embed_dim, halluc::phase::kDefaultBase, decode_pair};
            const auto prompt = models.full.vocab().encode(prompt_text);
            log_config("decode", Json{{"seed", seed},
                                      {"prompt", prompt_text},
                                      {"strategy", strategy_name},
                                      {"lambda", cp.lambda},
                                      {"eta", cp.eta},
                                      {"floor", cp.prob_floor},
                                      {"beam_width", beam_width},
                                      {"temperature", temperature},
                                      {"max_len", max_len},
                                      {"phase_pair", decode_pair},
                                      {"stop", stops},
                                      {"full_model", model_summary(models.full)},
                                      {"base_model", model_summary(models.base)}});
            const auto trace = halluc::decoding::decode(models.full, models.base, dc, cp, prompt);
            Output out(out_path);
            for (const auto& s : trace.steps) out.stream() << io::to_json(s, models.full.vocab()).dump() << "\n";
        } else if (fuse->parsed()) {
            const auto rankings = io::read_rankings_csv(rankings_path);
            const auto fused = halluc::grounding::rrf_fuse(rankings, rrf_k);
            const auto kept = halluc::grounding::top_r(fused, top_r);
            Json fused_j = Json::array();
            for (const auto& d : fused) fused_j.push_back(Json{{"id", d.id}, {"score", d.score}});
            Json post = Json::array();
            if (!kept.empty()) {
                std::vector<double> scores;
                for (const auto& d : kept) scores.push_back(d.score);
                const auto w = halluc::grounding::posterior_from_rrf(scores);
                for (std::size_t i = 0; i < kept.size(); ++i) post.push_back(Json{{"id", kept[i].id}, {"weight", w[i]}});
            }
            emit_report(out_path, "fuse", Json{{"k", rrf_k}, {"top_r", top_r}, {"rankings", rankings.size()}},
                        Json{{"fused", fused_j}, {"posterior", post}});
        } else if (pipe->parsed()) {
            if (config_path.empty())
                if (const char* env = std::getenv("HALLUC_CONFIG")) config_path = env;
            Json cj = config_path.empty() ? Json::object() : io::read_json(config_path);
            const std::uint64_t root = cj.contains("seed") ? io::get<std::uint64_t>(cj, "seed", "config") : seed;
            cj["seed"] = root;
            if (!cj.contains("prompt")) cj["prompt"] = "the cat";
            const std::string full_path = io::get_or<std::string>(cj, "full_model", "", "config");
            const std::string base_path = io::get_or<std::string>(cj, "base_model", "", "config");
            if (documents_path.empty()) documents_path = io::get_or<std::string>(cj, "documents", "", "config");
            const auto models = load_models(root, full_path, base_path);
            auto pc = io::pipeline_config_from_json(cj, models.full.vocab(), config_path.empty() ? "config" : config_path);
            pc.schedule.d = models.full.params().embed_dim;
            const auto store = documents_path.empty() ? halluc::grounding::DocumentStore{}
                                                      : io::read_documents(documents_path, models.full.vocab());
            Json resolved = io::to_json(pc, models.full.vocab());
            resolved["full_model"] = model_summary(models.full);
            resolved["base_model"] = model_summary(models.base);
            resolved["documents"] = store.documents().size();
            log_config("pipeline", resolved);
            const auto trace = halluc::pipeline::run_pipeline(models.full, models.base, store, pc);
            Output out(out_path);
            out.stream() << io::trace_jsonl(trace, models.full.vocab());
            if (!summary_path.empty()) {
                Json summary = io::summary_json(trace, models.full.vocab());
                summary["config"] = resolved;
                Output sum(summary_path);
                sum.stream() << summary.dump(2) << "\n";
            }
        } else if (grad->parsed()) {
            const auto form = halluc::alignment::parse_multiplier_form(form_name);
            Json runs = Json::array();
            double worst = 0.0;
            for (std::uint64_t s : grad_seeds) {
                const auto setup = halluc::alignment::make_gradcheck_setup(s, verifier_name);
                halluc::alignment::LossConfig lc;
                lc.params = {lambda_fact, form};
                lc.schedule = {setup.model.embed_dim, halluc::phase::kDefaultBase, 0};
                const auto rep =
                    halluc::alignment::gradient_check(setup.model, setup.batch, lc, *setup.verifier, {fd_step, 1e-6});
                worst = std::max(worst, rep.max_rel_error);
                Json r = io::to_json(rep);
                r["seed"] = s;
                runs.push_back(r);
            }
            emit_report(out_path, "gradcheck",
                        Json{{"seeds", grad_seeds}, {"lambda_fact", lambda_fact}, {"form", form_name},
                             {"verifier", verifier_name}, {"step", fd_step}},
                        Json{{"max_rel_error", worst}, {"runs", runs}});
        } else if (sweep->parsed()) {
            if (points < 2) throw halluc::InputError("--points must be >= 2");
            const auto y = io::to_prob(json_arg(sweep_dist, "--dist"), "--dist");
            const halluc::alignment::ConstantVerifier verifier(verifier_score);
            log_config("loss-sweep", Json{{"points", points}, {"dist", y.vec()}, {"target", target},
                                          {"lambda_fact", lambda_fact}, {"verifier_score", verifier_score}});
            Output out(out_path);
            out.stream() << "phi,multiplier_main,multiplier_extended,loss_main,loss_extended,ce\n";
            for (std::size_t i = 0; i < points; ++i) {
                const double phi = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(points);
                const auto lm = halluc::alignment::factual_loss(
                    y, target, phi, {lambda_fact, halluc::alignment::MultiplierForm::main}, verifier);
                const auto la = halluc::alignment::factual_loss(
                    y, target, phi, {lambda_fact, halluc::alignment::MultiplierForm::extended}, verifier);
                out.stream() << io::fmt(phi) << "," << io::fmt(lm.multiplier) << "," << io::fmt(la.multiplier) << ","
                             << io::fmt(lm.loss) << "," << io::fmt(la.loss) << "," << io::fmt(lm.ce_part) << "\n";
            }
        } else if (init->parsed()) {
            halluc::ToyLmParams p = load_model(model_config_path, {8, 16, 0.1, seed, halluc::phase::kDefaultBase});
            log_config("init-model", io::to_json(halluc::ToyLmConfig{p.embed_dim, p.hidden_dim, p.dropout_rate,
                                                                     p.seed, p.pe_base}));
            Output out(out_path);
            out.stream() << io::to_json(p).dump() << "\n";
        }
    } catch (const halluc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
