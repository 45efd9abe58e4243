#pragma once
// Shared setup for pipeline-level tests: the same default models the CLI
// builds from a root seed, and the committed document fixture.

#include <string>

#include "halluc/io.hpp"
#include "halluc/pipeline.hpp"

#ifndef HALLUC_TEST_DATA_DIR
#error "HALLUC_TEST_DATA_DIR must be defined"
#endif

namespace fixtures {

inline std::string data(const std::string& name) { return std::string(HALLUC_TEST_DATA_DIR) + "/" + name; }

struct Setup {
    halluc::ToyLm full;
    halluc::ToyLm base;
    halluc::grounding::DocumentStore store;
    halluc::pipeline::PipelineConfig config;
};

inline Setup load(const std::string& config_file) {
    const auto vocab = halluc::default_vocab();
    const auto cfg = halluc::io::pipeline_config_from_json(halluc::io::read_json(data(config_file)), vocab, config_file);
    halluc::ToyLm full(halluc::init_params(vocab, {8, 16, 0.1, halluc::derive_seed(cfg.seed, "full_model")}));
    halluc::ToyLm base(halluc::init_params(vocab, {8, 4, 0.1, halluc::derive_seed(cfg.seed, "base_model")}));
    return {std::move(full), std::move(base), halluc::io::read_documents(data("documents.jsonl"), vocab), cfg};
}

}  // namespace fixtures
