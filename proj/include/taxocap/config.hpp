#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "taxocap/gateway.hpp"
#include "taxocap/pipeline.hpp"
#include "taxocap/toml.hpp"
#include "taxocap/wiki.hpp"
#include "taxocap/world.hpp"

namespace taxocap::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Validated view over the TOML config. Unknown tables or keys are rejected
// up front so typos fail before any work starts.
class RunConfig {
public:
    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);
    static RunConfig defaults();

    const toml::Document& doc() const { return doc_; }
    toml::Document& doc() { return doc_; }

    char manifest_delimiter() const;

    // [wiki]
    std::string wiki_backend() const;  // "fixture" | "live"
    std::string wiki_fixture_dir() const;
    wiki::LiveBackendConfig wiki_live_config() const;
    int wiki_min_matching_ranks() const;
    int wiki_max_in_flight() const;
    std::unique_ptr<wiki::PageBackend> make_wiki_backend() const;

    // [gateway]
    std::string gateway_backend() const;  // "http" | "mock-script" | "mock-dir"
    llm::BackendConfig gateway_config() const;
    std::shared_ptr<llm::ChatBackend> make_chat_backend() const;
    std::shared_ptr<llm::Gateway> make_gateway() const;

    // [pipeline]
    pipeline::PipelineConfig pipeline_config() const;

    // [stores]
    std::string descriptions_path() const;
    std::string examples_path() const;

    // [world] / [train] / [sim]
    world::WorldSpec world_spec() const;
    model::TrainConfig train_config() const;
    int model_hidden_dim() const;
    int model_embed_dim() const;
    int train_samples() const;
    int test_samples() const;
    int sim_seeds() const;

    std::uint64_t seed() const;
    void set_seed(std::uint64_t seed);

    // Applies a "table.key=value" (or "key=value" for top-level) override;
    // value syntax follows the config file. Unknown keys are rejected.
    void apply_override(const std::string& assignment);

private:
    explicit RunConfig(toml::Document doc);
    static void validate_schema(const toml::Document& doc);
    toml::Document doc_;
};

}  // namespace taxocap::config
