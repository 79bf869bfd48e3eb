#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "taxocap/gateway.hpp"
#include "taxocap/store.hpp"
#include "taxocap/taxa.hpp"

namespace taxocap::pipeline {

enum class CaptionFlag { over_word_limit, missing_species_name, empty };

const char* flag_name(CaptionFlag f);

struct GenerationContext {
    std::string species_name;
    std::vector<std::string> format_examples;  // 1..3
    std::optional<std::string> wiki_excerpt;
    int word_limit = 40;
    std::string image_ref;
    bool example_fallback = false;
    std::optional<std::string> genus;        // extra accepted mentions for the
    std::optional<std::string> common_name;  // species-name check
};

struct CaptionRecord {
    std::string sample_id;
    std::string taxon_key;
    std::string caption;
    bool used_wiki = false;
    bool used_examples = true;
    bool example_fallback = false;
    std::set<CaptionFlag> flags;
    std::string model;
    double temperature = 0.6;
    double top_p = 0.8;
    int attempt_count = 0;
    std::string error;  // gateway failure note; empty on success
};

struct Stores {
    const store::DescriptionStore* descriptions = nullptr;
    const store::ExampleStore* examples = nullptr;
};

struct UnroutableSample : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Assembles the per-sample context: wiki excerpt from the description store
// (absent allowed), format examples from the record's taxonomic class.
// Throws UnroutableSample when the record has neither class nor genus.
GenerationContext build_context(const taxa::ManifestEntry& sample, const Stores& stores,
                                int word_limit = 40);

// Word count is the whitespace-token count; the species check accepts the
// scientific name, the genus alone, or the common name, case-insensitively.
std::set<CaptionFlag> validate_caption(const std::string& text,
                                       const std::string& species_name, int word_limit,
                                       const std::optional<std::string>& genus = std::nullopt,
                                       const std::optional<std::string>& common_name =
                                           std::nullopt);

// One generation call at temperature 0.6 / top_p 0.8 with a single corrective
// retry on validation failure. Gateway failures produce a record flagged
// `empty` with the error noted; the pipeline never drops a sample.
CaptionRecord generate_caption(const GenerationContext& context, llm::Gateway& gateway);

struct RunStats {
    std::size_t total = 0;
    std::size_t over_word_limit = 0;
    std::size_t missing_species_name = 0;
    std::size_t empty = 0;
    std::size_t used_wiki = 0;
    std::size_t example_fallback = 0;
    std::size_t gateway_errors = 0;
    double wiki_rate = 0.0;
    double fallback_rate = 0.0;
    std::int64_t wall_ms = 0;
};

struct PipelineConfig {
    int word_limit = 40;
    int concurrency = 8;
    bool resume = false;
    char manifest_delimiter = '|';
};

struct RunResult {
    std::string output_path;
    RunStats stats;
};

// Processes every manifest sample with bounded concurrency; output order is
// manifest order and the record count always equals the manifest count.
// A resume sidecar (<out>.resume.json) tracks the completed contiguous prefix
// so an interrupted run restarts where it stopped.
RunResult run_pipeline(const std::string& manifest_path, const std::string& output_path,
                       const Stores& stores, llm::Gateway& gateway,
                       const PipelineConfig& config);

std::string caption_record_to_json(const CaptionRecord& record);
CaptionRecord caption_record_from_json(const std::string& line);

}  // namespace taxocap::pipeline
