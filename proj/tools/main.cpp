// taxocap: caption-curation and contrastive-training toolkit CLI.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 partial failure
// (some items failed; details on stderr), 1 unexpected error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "taxocap/config.hpp"
#include "taxocap/gateway.hpp"
#include "taxocap/metrics.hpp"
#include "taxocap/model.hpp"
#include "taxocap/pipeline.hpp"
#include "taxocap/store.hpp"
#include "taxocap/taxa.hpp"
#include "taxocap/wiki.hpp"
#include "taxocap/world.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace taxocap;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

config::RunConfig load_config(const std::string& config_path,
                              const std::vector<std::string>& overrides,
                              std::optional<std::uint64_t> seed_override) {
    auto config = config_path.empty() ? config::RunConfig::defaults()
                                      : config::RunConfig::from_file(config_path);
    for (const auto& assignment : overrides) config.apply_override(assignment);
    if (seed_override) config.set_seed(*seed_override);
    return config;
}

std::string deepest_key(const taxa::TaxonRecord& taxon) {
    if (const auto key = taxa::rank_key(taxon, taxa::Rank::species)) return *key;
    if (const auto key = taxa::rank_key(taxon, taxa::Rank::genus)) return *key;
    return taxon.scientific_name;
}

int cmd_scrape(const config::RunConfig& config, const std::string& manifest_path,
               const std::string& out_path) {
    const auto manifest = taxa::load_manifest(manifest_path, config.manifest_delimiter());
    for (const auto& err : manifest.errors) {
        std::cerr << "manifest: " << err << "\n";
    }
    if (!manifest.errors.empty()) return kExitConfig;

    // One scrape per distinct taxon, in first-seen manifest order.
    std::vector<taxa::TaxonRecord> unique_taxa;
    std::map<std::string, std::size_t> seen;
    for (const auto& entry : manifest.entries) {
        const std::string key = deepest_key(entry.taxon);
        if (seen.emplace(key, unique_taxa.size()).second) unique_taxa.push_back(entry.taxon);
    }

    const auto backend = config.make_wiki_backend();
    wiki::ResolveOptions options;
    options.min_matching_ranks = config.wiki_min_matching_ranks();
    const auto outcomes =
        wiki::resolve_many(unique_taxa, *backend, config.wiki_max_in_flight(), options);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
        std::cerr << "cannot open output: " << out_path << "\n";
        return kExitConfig;
    }
    std::size_t written = 0, absent = 0, failed = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (!outcomes[i].error.empty()) {
            ++failed;
            std::cerr << "scrape failed: " << deepest_key(unique_taxa[i]) << ": "
                      << outcomes[i].error << "\n";
            continue;
        }
        if (!outcomes[i].candidate) {
            ++absent;
            continue;
        }
        const auto& c = *outcomes[i].candidate;
        const bool species_level = c.source != wiki::DescriptionSource::genus_direct;
        json record = {
            {"taxon_key", deepest_key(c.taxon)},
            {"rank", species_level ? "species" : "genus"},
            {"source", wiki::source_name(c.source)},
            {"page_title", c.page_title},
            {"species", c.taxon.scientific_name},
            {"paragraphs", c.paragraphs},
        };
        out << record.dump() << "\n";
        ++written;
    }
    std::cerr << "scrape: " << written << " records, " << absent << " without descriptions, "
              << failed << " failures over " << unique_taxa.size() << " taxa\n";
    return failed ? kExitPartial : kExitOk;
}

int cmd_extract(const config::RunConfig& config, const std::string& paragraphs_path,
                const std::string& out_path) {
    std::ifstream in(paragraphs_path, std::ios::binary);
    if (!in) {
        std::cerr << "cannot open paragraphs file: " << paragraphs_path << "\n";
        return kExitConfig;
    }
    const auto gateway = config.make_gateway();

    std::vector<store::VisualDescription> records;
    std::size_t verified_yes = 0, verified_no = 0, errors = 0, skipped_paragraphs = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            std::cerr << "paragraphs line " << line_no << ": " << e.what() << "\n";
            ++errors;
            continue;
        }
        const std::string species = j.value("species", "");
        const auto paragraphs = j.value("paragraphs", std::vector<std::string>{});
        bool done = false;
        for (std::size_t p = 0; p < paragraphs.size(); ++p) {
            if (done) {
                ++skipped_paragraphs;
                continue;
            }
            try {
                if (!llm::verify_visual(paragraphs[p], species, *gateway)) {
                    ++verified_no;
                    continue;
                }
                ++verified_yes;
                store::VisualDescription rec;
                rec.taxon_key = j.at("taxon_key").get<std::string>();
                const auto rank = taxa::rank_from_name(j.at("rank").get<std::string>());
                const auto source = wiki::source_from_name(j.at("source").get<std::string>());
                if (!rank || !source) throw CliError("bad rank/source in record");
                rec.rank = *rank;
                rec.source = *source;
                rec.page_title = j.value("page_title", "");
                rec.text = llm::extract_visual(species, paragraphs[p], *gateway);
                records.push_back(std::move(rec));
                done = true;
            } catch (const std::exception& e) {
                ++errors;
                std::cerr << "extract failed for " << species << " paragraph " << (p + 1)
                          << ": " << e.what() << "\n";
            }
        }
    }
    const auto written = store::save_descriptions(records, out_path);
    std::cerr << "extract: " << written << " descriptions, " << verified_yes
              << " paragraphs verified yes, " << verified_no << " no, " << errors
              << " errors, " << skipped_paragraphs << " skipped\n";
    return errors ? kExitPartial : kExitOk;
}

int cmd_caption(const config::RunConfig& config, const std::string& manifest_path,
                const std::string& out_path, bool resume_flag) {
    const auto descriptions = store::DescriptionStore::load(config.descriptions_path());
    store::LoadReport examples_report;
    const auto examples = store::ExampleStore::load(config.examples_path(), &examples_report);
    for (const auto& err : examples_report.errors) std::cerr << "examples: " << err << "\n";

    pipeline::Stores stores;
    stores.descriptions = &descriptions;
    stores.examples = &examples;
    auto pipeline_config = config.pipeline_config();
    if (resume_flag) pipeline_config.resume = true;

    const auto gateway = config.make_gateway();
    const auto result =
        pipeline::run_pipeline(manifest_path, out_path, stores, *gateway, pipeline_config);
    const auto& s = result.stats;
    std::cerr << "caption: " << s.total << " records -> " << result.output_path << "\n"
              << "  flags: over_word_limit=" << s.over_word_limit
              << " missing_species_name=" << s.missing_species_name << " empty=" << s.empty
              << "\n"
              << "  wiki_rate=" << s.wiki_rate << " fallback_rate=" << s.fallback_rate
              << " gateway_errors=" << s.gateway_errors << " wall_ms=" << s.wall_ms << "\n";
    return kExitOk;
}

int cmd_coverage(const config::RunConfig& config, const std::string& manifest_path,
                 const std::string& descriptions_path, const std::string& out_path) {
    const auto manifest = taxa::load_manifest(manifest_path, config.manifest_delimiter());
    for (const auto& err : manifest.errors) std::cerr << "manifest: " << err << "\n";
    store::LoadReport report;
    const auto descriptions = store::DescriptionStore::load(descriptions_path, &report);
    for (const auto& err : report.errors) std::cerr << "descriptions: " << err << "\n";

    std::vector<taxa::TaxonRecord> records;
    records.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) records.push_back(entry.taxon);
    std::unordered_set<std::string> covered;
    for (const auto& key : descriptions.keys()) covered.insert(key);
    const auto coverage = taxa::coverage_report(records, covered);

    std::ostringstream table;
    table << std::left << std::setw(9) << "Rank" << std::setw(26) << "Covered taxa / Total"
          << std::right << std::setw(7) << "Ratio" << "   " << std::left << std::setw(28)
          << "Covered samples / Total" << std::right << std::setw(7) << "Ratio" << "\n";
    const std::array<std::string, 4> names = {"Order", "Family", "Genus", "Species"};
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& rc = coverage.ranks[i];
        const std::string taxa_cell = taxa::format_with_commas(rc.covered_taxa) + " / " +
                                      taxa::format_with_commas(rc.total_taxa);
        const std::string sample_cell = taxa::format_with_commas(rc.covered_samples) + " / " +
                                        taxa::format_with_commas(rc.total_samples);
        table << std::left << std::setw(9) << names[i] << std::setw(26) << taxa_cell
              << std::right << std::setw(7)
              << taxa::format_ratio_percent(rc.covered_taxa, rc.total_taxa) << "   "
              << std::left << std::setw(28) << sample_cell << std::right << std::setw(7)
              << taxa::format_ratio_percent(rc.covered_samples, rc.total_samples) << "\n";
    }
    if (out_path.empty()) {
        std::cout << table.str();
    } else {
        std::ofstream out(out_path, std::ios::binary);
        out << table.str();
    }
    return kExitOk;
}

struct ScenarioSummary {
    double trait_energy = 0.0;
    double top1 = 0.0;
    double loss = 0.0;
};

int cmd_sim(const config::RunConfig& config, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto spec = config.world_spec();
    const auto base_seed = config.seed();
    const int n_seeds = config.sim_seeds();
    const auto scenarios = {world::CaptionScenario::faithful,
                            world::CaptionScenario::taxonomy_only,
                            world::CaptionScenario::noisy};

    std::ofstream summary(out_dir + "/summary.csv", std::ios::binary);
    summary << "scenario,seed,final_loss,trait_energy_ratio,heldout_top1\n";
    summary.precision(10);

    std::map<world::CaptionScenario, ScenarioSummary> means;
    for (const auto scenario : scenarios) {
        for (int k = 0; k < n_seeds; ++k) {
            const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(k);
            const auto world_model = world::make_world(spec, scenario, seed);
            const auto train_set =
                world::sample_world(world_model, config.train_samples(), seed * 7919 + 1);
            const auto test_set =
                world::sample_world(world_model, config.test_samples(), seed * 7919 + 2);

            auto train_config = config.train_config();
            train_config.seed = seed;
            if (scenario == world::CaptionScenario::taxonomy_only) {
                train_config.loss.w_cap = 0.0;
            }
            const auto init =
                model::make_params(spec.d_x, spec.d_c, config.model_hidden_dim(),
                                   config.model_embed_dim(), spec.n_classes, seed + 31);
            model::TrainData data{train_set.x, train_set.c, train_set.label_ids};
            const auto result = model::train(data, init, train_config, world_model.a);
            if (result.diverged) {
                std::cerr << "sim: " << world::scenario_name(scenario) << " seed " << seed
                          << " diverged; last finite state kept\n";
            }

            std::ostringstream name;
            name << out_dir << "/history_" << world::scenario_name(scenario) << "_seed" << k
                 << ".csv";
            model::write_history_csv(result.history, name.str());

            const double trait_energy =
                model::trait_energy_ratio(result.params.taxonomy_map(), world_model.a);
            const auto image_embs = model::embed_for_eval(result.params, test_set.x);
            const double top1 = metrics::top1_accuracy(
                image_embs, model::unit_normalize(result.params.labels), test_set.label_ids);
            const double final_loss =
                result.history.empty() ? std::nan("") : result.history.back().loss;
            summary << world::scenario_name(scenario) << "," << seed << "," << final_loss
                    << "," << trait_energy << "," << top1 << "\n";
            auto& mean = means[scenario];
            mean.trait_energy += trait_energy / n_seeds;
            mean.top1 += top1 / n_seeds;
            mean.loss += final_loss / n_seeds;
        }
    }

    const auto& faithful = means[world::CaptionScenario::faithful];
    const auto& tax_only = means[world::CaptionScenario::taxonomy_only];
    const auto& noisy = means[world::CaptionScenario::noisy];
    const auto yes_no = [](bool b) { return b ? "yes" : "no"; };
    std::cerr << "sim means over " << n_seeds << " seeds:\n"
              << "  faithful:      trait_energy=" << faithful.trait_energy
              << " top1=" << faithful.top1 << "\n"
              << "  taxonomy_only: trait_energy=" << tax_only.trait_energy
              << " top1=" << tax_only.top1 << "\n"
              << "  noisy:         trait_energy=" << noisy.trait_energy
              << " top1=" << noisy.top1 << "\n"
              << "  faithful > noisy on trait_energy: "
              << yes_no(faithful.trait_energy > noisy.trait_energy) << "\n"
              << "  faithful >= taxonomy_only on held-out top1: "
              << yes_no(faithful.top1 >= tax_only.top1 - 0.02) << "\n"
              << "  noisy <= taxonomy_only on held-out top1: "
              << yes_no(noisy.top1 <= tax_only.top1 + 0.02) << "\n";
    return kExitOk;
}

metrics::RelevanceSet load_relevance(const std::string& path, std::size_t queries) {
    metrics::RelevanceSet rel(queries);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError("cannot open relevance file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw CliError("relevance line " + std::to_string(line_no) + ": " + e.what());
        }
        const auto query = j.at("query").get<std::size_t>();
        if (query >= queries) {
            throw CliError("relevance line " + std::to_string(line_no) +
                           ": query index out of range");
        }
        rel[query] = j.at("relevant").get<std::vector<std::uint32_t>>();
    }
    return rel;
}

int cmd_eval(const std::string& kind, const std::string& queries_path,
             const std::string& candidates_path, const std::string& labels_path,
             const std::string& relevance_path, int k, const std::string& out_path) {
    std::ostringstream csv;
    csv.precision(10);
    csv << "metric,value,n_queries,n_skipped\n";
    if (kind == "cls") {
        const auto images = metrics::read_embeddings(queries_path);
        const auto classes = metrics::read_embeddings(candidates_path);
        std::ifstream labels_in(labels_path);
        if (!labels_in) throw CliError("cannot open labels file: " + labels_path);
        std::vector<int> labels;
        int value = 0;
        while (labels_in >> value) labels.push_back(value);
        const double top1 = metrics::top1_accuracy(images.values, classes.values, labels);
        csv << "top1_accuracy," << top1 << "," << images.values.rows() << ",0\n";
    } else {
        const auto queries = metrics::read_embeddings(queries_path);
        const auto candidates = metrics::read_embeddings(candidates_path);
        if (k < 1 || k > candidates.values.rows()) {
            throw config::ConfigError("k must be in [1, candidates]");
        }
        const auto rel =
            relevance_path.empty()
                ? metrics::identity_relevance(static_cast<std::size_t>(queries.values.rows()))
                : load_relevance(relevance_path,
                                 static_cast<std::size_t>(queries.values.rows()));
        if (relevance_path.empty() && queries.values.rows() != candidates.values.rows()) {
            throw config::ConfigError(
                "identity pairing needs equal query/candidate counts; pass --relevance");
        }
        const auto scores = metrics::cosine_scores(queries.values, candidates.values);
        if (kind == "retrieval") {
            const auto result = metrics::recall_at_k(scores, rel, k);
            csv << "recall_at_" << k << "," << result.value << "," << result.n_queries << ","
                << result.n_skipped << "\n";
        } else {  // rerank
            const auto result = metrics::mean_ap_at_k(scores, rel, k);
            csv << "mean_ap_at_" << k << "," << result.value << "," << result.n_queries << ","
                << result.n_skipped << "\n";
        }
    }
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw CliError("cannot open output: " + out_path);
        out << csv.str();
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-grounded caption curation and desk-scale contrastive training"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "TOML config file");
    std::optional<std::uint64_t> seed_override;
    app.add_option("--seed", seed_override, "Seed override for all randomness");
    std::vector<std::string> overrides;
    app.add_option("--set", overrides,
                   "Override any config key as table.key=value (repeatable)");

    auto* scrape = app.add_subcommand("scrape", "Fetch and filter encyclopedia descriptions");
    std::string scrape_manifest, scrape_out;
    scrape->add_option("--manifest", scrape_manifest, "Sample manifest")->required();
    scrape->add_option("--out", scrape_out, "Output paragraphs JSONL")->required();

    auto* extract = app.add_subcommand("extract", "Verify and extract visual descriptions");
    std::string extract_in, extract_out;
    extract->add_option("--paragraphs", extract_in, "Paragraphs JSONL from scrape")
        ->required();
    extract->add_option("--out", extract_out, "Output descriptions JSONL")->required();

    auto* caption = app.add_subcommand("caption", "Generate per-sample captions");
    std::string caption_manifest, caption_out;
    bool caption_resume = false;
    caption->add_option("--manifest", caption_manifest, "Sample manifest")->required();
    caption->add_option("--out", caption_out, "Output captions JSONL")->required();
    caption->add_flag("--resume", caption_resume, "Resume from the last completed prefix");

    auto* coverage = app.add_subcommand("coverage", "Report taxa and sample coverage");
    std::string coverage_manifest, coverage_descriptions, coverage_out;
    coverage->add_option("--manifest", coverage_manifest, "Sample manifest")->required();
    coverage->add_option("--descriptions", coverage_descriptions, "Descriptions JSONL")
        ->required();
    coverage->add_option("--out", coverage_out, "Write the table here instead of stdout");

    auto* sim = app.add_subcommand("sim", "Train on the synthetic world across scenarios");
    std::string sim_out_dir;
    sim->add_option("--out-dir", sim_out_dir, "Directory for history and summary CSVs")
        ->required();

    auto* eval = app.add_subcommand("eval", "Evaluate embeddings (cls, retrieval, rerank)");
    std::string eval_kind, eval_queries, eval_candidates, eval_labels, eval_relevance,
        eval_out;
    int eval_k = 10;
    eval->add_option("--kind", eval_kind, "cls | retrieval | rerank")
        ->required()
        ->check(CLI::IsMember({"cls", "retrieval", "rerank"}));
    eval->add_option("--queries", eval_queries, "Query/image embeddings file")->required();
    eval->add_option("--candidates", eval_candidates,
                     "Candidate/class embeddings file")
        ->required();
    eval->add_option("--labels", eval_labels, "Label file for cls (one index per line)");
    eval->add_option("--relevance", eval_relevance, "Relevance JSONL for retrieval/rerank");
    eval->add_option("--k", eval_k, "Cutoff for recall/AP");
    eval->add_option("--out", eval_out, "Write the CSV report here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto config = load_config(config_path, overrides, seed_override);
        if (*scrape) return cmd_scrape(config, scrape_manifest, scrape_out);
        if (*extract) return cmd_extract(config, extract_in, extract_out);
        if (*caption) return cmd_caption(config, caption_manifest, caption_out, caption_resume);
        if (*coverage) {
            return cmd_coverage(config, coverage_manifest, coverage_descriptions, coverage_out);
        }
        if (*sim) return cmd_sim(config, sim_out_dir);
        if (*eval) {
            if (eval_kind == "cls" && eval_labels.empty()) {
                throw config::ConfigError("--labels is required for --kind cls");
            }
            return cmd_eval(eval_kind, eval_queries, eval_candidates, eval_labels,
                            eval_relevance, eval_k, eval_out);
        }
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const toml::TomlError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const taxa::ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
