#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "taxocap/pipeline.hpp"
#include "taxocap/taxa.hpp"

using namespace taxocap;
using pipeline::CaptionFlag;

namespace {

const std::string kFixtures = std::string(TAXOCAP_TEST_DIR) + "/fixtures";

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct Env {
    store::DescriptionStore descriptions;
    store::ExampleStore examples;
    pipeline::Stores stores;

    Env()
        : descriptions(store::DescriptionStore::load(kFixtures + "/stores/descriptions.jsonl")),
          examples(store::ExampleStore::load(kFixtures + "/stores/format_examples.jsonl")) {
        stores.descriptions = &descriptions;
        stores.examples = &examples;
    }
};

std::unique_ptr<llm::Gateway> make_mock_gateway(const std::string& script_name,
                                                int concurrency = 8) {
    llm::BackendConfig config;
    config.model = "mock-mllm";
    config.max_concurrency = concurrency;
    config.requests_per_minute = 100000;
    config.retry.max_attempts = 3;
    config.retry.base_backoff = std::chrono::milliseconds(1);
    config.retry.jitter = 0.0;
    return std::make_unique<llm::Gateway>(
        llm::ScriptedMockBackend::from_file(kFixtures + "/mock/" + script_name), config);
}

taxa::ManifestEntry entry_for(const std::string& line) {
    return taxa::parse_manifest_line(line);
}

}  // namespace

TEST_CASE("validate_caption: word limit boundary, species mention, empty") {
    std::string forty_one;
    for (int i = 0; i < 41; ++i) forty_one += "w" + std::to_string(i) + " ";
    auto flags = pipeline::validate_caption(forty_one, "Selasphorus calliope", 40);
    CHECK(flags.count(CaptionFlag::over_word_limit) == 1);

    flags = pipeline::validate_caption(
        "A view of Selasphorus calliope perched on a twig with magenta streaks.",
        "Selasphorus calliope", 40);
    CHECK(flags.empty());

    flags = pipeline::validate_caption("", "X", 40);
    CHECK(flags.count(CaptionFlag::empty) == 1);
    CHECK(flags.count(CaptionFlag::missing_species_name) == 1);

    // Genus-only and common-name mentions satisfy the check.
    CHECK(pipeline::validate_caption("The selasphorus hovers.", "Selasphorus calliope", 40,
                                     std::string("Selasphorus"))
              .empty());
    CHECK(pipeline::validate_caption("A Lion rests.", "Panthera leo", 40,
                                     std::string("Panthera"), std::string("Lion"))
              .empty());
    CHECK(pipeline::validate_caption("No mention here.", "Panthera leo", 40,
                                     std::string("Panthera"), std::string("Lion"))
              .count(CaptionFlag::missing_species_name) == 1);

    // Exactly at the limit passes.
    std::string forty;
    for (int i = 0; i < 39; ++i) forty += "w ";
    forty += "Selasphorus";
    CHECK(pipeline::validate_caption(forty, "Selasphorus calliope", 40,
                                     std::string("Selasphorus"))
              .empty());
}

TEST_CASE("build_context assembles wiki excerpts and examples") {
    Env env;
    // Covered species: both wiki and curated examples.
    auto ctx = pipeline::build_context(
        entry_for("Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|calliope|s1"),
        env.stores);
    CHECK(ctx.species_name == "Selasphorus calliope");
    CHECK(ctx.wiki_excerpt.has_value());
    CHECK(ctx.format_examples.size() == 3);
    CHECK_FALSE(ctx.example_fallback);

    // Non-covered species: examples only.
    ctx = pipeline::build_context(
        entry_for("Animalia|Chordata|Mammalia|Carnivora|Canidae|Vulpes|vulpes|s2"),
        env.stores);
    CHECK_FALSE(ctx.wiki_excerpt.has_value());
    CHECK(ctx.format_examples.size() == 2);  // Mammalia set

    // Genus-level store entry reaches other species of the genus.
    ctx = pipeline::build_context(
        entry_for("Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|rufus|s3"),
        env.stores);
    CHECK(ctx.wiki_excerpt.has_value());

    // Unknown class: generic fallback flagged.
    ctx = pipeline::build_context(
        entry_for("Animalia|Arthropoda|Insecta|Hymenoptera|Apidae|Apis|mellifera|s4"),
        env.stores);
    CHECK(ctx.example_fallback);

    // No class and no genus: unroutable.
    taxa::ManifestEntry orphan;
    orphan.sample_id = "s5";
    orphan.taxon.kingdom = "Animalia";
    CHECK_THROWS_AS(pipeline::build_context(orphan, env.stores), pipeline::UnroutableSample);
}

TEST_CASE("generate_caption: clean reply carries no flags") {
    auto gateway = make_mock_gateway("caption_script.jsonl");
    pipeline::GenerationContext ctx;
    ctx.species_name = "Selasphorus calliope";
    ctx.format_examples = {"Example."};
    ctx.word_limit = 40;
    ctx.image_ref = "img";
    const auto record = pipeline::generate_caption(ctx, *gateway);
    CHECK(record.flags.empty());
    CHECK(record.attempt_count == 1);
    CHECK(record.caption.find("Selasphorus calliope") != std::string::npos);
    CHECK(record.temperature == 0.6);
    CHECK(record.top_p == 0.8);
}

TEST_CASE("generate_caption: persistent violations get one retry then flags") {
    auto gateway = make_mock_gateway("caption_script.jsonl");
    pipeline::GenerationContext ctx;
    ctx.species_name = "Vulpes vulpes";  // the mock always replies with 60 words
    ctx.format_examples = {"Example."};
    ctx.word_limit = 40;
    const auto record = pipeline::generate_caption(ctx, *gateway);
    CHECK(record.attempt_count == 2);
    CHECK(record.flags.count(CaptionFlag::over_word_limit) == 1);
    CHECK_FALSE(record.caption.empty());

    pipeline::GenerationContext missing;
    missing.species_name = "Procyon lotor";
    missing.genus = "Procyon";
    missing.format_examples = {"Example."};
    missing.word_limit = 40;
    const auto record2 = pipeline::generate_caption(missing, *gateway);
    CHECK(record2.attempt_count == 2);
    CHECK(record2.flags.count(CaptionFlag::missing_species_name) == 1);
}

TEST_CASE("generate_caption: gateway failure yields an empty flagged record") {
    auto gateway = make_mock_gateway("caption_script.jsonl");
    pipeline::GenerationContext ctx;
    ctx.species_name = "Ailuropoda melanoleuca";  // scripted 500
    ctx.format_examples = {"Example."};
    ctx.word_limit = 40;
    const auto record = pipeline::generate_caption(ctx, *gateway);
    CHECK(record.flags.count(CaptionFlag::empty) == 1);
    CHECK(record.caption.empty());
    CHECK_FALSE(record.error.empty());
}

TEST_CASE("run_pipeline: deterministic output, full record count, stats") {
    Env env;
    pipeline::PipelineConfig config;
    config.concurrency = 8;
    const std::string manifest = kFixtures + "/manifests/pipeline50.psv";

    const std::string out_a = temp_path("taxocap_captions_a.jsonl");
    auto gw_a = make_mock_gateway("caption_script.jsonl");
    const auto result_a = pipeline::run_pipeline(manifest, out_a, env.stores, *gw_a, config);

    const std::string out_b = temp_path("taxocap_captions_b.jsonl");
    auto gw_b = make_mock_gateway("caption_script.jsonl");
    const auto result_b = pipeline::run_pipeline(manifest, out_b, env.stores, *gw_b, config);

    CHECK(slurp(out_a) == slurp(out_b));  // byte-identical across runs

    // Record count equals manifest count, in manifest order.
    std::istringstream lines(slurp(out_a));
    std::string line;
    std::size_t count = 0;
    std::vector<std::string> sample_ids;
    while (std::getline(lines, line)) {
        const auto record = pipeline::caption_record_from_json(line);
        sample_ids.push_back(record.sample_id);
        ++count;
    }
    CHECK(count == 50);
    CHECK(result_a.stats.total == 50);
    const auto loaded = taxa::load_manifest(manifest);
    for (std::size_t i = 0; i < loaded.entries.size(); ++i) {
        CHECK(sample_ids[i] == loaded.entries[i].sample_id);
    }

    // 10 species x 5 rounds: panda rows fail at the gateway, fox rows carry
    // the over-limit flag, raccoon rows miss the species name.
    CHECK(result_a.stats.empty == 5);
    CHECK(result_a.stats.gateway_errors == 5);
    CHECK(result_a.stats.over_word_limit == 5);
    CHECK(result_a.stats.missing_species_name == 10);  // raccoon rows + panda rows
    CHECK(result_a.stats.example_fallback == 5);       // Insecta rows
    // Wiki contexts: calliope, pictus, leo, rufus rows = 20 of 50.
    CHECK(result_a.stats.used_wiki == 20);
    CHECK(result_a.stats.wiki_rate == doctest::Approx(0.4));

    std::remove(out_a.c_str());
    std::remove((out_a + ".resume.json").c_str());
    std::remove(out_b.c_str());
    std::remove((out_b + ".resume.json").c_str());
}

TEST_CASE("run_pipeline: kill-at-30 resume reproduces the identical file") {
    Env env;
    pipeline::PipelineConfig config;
    config.concurrency = 4;
    const std::string manifest = kFixtures + "/manifests/pipeline50.psv";

    const std::string full_out = temp_path("taxocap_captions_full.jsonl");
    auto gw_full = make_mock_gateway("caption_script.jsonl");
    pipeline::run_pipeline(manifest, full_out, env.stores, *gw_full, config);
    const std::string full_bytes = slurp(full_out);

    // Simulate a kill after 30 completed samples: keep the first 30 lines and
    // a resume sidecar claiming 30 completed.
    const std::string resumed_out = temp_path("taxocap_captions_resumed.jsonl");
    {
        std::istringstream in(full_bytes);
        std::ofstream out(resumed_out, std::ios::binary);
        std::string line;
        for (int i = 0; i < 30 && std::getline(in, line); ++i) out << line << "\n";
        std::ifstream state_in(full_out + ".resume.json");
        std::ostringstream state;
        state << state_in.rdbuf();
        std::string state_text = state.str();
        const auto pos = state_text.find("\"completed\":50");
        REQUIRE(pos != std::string::npos);
        state_text.replace(pos, std::string("\"completed\":50").size(), "\"completed\":30");
        std::ofstream state_out(resumed_out + ".resume.json");
        state_out << state_text;
    }

    pipeline::PipelineConfig resume_config = config;
    resume_config.resume = true;
    auto gw_resume = make_mock_gateway("caption_script.jsonl");
    const auto result =
        pipeline::run_pipeline(manifest, resumed_out, env.stores, *gw_resume, resume_config);
    CHECK(slurp(resumed_out) == full_bytes);
    CHECK(result.stats.total == 50);
    // Only the 20 remaining samples were generated: 2 species among them flag
    // on retry (fox, raccoon) and one errors out; spot-check via call count.
    CHECK(gw_resume->total_requests() < gw_full->total_requests());

    std::remove(full_out.c_str());
    std::remove((full_out + ".resume.json").c_str());
    std::remove(resumed_out.c_str());
    std::remove((resumed_out + ".resume.json").c_str());
}

TEST_CASE("run_pipeline: resume against a changed manifest starts over") {
    Env env;
    pipeline::PipelineConfig config;
    config.concurrency = 2;

    const std::string manifest = temp_path("taxocap_resume_manifest.psv");
    {
        std::ofstream out(manifest);
        out << "Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|calliope|r1\n";
        out << "Animalia|Chordata|Mammalia|Carnivora|Canidae|Lycaon|pictus|r2\n";
    }
    const std::string out_path = temp_path("taxocap_resume_out.jsonl");
    auto gw = make_mock_gateway("caption_script.jsonl");
    pipeline::run_pipeline(manifest, out_path, env.stores, *gw, config);

    // A different manifest invalidates the sidecar: the stale output must be
    // discarded, not appended to.
    {
        std::ofstream out(manifest);
        out << "Animalia|Chordata|Mammalia|Carnivora|Canidae|Lycaon|pictus|q1\n";
    }
    auto resume_config = config;
    resume_config.resume = true;
    auto gw2 = make_mock_gateway("caption_script.jsonl");
    const auto result =
        pipeline::run_pipeline(manifest, out_path, env.stores, *gw2, resume_config);
    CHECK(result.stats.total == 1);
    std::istringstream in(slurp(out_path));
    std::string line, last;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        last = line;
        ++lines;
    }
    CHECK(lines == 1);
    CHECK(pipeline::caption_record_from_json(last).sample_id == "q1");

    std::remove(manifest.c_str());
    std::remove(out_path.c_str());
    std::remove((out_path + ".resume.json").c_str());
}

TEST_CASE("run_pipeline: empty manifest produces empty output and zero stats") {
    Env env;
    const std::string manifest = temp_path("taxocap_empty_manifest.psv");
    {
        std::ofstream out(manifest);
    }
    const std::string out_path = temp_path("taxocap_captions_empty.jsonl");
    auto gateway = make_mock_gateway("caption_script.jsonl");
    const auto result =
        pipeline::run_pipeline(manifest, out_path, env.stores, *gateway, {});
    CHECK(result.stats.total == 0);
    CHECK(slurp(out_path).empty());
    std::remove(manifest.c_str());
    std::remove(out_path.c_str());
    std::remove((out_path + ".resume.json").c_str());
}

TEST_CASE("wiki rate equals species-rank sample coverage for species-only stores") {
    // Store with species-level keys only, manifest fully ranked: the pipeline
    // wiki rate must equal coverage_report's species sample_ratio exactly.
    std::vector<store::VisualDescription> recs;
    store::VisualDescription rec;
    rec.taxon_key = "Animalia/Chordata/Aves/Apodiformes/Trochilidae/Selasphorus/calliope";
    rec.rank = taxa::Rank::species;
    rec.source = wiki::DescriptionSource::species_page;
    rec.text = "t";
    recs.push_back(rec);
    store::DescriptionStore descriptions(recs);
    store::ExampleStore examples({{"Aves", {"Example."}}, {"Mammalia", {"Example."}}});
    pipeline::Stores stores{&descriptions, &examples};

    const std::string manifest = temp_path("taxocap_cov_manifest.psv");
    {
        std::ofstream out(manifest);
        out << "Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|calliope|a1\n";
        out << "Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|rufus|a2\n";
        out << "Animalia|Chordata|Mammalia|Carnivora|Canidae|Vulpes|vulpes|a3\n";
        out << "Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|calliope|a4\n";
    }
    const std::string out_path = temp_path("taxocap_cov_captions.jsonl");
    auto gateway = make_mock_gateway("caption_script.jsonl");
    const auto result = pipeline::run_pipeline(manifest, out_path, stores, *gateway, {});

    const auto loaded = taxa::load_manifest(manifest);
    std::vector<taxa::TaxonRecord> records;
    for (const auto& e : loaded.entries) records.push_back(e.taxon);
    std::unordered_set<std::string> covered;
    for (const auto& key : descriptions.keys()) covered.insert(key);
    const auto coverage = taxa::coverage_report(records, covered);
    CHECK(result.stats.wiki_rate ==
          doctest::Approx(coverage.at(taxa::Rank::species).sample_ratio));

    std::remove(manifest.c_str());
    std::remove(out_path.c_str());
    std::remove((out_path + ".resume.json").c_str());
}

TEST_CASE("caption record JSON round-trips") {
    pipeline::CaptionRecord record;
    record.sample_id = "s1";
    record.taxon_key = "K/P/C/O/F/G/s";
    record.caption = "A caption.";
    record.used_wiki = true;
    record.flags = {CaptionFlag::over_word_limit};
    record.model = "m";
    record.attempt_count = 2;
    const auto round = pipeline::caption_record_from_json(
        pipeline::caption_record_to_json(record));
    CHECK(round.sample_id == record.sample_id);
    CHECK(round.flags == record.flags);
    CHECK(round.used_wiki);
    CHECK(round.attempt_count == 2);
}
