#include "taxocap/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "taxocap/prompts.hpp"

namespace taxocap::pipeline {

using json = nlohmann::ordered_json;

const char* flag_name(CaptionFlag f) {
    switch (f) {
        case CaptionFlag::over_word_limit: return "over_word_limit";
        case CaptionFlag::missing_species_name: return "missing_species_name";
        case CaptionFlag::empty: return "empty";
    }
    return "?";
}

namespace {

std::optional<CaptionFlag> flag_from_name(const std::string& name) {
    if (name == "over_word_limit") return CaptionFlag::over_word_limit;
    if (name == "missing_species_name") return CaptionFlag::missing_species_name;
    if (name == "empty") return CaptionFlag::empty;
    return std::nullopt;
}

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool contains_ci(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return false;
    return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::string deepest_taxon_key(const taxa::TaxonRecord& taxon) {
    if (const auto key = taxa::rank_key(taxon, taxa::Rank::species)) return *key;
    if (const auto key = taxa::rank_key(taxon, taxa::Rank::genus)) return *key;
    return taxon.scientific_name;
}

}  // namespace

GenerationContext build_context(const taxa::ManifestEntry& sample, const Stores& stores,
                                int word_limit) {
    if (!stores.descriptions || !stores.examples) {
        throw std::invalid_argument("stores must be loaded before building contexts");
    }
    const auto& taxon = sample.taxon;
    if (!taxon.class_name && !taxon.genus) {
        throw UnroutableSample("sample " + sample.sample_id +
                               " has neither taxonomic class nor genus");
    }
    GenerationContext context;
    context.species_name = taxon.scientific_name;
    context.word_limit = word_limit;
    context.image_ref = sample.image_ref;
    context.genus = taxon.genus;
    context.common_name = taxon.common_name;

    const auto examples = stores.examples->lookup(taxon.class_name.value_or(""));
    context.format_examples = examples.examples;
    context.example_fallback = examples.fallback;

    if (const auto description = stores.descriptions->lookup(taxon)) {
        context.wiki_excerpt = description->text;
    }
    return context;
}

std::set<CaptionFlag> validate_caption(const std::string& text,
                                       const std::string& species_name, int word_limit,
                                       const std::optional<std::string>& genus,
                                       const std::optional<std::string>& common_name) {
    std::set<CaptionFlag> flags;
    const std::size_t words = store::count_words(text);
    if (words == 0) {
        flags.insert(CaptionFlag::empty);
        flags.insert(CaptionFlag::missing_species_name);
        return flags;
    }
    if (words > static_cast<std::size_t>(word_limit)) {
        flags.insert(CaptionFlag::over_word_limit);
    }
    bool mentioned = contains_ci(text, species_name);
    if (!mentioned && genus) mentioned = contains_ci(text, *genus);
    if (!mentioned && common_name) mentioned = contains_ci(text, *common_name);
    if (!mentioned) flags.insert(CaptionFlag::missing_species_name);
    return flags;
}

namespace {

std::string corrective_note(const std::set<CaptionFlag>& flags,
                            const GenerationContext& context) {
    std::ostringstream note;
    note << "\n\nYour previous caption was rejected:";
    for (const auto flag : flags) {
        switch (flag) {
            case CaptionFlag::over_word_limit:
                note << " it exceeded the " << context.word_limit << "-word limit;";
                break;
            case CaptionFlag::missing_species_name:
                note << " it did not mention the species name \"" << context.species_name
                     << "\";";
                break;
            case CaptionFlag::empty:
                note << " it was empty;";
                break;
        }
    }
    note << " rewrite the caption following every constraint.";
    return note.str();
}

}  // namespace

CaptionRecord generate_caption(const GenerationContext& context, llm::Gateway& gateway) {
    if (context.format_examples.empty()) {
        throw std::invalid_argument("context carries no format examples");
    }
    if (context.word_limit < 10) throw std::invalid_argument("word_limit must be >= 10");

    prompts::CaptionPromptInputs inputs;
    inputs.species_name = context.species_name;
    inputs.format_examples = context.format_examples;
    inputs.wiki_excerpt = context.wiki_excerpt;
    inputs.word_limit = context.word_limit;
    const std::string prompt = prompts::render_caption(inputs);

    CaptionRecord record;
    record.used_wiki = context.wiki_excerpt.has_value();
    record.example_fallback = context.example_fallback;
    record.model = gateway.config().model;
    record.temperature = gateway.config().temperature;
    record.top_p = gateway.config().top_p;

    std::string current_prompt = prompt;
    for (int attempt = 0; attempt < 2; ++attempt) {  // one corrective retry
        llm::ChatRequest request =
            llm::make_user_request(gateway.config().model, current_prompt, context.image_ref);
        request.temperature = record.temperature;
        request.top_p = record.top_p;
        request.max_tokens = gateway.config().max_tokens;
        ++record.attempt_count;
        try {
            record.caption = gateway.complete(request);
        } catch (const llm::GatewayError& e) {
            record.caption.clear();
            record.flags = {CaptionFlag::empty, CaptionFlag::missing_species_name};
            record.error = e.what();
            return record;
        }
        record.flags = validate_caption(record.caption, context.species_name,
                                        context.word_limit, context.genus,
                                        context.common_name);
        if (record.flags.empty()) break;
        current_prompt = prompt + corrective_note(record.flags, context);
    }
    return record;
}

std::string caption_record_to_json(const CaptionRecord& record) {
    json j;
    j["sample_id"] = record.sample_id;
    j["taxon_key"] = record.taxon_key;
    j["caption"] = record.caption;
    j["used_wiki"] = record.used_wiki;
    j["used_examples"] = record.used_examples;
    j["example_fallback"] = record.example_fallback;
    json flags = json::array();
    for (const auto flag : record.flags) flags.push_back(flag_name(flag));
    j["flags"] = flags;
    j["model"] = record.model;
    j["temperature"] = record.temperature;
    j["top_p"] = record.top_p;
    j["attempt_count"] = record.attempt_count;
    if (!record.error.empty()) j["error"] = record.error;
    return j.dump();
}

CaptionRecord caption_record_from_json(const std::string& line) {
    const json j = json::parse(line);
    CaptionRecord record;
    record.sample_id = j.at("sample_id").get<std::string>();
    record.taxon_key = j.at("taxon_key").get<std::string>();
    record.caption = j.at("caption").get<std::string>();
    record.used_wiki = j.at("used_wiki").get<bool>();
    record.used_examples = j.at("used_examples").get<bool>();
    record.example_fallback = j.at("example_fallback").get<bool>();
    for (const auto& name : j.at("flags")) {
        const auto flag = flag_from_name(name.get<std::string>());
        if (flag) record.flags.insert(*flag);
    }
    record.model = j.at("model").get<std::string>();
    record.temperature = j.at("temperature").get<double>();
    record.top_p = j.at("top_p").get<double>();
    record.attempt_count = j.at("attempt_count").get<int>();
    record.error = j.value("error", "");
    return record;
}

namespace {

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

std::size_t read_resume_state(const std::string& output_path, std::uint64_t manifest_hash) {
    std::ifstream resume_in(output_path + ".resume.json");
    if (!resume_in) return 0;
    json state;
    try {
        state = json::parse(resume_in);
    } catch (const json::exception&) {
        return 0;
    }
    if (state.value("manifest_hash", std::string()) != std::to_string(manifest_hash)) {
        return 0;  // different manifest, start over
    }
    const auto completed = state.value("completed", std::size_t{0});
    // Trust only records actually present in the output file.
    std::ifstream out_in(output_path, std::ios::binary);
    if (!out_in) return 0;
    std::size_t lines = 0;
    std::string line;
    while (lines < completed && std::getline(out_in, line)) ++lines;
    return lines;
}

void write_resume_state(const std::string& output_path, std::uint64_t manifest_hash,
                        std::size_t completed) {
    json state = {{"completed", completed},
                  {"manifest_hash", std::to_string(manifest_hash)}};
    std::ofstream out(output_path + ".resume.json", std::ios::trunc);
    out << state.dump() << "\n";
}

// Keeps the first `lines` lines of the file, byte-for-byte.
void truncate_to_lines(const std::string& path, std::size_t lines) {
    std::ifstream in(path, std::ios::binary);
    std::string kept;
    std::string line;
    std::size_t n = 0;
    while (n < lines && std::getline(in, line)) {
        kept += line;
        kept.push_back('\n');
        ++n;
    }
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << kept;
}

}  // namespace

RunResult run_pipeline(const std::string& manifest_path, const std::string& output_path,
                       const Stores& stores, llm::Gateway& gateway,
                       const PipelineConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    const auto manifest = taxa::load_manifest(manifest_path, config.manifest_delimiter);
    if (!manifest.errors.empty()) {
        throw std::runtime_error("manifest has " + std::to_string(manifest.errors.size()) +
                                 " bad lines; first: " + manifest.errors.front());
    }
    const std::uint64_t manifest_hash = fnv1a_file(manifest_path);

    std::size_t start_index = 0;
    if (config.resume) {
        start_index = read_resume_state(output_path, manifest_hash);
        start_index = std::min(start_index, manifest.entries.size());
        truncate_to_lines(output_path, start_index);
    }

    std::ofstream out(output_path,
                      std::ios::binary | (config.resume ? std::ios::app : std::ios::trunc));
    if (!out) throw std::runtime_error("cannot open output: " + output_path);

    RunStats stats;
    stats.total = manifest.entries.size();

    const std::size_t n = manifest.entries.size();
    std::mutex mutex;
    std::condition_variable cv;
    std::map<std::size_t, CaptionRecord> finished;
    std::atomic<std::size_t> next_index{start_index};
    std::size_t write_cursor = start_index;

    const int workers = static_cast<int>(std::min<std::size_t>(
        static_cast<std::size_t>(std::max(config.concurrency, 1)), n ? n : 1));

    auto process_one = [&](std::size_t i) {
        const auto& entry = manifest.entries[i];
        CaptionRecord record;
        try {
            const GenerationContext context = build_context(entry, stores, config.word_limit);
            record = generate_caption(context, gateway);
        } catch (const std::exception& e) {
            record.flags = {CaptionFlag::empty, CaptionFlag::missing_species_name};
            record.error = e.what();
            record.model = gateway.config().model;
            record.used_examples = false;
            record.attempt_count = 0;
        }
        record.sample_id = entry.sample_id;
        record.taxon_key = deepest_taxon_key(entry.taxon);
        return record;
    };

    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const std::size_t i = next_index.fetch_add(1);
                if (i >= n) return;
                CaptionRecord record = process_one(i);
                {
                    std::lock_guard lock(mutex);
                    finished.emplace(i, std::move(record));
                }
                cv.notify_one();
            }
        });
    }

    // Writer: emit the contiguous prefix as it completes so an aborted run
    // leaves a resumable file behind.
    {
        std::unique_lock lock(mutex);
        while (write_cursor < n) {
            cv.wait(lock, [&] { return finished.count(write_cursor) > 0; });
            while (finished.count(write_cursor)) {
                const CaptionRecord& record = finished.at(write_cursor);
                out << caption_record_to_json(record) << "\n";
                out.flush();
                if (record.flags.count(CaptionFlag::over_word_limit)) ++stats.over_word_limit;
                if (record.flags.count(CaptionFlag::missing_species_name)) {
                    ++stats.missing_species_name;
                }
                if (record.flags.count(CaptionFlag::empty)) ++stats.empty;
                if (record.used_wiki) ++stats.used_wiki;
                if (record.example_fallback) ++stats.example_fallback;
                if (!record.error.empty()) ++stats.gateway_errors;
                finished.erase(write_cursor);
                ++write_cursor;
                write_resume_state(output_path, manifest_hash, write_cursor);
            }
        }
    }
    for (auto& t : pool) t.join();

    // Stats describe the whole output file, including any resumed prefix.
    if (start_index > 0) {
        stats = RunStats{};
        stats.total = n;
        std::ifstream in(output_path, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            const CaptionRecord record = caption_record_from_json(line);
            if (record.flags.count(CaptionFlag::over_word_limit)) ++stats.over_word_limit;
            if (record.flags.count(CaptionFlag::missing_species_name)) {
                ++stats.missing_species_name;
            }
            if (record.flags.count(CaptionFlag::empty)) ++stats.empty;
            if (record.used_wiki) ++stats.used_wiki;
            if (record.example_fallback) ++stats.example_fallback;
            if (!record.error.empty()) ++stats.gateway_errors;
        }
    }

    if (stats.total > 0) {
        stats.wiki_rate = static_cast<double>(stats.used_wiki) /
                          static_cast<double>(stats.total);
        stats.fallback_rate = static_cast<double>(stats.example_fallback) /
                              static_cast<double>(stats.total);
    }
    stats.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    return {output_path, stats};
}

}  // namespace taxocap::pipeline
