#include "taxocap/store.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace taxocap::store {

using json = nlohmann::ordered_json;

namespace {

struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void validate_record(const VisualDescription& rec) {
    if (rec.taxon_key.empty()) throw StoreError("empty taxon_key");
    if (rec.text.empty()) throw StoreError("empty text");
    const bool species_level = rec.source == wiki::DescriptionSource::species_page ||
                               rec.source == wiki::DescriptionSource::genus_fallback;
    if (species_level != (rec.rank == taxa::Rank::species)) {
        throw StoreError("rank/source mismatch: rank must be species exactly for "
                         "species_page and genus_fallback records");
    }
    if (rec.rank != taxa::Rank::species && rec.rank != taxa::Rank::genus) {
        throw StoreError("rank must be species or genus");
    }
}

}  // namespace

std::size_t save_descriptions(const std::vector<VisualDescription>& records,
                              const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StoreError("cannot open for writing: " + path);
    for (const auto& rec : records) {
        validate_record(rec);
        json line = {{"taxon_key", rec.taxon_key},
                     {"rank", taxa::rank_name(rec.rank)},
                     {"source", wiki::source_name(rec.source)},
                     {"text", rec.text},
                     {"page_title", rec.page_title}};
        out << line.dump() << "\n";
    }
    if (!out) throw StoreError("write failed: " + path);
    return records.size();
}

std::vector<VisualDescription> load_descriptions(const std::string& path, LoadReport* report) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError("cannot open: " + path);
    std::vector<VisualDescription> records;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            VisualDescription rec;
            rec.taxon_key = j.at("taxon_key").get<std::string>();
            const auto rank = taxa::rank_from_name(j.at("rank").get<std::string>());
            if (!rank) throw StoreError("unknown rank: " + j.at("rank").get<std::string>());
            rec.rank = *rank;
            const auto source = wiki::source_from_name(j.at("source").get<std::string>());
            if (!source) {
                throw StoreError("unknown source: " + j.at("source").get<std::string>());
            }
            rec.source = *source;
            rec.text = j.at("text").get<std::string>();
            rec.page_title = j.value("page_title", "");
            validate_record(rec);
            if (seen.count(rec.taxon_key)) {
                if (report) ++report->duplicates_dropped;
                continue;  // keep-first
            }
            seen.emplace(rec.taxon_key, records.size());
            records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            if (report) {
                report->errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    return records;
}

DescriptionStore::DescriptionStore(std::vector<VisualDescription> records)
    : records_(std::move(records)) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
        by_key_.emplace(records_[i].taxon_key, i);  // emplace keeps the first
    }
}

DescriptionStore DescriptionStore::load(const std::string& path, LoadReport* report) {
    return DescriptionStore(load_descriptions(path, report));
}

std::optional<VisualDescription> DescriptionStore::lookup(
    const taxa::TaxonRecord& taxon) const {
    if (const auto species_key = taxa::rank_key(taxon, taxa::Rank::species)) {
        const auto it = by_key_.find(*species_key);
        if (it != by_key_.end()) return records_[it->second];
    }
    if (const auto genus_key = taxa::rank_key(taxon, taxa::Rank::genus)) {
        const auto it = by_key_.find(*genus_key);
        if (it != by_key_.end()) return records_[it->second];
    }
    return std::nullopt;
}

SourceTally DescriptionStore::source_tally() const {
    SourceTally tally;
    for (const auto& rec : records_) {
        switch (rec.source) {
            case wiki::DescriptionSource::species_page: ++tally.species_page; break;
            case wiki::DescriptionSource::genus_fallback: ++tally.genus_fallback; break;
            case wiki::DescriptionSource::genus_direct: ++tally.genus_direct; break;
        }
    }
    return tally;
}

std::vector<std::string> DescriptionStore::keys() const {
    std::vector<std::string> keys;
    keys.reserve(records_.size());
    for (const auto& rec : records_) keys.push_back(rec.taxon_key);
    return keys;
}

std::size_t count_words(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    std::size_t count = 0;
    while (in >> word) ++count;
    return count;
}

namespace {

void validate_example_set(const FormatExampleSet& set) {
    if (set.class_name.empty()) throw StoreError("empty class_name");
    if (set.examples.empty() || set.examples.size() > 3) {
        throw StoreError("class " + set.class_name + " must carry 1-3 examples, has " +
                         std::to_string(set.examples.size()));
    }
    for (const auto& example : set.examples) {
        const auto words = count_words(example);
        if (words == 0) throw StoreError("class " + set.class_name + " has an empty example");
        if (words > 35) {
            throw StoreError("class " + set.class_name + " example exceeds 35 words (" +
                             std::to_string(words) + ")");
        }
    }
}

}  // namespace

ExampleStore::ExampleStore(std::vector<FormatExampleSet> sets) {
    for (auto& set : sets) {
        validate_example_set(set);
        by_class_.emplace(set.class_name, std::move(set.examples));  // keep-first
    }
}

ExampleStore ExampleStore::load(const std::string& path, LoadReport* report) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError("cannot open: " + path);
    std::vector<FormatExampleSet> sets;
    std::unordered_map<std::string, bool> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            FormatExampleSet set;
            set.class_name = j.at("class_name").get<std::string>();
            set.examples = j.at("examples").get<std::vector<std::string>>();
            validate_example_set(set);
            if (seen.count(set.class_name)) {
                if (report) ++report->duplicates_dropped;
                continue;
            }
            seen.emplace(set.class_name, true);
            sets.push_back(std::move(set));
        } catch (const std::exception& e) {
            if (report) {
                report->errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    return ExampleStore(std::move(sets));
}

const std::vector<std::string>& ExampleStore::generic_fallback() {
    // Synthetic cross-kingdom defaults used when a class has no curated set.
    static const std::vector<std::string> examples = {
        "Perched on a bare twig, the Calliope Hummingbird shows magenta throat streaks "
        "radiating over an iridescent green back and a short, dark tail.",
        "Broad overlapping rosette leaves of Agave americana are blue-gray with sharp "
        "marginal teeth and a stout terminal spine.",
        "The elytra of Coccinella septempunctata are glossy red with seven round black "
        "spots, the pronotum black with two pale patches.",
    };
    return examples;
}

ExampleLookup ExampleStore::lookup(const std::string& taxonomic_class) const {
    const auto it = by_class_.find(taxonomic_class);
    if (it != by_class_.end()) return {it->second, false};
    return {generic_fallback(), true};
}

std::size_t save_examples(const std::vector<FormatExampleSet>& sets, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StoreError("cannot open for writing: " + path);
    for (const auto& set : sets) {
        validate_example_set(set);
        json line = {{"class_name", set.class_name}, {"examples", set.examples}};
        out << line.dump() << "\n";
    }
    return sets.size();
}

}  // namespace taxocap::store
