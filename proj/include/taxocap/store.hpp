#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "taxocap/taxa.hpp"
#include "taxocap/wiki.hpp"

namespace taxocap::store {

struct VisualDescription {
    std::string taxon_key;  // full-path identifier
    taxa::Rank rank = taxa::Rank::species;  // species or genus
    wiki::DescriptionSource source = wiki::DescriptionSource::species_page;
    std::string text;
    std::string page_title;
};

struct LoadReport {
    std::vector<std::string> errors;  // "line N: message"
    std::size_t duplicates_dropped = 0;
};

// Persistence is JSON Lines; duplicates keep the first record seen.
std::size_t save_descriptions(const std::vector<VisualDescription>& records,
                              const std::string& path);
std::vector<VisualDescription> load_descriptions(const std::string& path,
                                                 LoadReport* report = nullptr);

struct SourceTally {
    std::uint64_t species_page = 0;
    std::uint64_t genus_fallback = 0;
    std::uint64_t genus_direct = 0;

    std::uint64_t species_level() const { return species_page + genus_fallback; }
    std::uint64_t total() const { return species_page + genus_fallback + genus_direct; }
};

class DescriptionStore {
public:
    DescriptionStore() = default;
    explicit DescriptionStore(std::vector<VisualDescription> records);
    static DescriptionStore load(const std::string& path, LoadReport* report = nullptr);

    // Species-key match preferred, genus-key match second, else absent.
    std::optional<VisualDescription> lookup(const taxa::TaxonRecord& taxon) const;

    SourceTally source_tally() const;
    std::size_t size() const { return records_.size(); }
    const std::vector<VisualDescription>& records() const { return records_; }

    // All keys, for coverage accounting.
    std::vector<std::string> keys() const;

private:
    std::vector<VisualDescription> records_;
    std::unordered_map<std::string, std::size_t> by_key_;
};

struct FormatExampleSet {
    std::string class_name;
    std::vector<std::string> examples;  // 1..3 entries, each <= 35 words
};

struct ExampleLookup {
    std::vector<std::string> examples;
    bool fallback = false;  // true when the generic set was substituted
};

class ExampleStore {
public:
    ExampleStore() = default;
    explicit ExampleStore(std::vector<FormatExampleSet> sets);
    static ExampleStore load(const std::string& path, LoadReport* report = nullptr);

    // Unknown classes get the generic cross-kingdom fallback set.
    ExampleLookup lookup(const std::string& taxonomic_class) const;

    std::size_t size() const { return by_class_.size(); }

    static const std::vector<std::string>& generic_fallback();

private:
    std::unordered_map<std::string, std::vector<std::string>> by_class_;
};

std::size_t save_examples(const std::vector<FormatExampleSet>& sets, const std::string& path);

std::size_t count_words(const std::string& text);

}  // namespace taxocap::store
