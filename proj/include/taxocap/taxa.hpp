#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace taxocap::taxa {

enum class Rank { kingdom = 0, phylum, class_rank, order, family, genus, species };

inline constexpr std::array<Rank, 7> kAllRanks = {
    Rank::kingdom, Rank::phylum, Rank::class_rank, Rank::order,
    Rank::family,  Rank::genus,  Rank::species};

// The four ranks coverage statistics are reported at.
inline constexpr std::array<Rank, 4> kCoverageRanks = {
    Rank::order, Rank::family, Rank::genus, Rank::species};

const char* rank_name(Rank r);
std::optional<Rank> rank_from_name(const std::string& name);

// One sample's taxonomic label. Absent ranks are empty optionals; present
// tokens are trimmed and non-empty.
struct TaxonRecord {
    std::optional<std::string> kingdom;
    std::optional<std::string> phylum;
    std::optional<std::string> class_name;
    std::optional<std::string> order;
    std::optional<std::string> family;
    std::optional<std::string> genus;
    std::optional<std::string> species;
    std::string scientific_name;  // "Genus species" when species present, else genus
    std::optional<std::string> common_name;

    const std::optional<std::string>& rank_token(Rank r) const;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parses a 7-field rank line (kingdom|phylum|class|order|family|genus|species).
// Empty fields mean the rank is absent. Throws ParseError on a field-count
// mismatch, on species-without-genus, and when all seven fields are empty.
TaxonRecord parse_taxonomy(const std::string& line, char delimiter = '|');

// Full-path identifier from kingdom down to `rank`, "/"-joined. Absent if any
// token on the path is absent. Full paths rather than bare names: genus names
// collide across kingdoms.
std::optional<std::string> rank_key(const TaxonRecord& record, Rank rank);

struct RankCoverage {
    std::uint64_t covered_taxa = 0;
    std::uint64_t total_taxa = 0;
    double taxa_ratio = 0.0;
    std::uint64_t covered_samples = 0;
    std::uint64_t total_samples = 0;
    double sample_ratio = 0.0;
};

struct CoverageReport {
    // Indexed in kCoverageRanks order: order, family, genus, species.
    std::array<RankCoverage, 4> ranks;

    const RankCoverage& at(Rank r) const;
};

// Coverage of a manifest under a set of species-level (7-token) and
// genus-level (6-token) full-path identifiers. A taxon at rank r is covered
// iff a species-level identifier lies under it; genus-level identifiers cover
// their genus and every coarser rank. Sample coverage uses the full manifest
// size as denominator at every rank (absent rank keys count as uncovered),
// which keeps sample_ratio non-increasing from order to species.
CoverageReport coverage_report(const std::vector<TaxonRecord>& manifest,
                               const std::unordered_set<std::string>& covered);

// Percent with one decimal, truncated (76.51% -> "76.5%", 30.087% -> "30.0%").
std::string format_ratio_percent(std::uint64_t covered, std::uint64_t total);

// "1137" -> "1,137"
std::string format_with_commas(std::uint64_t value);

// One manifest line: 7 rank fields, a sample id, then optional common name
// and image reference.
struct ManifestEntry {
    std::string sample_id;
    TaxonRecord taxon;
    std::string image_ref;
};

ManifestEntry parse_manifest_line(const std::string& line, char delimiter = '|');

struct ManifestLoadResult {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> errors;  // "line N: message"
};

ManifestLoadResult load_manifest(const std::string& path, char delimiter = '|');

}  // namespace taxocap::taxa
