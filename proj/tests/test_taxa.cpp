#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "taxocap/taxa.hpp"

using namespace taxocap;
using taxa::Rank;
using taxa::TaxonRecord;

namespace {

// Independent nested-loop coverage oracle. Works on token vectors only and
// never calls rank_key/coverage_report internals.
struct OracleReport {
    // per rank (order, family, genus, species)
    std::array<std::uint64_t, 4> covered_taxa{}, total_taxa{};
    std::array<std::uint64_t, 4> covered_samples{}, total_samples{};
};

std::vector<std::string> split_key(const std::string& key) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : key) {
        if (c == '/') {
            tokens.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    tokens.push_back(current);
    return tokens;
}

std::vector<std::string> record_tokens(const TaxonRecord& rec) {
    std::vector<std::string> tokens;
    for (Rank r : taxa::kAllRanks) {
        const auto& t = rec.rank_token(r);
        if (!t) break;  // path stops at the first gap
        tokens.push_back(*t);
    }
    // A later token after a gap does not extend the path.
    return tokens;
}

OracleReport oracle_coverage(const std::vector<TaxonRecord>& manifest,
                             const std::vector<std::string>& covered_ids) {
    std::vector<std::vector<std::string>> covered_tokens;
    for (const auto& id : covered_ids) covered_tokens.push_back(split_key(id));

    const std::array<std::size_t, 4> depth = {4, 5, 6, 7};  // order..species
    OracleReport report;
    for (std::size_t ri = 0; ri < 4; ++ri) {
        const std::size_t m = depth[ri];
        std::vector<std::vector<std::string>> taxa_seen;
        std::vector<bool> taxa_covered;
        for (const auto& rec : manifest) {
            const auto tokens = record_tokens(rec);
            report.total_samples[ri] += 1;
            if (tokens.size() < m) continue;  // absent key: uncovered sample
            const std::vector<std::string> key(tokens.begin(), tokens.begin() + m);
            bool covered = false;
            for (const auto& cov : covered_tokens) {
                if (cov.size() != 6 && cov.size() != 7) continue;
                if (m == 7 && cov.size() != 7) continue;  // species rank: species ids only
                if (cov.size() < m) continue;
                bool prefix = true;
                for (std::size_t t = 0; t < m; ++t) {
                    if (cov[t] != key[t]) {
                        prefix = false;
                        break;
                    }
                }
                if (prefix) {
                    covered = true;
                    break;
                }
            }
            if (covered) report.covered_samples[ri] += 1;
            bool seen = false;
            for (std::size_t t = 0; t < taxa_seen.size(); ++t) {
                if (taxa_seen[t] == key) {
                    seen = true;
                    if (covered) taxa_covered[t] = true;
                    break;
                }
            }
            if (!seen) {
                taxa_seen.push_back(key);
                taxa_covered.push_back(covered);
            }
        }
        report.total_taxa[ri] = taxa_seen.size();
        for (bool c : taxa_covered) {
            if (c) report.covered_taxa[ri] += 1;
        }
    }
    return report;
}

TaxonRecord make_record(const std::vector<std::string>& tokens) {
    TaxonRecord rec;
    const std::array<std::optional<std::string> TaxonRecord::*, 7> fields = {
        &TaxonRecord::kingdom, &TaxonRecord::phylum, &TaxonRecord::class_name,
        &TaxonRecord::order,   &TaxonRecord::family, &TaxonRecord::genus,
        &TaxonRecord::species};
    for (std::size_t i = 0; i < tokens.size() && i < 7; ++i) {
        if (!tokens[i].empty()) rec.*fields[i] = tokens[i];
    }
    if (rec.species && rec.genus) {
        rec.scientific_name = *rec.genus + " " + *rec.species;
    } else if (rec.genus) {
        rec.scientific_name = *rec.genus;
    }
    return rec;
}

}  // namespace

TEST_CASE("parse_taxonomy maps fields and builds the scientific name") {
    const auto rec = taxa::parse_taxonomy(
        "Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|calliope");
    CHECK(rec.kingdom == "Animalia");
    CHECK(rec.species == "calliope");
    CHECK(rec.scientific_name == "Selasphorus calliope");

    const auto genus_only = taxa::parse_taxonomy("Animalia|||||Selasphorus|");
    CHECK(genus_only.scientific_name == "Selasphorus");
    CHECK_FALSE(genus_only.species.has_value());
}

TEST_CASE("parse_taxonomy rejects degenerate lines") {
    CHECK_THROWS_AS(taxa::parse_taxonomy("||||||"), taxa::ParseError);          // all empty
    CHECK_THROWS_AS(taxa::parse_taxonomy("a|b|c|d|e|f"), taxa::ParseError);     // 6 fields
    CHECK_THROWS_AS(taxa::parse_taxonomy("a|b|c|d|e|f|g|h"), taxa::ParseError); // 8 fields
    CHECK_THROWS_AS(taxa::parse_taxonomy("Animalia||||||calliope"), taxa::ParseError);
}

TEST_CASE("parse_taxonomy trims tokens") {
    const auto rec = taxa::parse_taxonomy(" Animalia | Chordata |Aves|X|Y| Selasphorus | calliope ");
    CHECK(rec.kingdom == "Animalia");
    CHECK(rec.scientific_name == "Selasphorus calliope");
}

TEST_CASE("rank_key concatenates the full path and is absent across gaps") {
    const auto rec = taxa::parse_taxonomy(
        "Animalia|Chordata|Aves|Apodiformes|Trochilidae|Selasphorus|calliope");
    CHECK(taxa::rank_key(rec, Rank::genus) ==
          "Animalia/Chordata/Aves/Apodiformes/Trochilidae/Selasphorus");
    CHECK(taxa::rank_key(rec, Rank::species) ==
          "Animalia/Chordata/Aves/Apodiformes/Trochilidae/Selasphorus/calliope");

    auto gappy = rec;
    gappy.family.reset();
    CHECK_FALSE(taxa::rank_key(gappy, Rank::family).has_value());
    CHECK_FALSE(taxa::rank_key(gappy, Rank::genus).has_value());   // gap on the path
    CHECK(taxa::rank_key(gappy, Rank::order).has_value());         // above the gap
}

TEST_CASE("rank_key distinguishes homonymous genera across kingdoms") {
    const auto a = taxa::parse_taxonomy("Animalia|P1|C1|O1|F1|Morus|bassanus");
    const auto b = taxa::parse_taxonomy("Plantae|P2|C2|O2|F2|Morus|alba");
    CHECK(taxa::rank_key(a, Rank::genus) != taxa::rank_key(b, Rank::genus));
}

TEST_CASE("coverage: three species across two genera") {
    // Genus G1 holds species a and b; genus G2 holds species c. Covering
    // only a gives species ratio 1/3 and genus ratio 1/2.
    std::vector<TaxonRecord> manifest = {
        make_record({"K", "P", "C", "O", "F", "G1", "a"}),
        make_record({"K", "P", "C", "O", "F", "G1", "b"}),
        make_record({"K", "P", "C", "O", "F", "G2", "c"}),
    };
    const std::unordered_set<std::string> covered = {"K/P/C/O/F/G1/a"};
    const auto report = taxa::coverage_report(manifest, covered);
    CHECK(report.at(Rank::species).taxa_ratio == doctest::Approx(1.0 / 3.0));
    CHECK(report.at(Rank::genus).taxa_ratio == doctest::Approx(0.5));
    CHECK(report.at(Rank::family).taxa_ratio == doctest::Approx(1.0));
    CHECK(report.at(Rank::order).covered_taxa == 1);
    CHECK(report.at(Rank::species).covered_samples == 1);
    CHECK(report.at(Rank::genus).covered_samples == 2);
}

TEST_CASE("coverage: genus-level identifiers cover coarser ranks but not species") {
    std::vector<TaxonRecord> manifest = {
        make_record({"K", "P", "C", "O", "F", "G1", "a"}),
    };
    const std::unordered_set<std::string> covered = {"K/P/C/O/F/G1"};
    const auto report = taxa::coverage_report(manifest, covered);
    CHECK(report.at(Rank::species).covered_taxa == 0);
    CHECK(report.at(Rank::genus).covered_taxa == 1);
    CHECK(report.at(Rank::family).covered_taxa == 1);
    CHECK(report.at(Rank::order).covered_taxa == 1);
}

TEST_CASE("coverage: empty covered set gives all-zero ratios") {
    std::vector<TaxonRecord> manifest = {
        make_record({"K", "P", "C", "O", "F", "G", "s"}),
    };
    const auto report = taxa::coverage_report(manifest, {});
    for (Rank r : taxa::kCoverageRanks) {
        CHECK(report.at(r).taxa_ratio == 0.0);
        CHECK(report.at(r).sample_ratio == 0.0);
    }
}

TEST_CASE("coverage matches the nested-loop oracle on random manifests") {
    std::mt19937 rng(12345);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 200);
        std::vector<TaxonRecord> manifest;
        std::vector<std::string> species_keys, genus_keys;
        for (int i = 0; i < n; ++i) {
            std::vector<std::string> tokens;
            for (int d = 0; d < 7; ++d) {
                // Small vocabulary forces key collisions; occasional gaps.
                if (rng() % 10 == 0) {
                    tokens.push_back("");
                } else {
                    tokens.push_back("t" + std::to_string(d) + "_" +
                                     std::to_string(rng() % 3));
                }
            }
            manifest.push_back(make_record(tokens));
            bool full = true;
            for (const auto& t : tokens) {
                if (t.empty()) full = false;
            }
            if (full) {
                std::string key;
                for (int d = 0; d < 7; ++d) key += (d ? "/" : "") + tokens[d];
                species_keys.push_back(key);
                genus_keys.push_back(key.substr(0, key.rfind('/')));
            }
        }
        std::vector<std::string> covered_ids;
        std::unordered_set<std::string> covered_set;
        for (const auto& key : species_keys) {
            if (rng() % 4 == 0) {
                covered_ids.push_back(key);
                covered_set.insert(key);
            }
        }
        for (const auto& key : genus_keys) {
            if (rng() % 6 == 0) {
                covered_ids.push_back(key);
                covered_set.insert(key);
            }
        }

        const auto report = taxa::coverage_report(manifest, covered_set);
        const auto oracle = oracle_coverage(manifest, covered_ids);
        for (std::size_t ri = 0; ri < 4; ++ri) {
            const auto& rc = report.ranks[ri];
            CHECK(rc.covered_taxa == oracle.covered_taxa[ri]);
            CHECK(rc.total_taxa == oracle.total_taxa[ri]);
            CHECK(rc.covered_samples == oracle.covered_samples[ri]);
            CHECK(rc.total_samples == oracle.total_samples[ri]);
        }
        // Monotonicity: order >= family >= genus >= species on sample ratios.
        CHECK(report.ranks[0].sample_ratio >= report.ranks[1].sample_ratio);
        CHECK(report.ranks[1].sample_ratio >= report.ranks[2].sample_ratio);
        CHECK(report.ranks[2].sample_ratio >= report.ranks[3].sample_ratio);
    }
}

TEST_CASE("ratio formatting truncates to one decimal") {
    CHECK(taxa::format_ratio_percent(1137, 1486) == "76.5%");
    CHECK(taxa::format_ratio_percent(122243, 406293) == "30.0%");
    CHECK(taxa::format_ratio_percent(0, 10) == "0.0%");
    CHECK(taxa::format_ratio_percent(10, 10) == "100.0%");
    CHECK(taxa::format_ratio_percent(0, 0) == "0.0%");
    CHECK(taxa::format_with_commas(9533174) == "9,533,174");
    CHECK(taxa::format_with_commas(42) == "42");
}

TEST_CASE("manifest lines carry sample id and optional common name and image ref") {
    const auto entry =
        taxa::parse_manifest_line("Animalia|Chordata|Aves|O|F|Gallus|gallus|img1|Junglefowl");
    CHECK(entry.sample_id == "img1");
    CHECK(entry.taxon.common_name == "Junglefowl");
    CHECK(entry.image_ref == "img1");  // defaults to the sample id

    const auto with_ref = taxa::parse_manifest_line("A|B|C|D|E|F|g|s9||/data/s9.jpg");
    CHECK(with_ref.image_ref == "/data/s9.jpg");
    CHECK_FALSE(with_ref.taxon.common_name.has_value());

    CHECK_THROWS_AS(taxa::parse_manifest_line("A|B|C|D|E|F|g"), taxa::ParseError);
    CHECK_THROWS_AS(taxa::parse_manifest_line("A|B|C|D|E|F|g|"), taxa::ParseError);
}
