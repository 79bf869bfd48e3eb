#include "taxocap/taxa.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace taxocap::taxa {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& line, char delimiter) {
    std::vector<std::string> fields;
    std::string current;
    for (char c : line) {
        if (c == delimiter) {
            fields.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    fields.push_back(current);
    return fields;
}

std::optional<std::string> to_token(const std::string& raw) {
    std::string t = trim(raw);
    if (t.empty()) return std::nullopt;
    return t;
}

}  // namespace

const char* rank_name(Rank r) {
    switch (r) {
        case Rank::kingdom: return "kingdom";
        case Rank::phylum: return "phylum";
        case Rank::class_rank: return "class";
        case Rank::order: return "order";
        case Rank::family: return "family";
        case Rank::genus: return "genus";
        case Rank::species: return "species";
    }
    return "?";
}

std::optional<Rank> rank_from_name(const std::string& name) {
    for (Rank r : kAllRanks) {
        if (name == rank_name(r)) return r;
    }
    return std::nullopt;
}

const std::optional<std::string>& TaxonRecord::rank_token(Rank r) const {
    switch (r) {
        case Rank::kingdom: return kingdom;
        case Rank::phylum: return phylum;
        case Rank::class_rank: return class_name;
        case Rank::order: return order;
        case Rank::family: return family;
        case Rank::genus: return genus;
        case Rank::species: return species;
    }
    return kingdom;  // unreachable
}

TaxonRecord parse_taxonomy(const std::string& line, char delimiter) {
    const auto fields = split(line, delimiter);
    if (fields.size() != 7) {
        throw ParseError("expected 7 rank fields, got " + std::to_string(fields.size()));
    }
    TaxonRecord rec;
    rec.kingdom = to_token(fields[0]);
    rec.phylum = to_token(fields[1]);
    rec.class_name = to_token(fields[2]);
    rec.order = to_token(fields[3]);
    rec.family = to_token(fields[4]);
    rec.genus = to_token(fields[5]);
    rec.species = to_token(fields[6]);

    if (rec.species && !rec.genus) {
        throw ParseError("species \"" + *rec.species + "\" present without genus");
    }
    bool any = false;
    for (Rank r : kAllRanks) {
        if (rec.rank_token(r)) any = true;
    }
    if (!any) throw ParseError("all rank fields empty, no usable label");

    if (rec.species) {
        rec.scientific_name = *rec.genus + " " + *rec.species;
    } else if (rec.genus) {
        rec.scientific_name = *rec.genus;
    }
    return rec;
}

std::optional<std::string> rank_key(const TaxonRecord& record, Rank rank) {
    std::string key;
    for (Rank r : kAllRanks) {
        const auto& token = record.rank_token(r);
        if (!token) return std::nullopt;
        if (r != Rank::kingdom) key.push_back('/');
        key += *token;
        if (r == rank) break;
    }
    return key;
}

const RankCoverage& CoverageReport::at(Rank r) const {
    for (std::size_t i = 0; i < kCoverageRanks.size(); ++i) {
        if (kCoverageRanks[i] == r) return ranks[i];
    }
    throw std::invalid_argument("coverage is reported for order/family/genus/species only");
}

CoverageReport coverage_report(const std::vector<TaxonRecord>& manifest,
                               const std::unordered_set<std::string>& covered) {
    // Expand each covered identifier into the taxon keys it covers. A key with
    // 7 path tokens is species-level and covers its species, genus, family and
    // order prefixes; 6 tokens is genus-level and covers genus, family, order.
    // Token counts per rank: order=4, family=5, genus=6, species=7.
    std::unordered_set<std::string> covered_keys;
    for (const auto& id : covered) {
        std::vector<std::size_t> slash_positions;
        for (std::size_t i = 0; i < id.size(); ++i) {
            if (id[i] == '/') slash_positions.push_back(i);
        }
        const std::size_t tokens = slash_positions.size() + 1;
        if (tokens != 6 && tokens != 7) continue;  // not a genus/species key
        for (std::size_t take = 4; take <= tokens; ++take) {
            if (take == tokens) {
                covered_keys.insert(id);
            } else {
                covered_keys.insert(id.substr(0, slash_positions[take - 1]));
            }
        }
    }
    // Species-rank coverage counts species-level identifiers only; a 6-token
    // entry never lands in the 7-token key set, so membership tests per rank
    // come out right by construction.

    CoverageReport report;
    for (std::size_t ri = 0; ri < kCoverageRanks.size(); ++ri) {
        const Rank rank = kCoverageRanks[ri];
        RankCoverage& rc = report.ranks[ri];
        std::unordered_map<std::string, bool> taxa;  // key -> covered
        rc.total_samples = manifest.size();
        for (const auto& rec : manifest) {
            const auto key = rank_key(rec, rank);
            if (!key) continue;
            const bool is_covered = covered_keys.count(*key) > 0;
            auto [it, inserted] = taxa.emplace(*key, is_covered);
            if (!inserted && is_covered) it->second = true;
            if (is_covered) rc.covered_samples += 1;
        }
        rc.total_taxa = taxa.size();
        for (const auto& [key, is_covered] : taxa) {
            if (is_covered) rc.covered_taxa += 1;
        }
        rc.taxa_ratio = rc.total_taxa == 0
                            ? 0.0
                            : static_cast<double>(rc.covered_taxa) / static_cast<double>(rc.total_taxa);
        rc.sample_ratio = rc.total_samples == 0
                              ? 0.0
                              : static_cast<double>(rc.covered_samples) /
                                    static_cast<double>(rc.total_samples);
    }
    return report;
}

std::string format_ratio_percent(std::uint64_t covered, std::uint64_t total) {
    if (total == 0) return "0.0%";
    // Truncate to one decimal: floor(ratio * 1000) gives permille.
    const std::uint64_t permille = covered * 1000 / total;
    std::ostringstream out;
    out << permille / 10 << "." << permille % 10 << "%";
    return out.str();
}

std::string format_with_commas(std::uint64_t value) {
    std::string digits = std::to_string(value);
    std::string out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count > 0 && count % 3 == 0) out.push_back(',');
        out.push_back(*it);
        ++count;
    }
    std::reverse(out.begin(), out.end());
    return out;
}

ManifestEntry parse_manifest_line(const std::string& line, char delimiter) {
    const auto fields = split(line, delimiter);
    if (fields.size() < 8 || fields.size() > 10) {
        throw ParseError("expected 8-10 fields (7 ranks, sample id, optional common name, "
                         "optional image ref), got " +
                         std::to_string(fields.size()));
    }
    std::string rank_part;
    for (int i = 0; i < 7; ++i) {
        if (i) rank_part.push_back(delimiter);
        rank_part += fields[i];
    }
    ManifestEntry entry;
    entry.taxon = parse_taxonomy(rank_part, delimiter);
    entry.sample_id = fields[7];
    if (entry.sample_id.empty()) throw ParseError("empty sample id");
    if (fields.size() >= 9 && !fields[8].empty()) entry.taxon.common_name = fields[8];
    entry.image_ref = fields.size() >= 10 && !fields[9].empty() ? fields[9] : entry.sample_id;
    return entry;
}

ManifestLoadResult load_manifest(const std::string& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest: " + path);
    ManifestLoadResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            result.entries.push_back(parse_manifest_line(line, delimiter));
        } catch (const ParseError& e) {
            result.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return result;
}

}  // namespace taxocap::taxa
