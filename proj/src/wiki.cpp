#include "taxocap/wiki.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace taxocap::wiki {

using json = nlohmann::json;

namespace {

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

const char* source_name(DescriptionSource s) {
    switch (s) {
        case DescriptionSource::species_page: return "species_page";
        case DescriptionSource::genus_fallback: return "genus_fallback";
        case DescriptionSource::genus_direct: return "genus_direct";
    }
    return "?";
}

std::optional<DescriptionSource> source_from_name(const std::string& name) {
    if (name == "species_page") return DescriptionSource::species_page;
    if (name == "genus_fallback") return DescriptionSource::genus_fallback;
    if (name == "genus_direct") return DescriptionSource::genus_direct;
    return std::nullopt;
}

FixtureBackend::FixtureBackend(std::string root) : root_(std::move(root)) {}

std::string FixtureBackend::title_to_dir(const std::string& title) {
    std::string dir;
    for (char c : title) {
        if (c == ' ') {
            dir.push_back('_');
        } else if (c == '/') {
            dir += "%2F";
        } else {
            dir.push_back(c);
        }
    }
    return dir;
}

std::optional<PageResponse> FixtureBackend::get(const std::string& title) {
    const std::string dir = root_ + "/" + title_to_dir(title);
    std::ifstream meta_in(dir + "/meta.json");
    if (!meta_in) return std::nullopt;  // unrecorded title = missing page
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::exception& e) {
        throw WikiError("bad fixture meta for \"" + title + "\": " + e.what());
    }
    PageResponse response;
    response.status = meta.value("status", 200);
    response.fetched_at = meta.value("fetched_at", "");
    response.source_url = meta.value("source_url", "fixture://" + dir);
    if (meta.contains("redirect")) response.redirect = meta["redirect"].get<std::string>();
    if (response.status == 404) {
        response.missing = true;
        return response;
    }
    if (response.status != 200) {
        throw WikiError("fixture for \"" + title + "\" records HTTP " +
                        std::to_string(response.status));
    }
    std::ifstream body_in(dir + "/response.json");
    if (!body_in) throw WikiError("fixture for \"" + title + "\" has no response.json");
    json body;
    try {
        body = json::parse(body_in);
    } catch (const json::exception& e) {
        throw WikiError("bad fixture body for \"" + title + "\": " + e.what());
    }
    response.title = body.value("title", title);
    response.wikitext = body.value("wikitext", "");
    return response;
}

std::vector<std::pair<std::string, std::string>> split_sections(const std::string& wikitext) {
    std::vector<std::pair<std::string, std::string>> sections;
    std::istringstream in(wikitext);
    std::string line;
    std::string heading;
    std::string body;
    bool in_section = false;
    auto flush = [&]() {
        if (in_section) sections.emplace_back(heading, trim(body));
        body.clear();
    };
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.size() >= 4 && t.front() == '=' && t.back() == '=') {
            std::size_t level = 0;
            while (level < t.size() && t[level] == '=') ++level;
            std::size_t tail = 0;
            while (tail < t.size() && t[t.size() - 1 - tail] == '=') ++tail;
            if (level >= 2 && tail >= 2 && level + tail < t.size()) {
                const std::string head = trim(t.substr(level, t.size() - level - tail));
                if (!head.empty()) {
                    flush();
                    heading = head;
                    in_section = true;
                    continue;
                }
            }
        }
        if (in_section) {
            body += line;
            body.push_back('\n');
        }
    }
    flush();
    return sections;
}

namespace {

// Template parameter names the taxobox family of infoboxes uses.
const std::map<std::string, std::string>& taxobox_param_ranks() {
    static const std::map<std::string, std::string> ranks = {
        {"regnum", "kingdom"}, {"kingdom", "kingdom"}, {"phylum", "phylum"},
        {"classis", "class"},  {"class", "class"},     {"ordo", "order"},
        {"order", "order"},    {"familia", "family"},  {"family", "family"},
        {"genus", "genus"},    {"species", "species"},
    };
    return ranks;
}

std::string strip_wiki_markup(std::string text) {
    // [[A|B]] -> B, [[A]] -> A, drop quotes/emphasis.
    std::string out;
    for (std::size_t i = 0; i < text.size();) {
        if (text.compare(i, 2, "[[") == 0) {
            const auto close = text.find("]]", i + 2);
            if (close == std::string::npos) break;
            std::string inner = text.substr(i + 2, close - i - 2);
            const auto pipe = inner.find('|');
            if (pipe != std::string::npos) inner = inner.substr(pipe + 1);
            out += inner;
            i = close + 2;
        } else if (text[i] == '\'') {
            ++i;
        } else {
            out.push_back(text[i]);
            ++i;
        }
    }
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_taxobox(const std::string& wikitext,
                                                 bool* from_infobox) {
    std::map<std::string, std::string> ranks;
    if (from_infobox) *from_infobox = true;

    // Find a {{Speciesbox ...}}, {{Taxobox ...}} or {{Automatic taxobox ...}}
    // and scan its |param = value lines.
    static const std::vector<std::string> kBoxNames = {"{{speciesbox", "{{taxobox",
                                                       "{{automatic taxobox"};
    const std::string lowered = to_lower(wikitext);
    std::size_t box_start = std::string::npos;
    for (const auto& name : kBoxNames) {
        const auto pos = lowered.find(name);
        if (pos != std::string::npos && (box_start == std::string::npos || pos < box_start)) {
            box_start = pos;
        }
    }
    if (box_start != std::string::npos) {
        // Walk to the matching closing braces.
        int depth = 0;
        std::size_t end = box_start;
        for (std::size_t i = box_start; i + 1 < wikitext.size(); ++i) {
            if (wikitext.compare(i, 2, "{{") == 0) {
                depth += 1;
                ++i;
            } else if (wikitext.compare(i, 2, "}}") == 0) {
                depth -= 1;
                ++i;
                if (depth == 0) {
                    end = i + 1;
                    break;
                }
            }
        }
        const std::string box = wikitext.substr(box_start, end - box_start);
        std::istringstream in(box);
        std::string line;
        while (std::getline(in, line)) {
            const auto bar = line.find('|');
            if (bar == std::string::npos) continue;
            const auto eq = line.find('=', bar);
            if (eq == std::string::npos) continue;
            const std::string key = to_lower(trim(line.substr(bar + 1, eq - bar - 1)));
            const auto it = taxobox_param_ranks().find(key);
            if (it == taxobox_param_ranks().end()) continue;
            const std::string value = trim(strip_wiki_markup(trim(line.substr(eq + 1))));
            if (!value.empty()) ranks[it->second] = value;
        }
        if (!ranks.empty()) return ranks;
    }

    // Page-text fallback: lines like "Family: Canidae".
    if (from_infobox) *from_infobox = false;
    static const std::vector<std::pair<std::string, std::string>> kScanRanks = {
        {"kingdom:", "kingdom"}, {"phylum:", "phylum"}, {"class:", "class"},
        {"order:", "order"},     {"family:", "family"}, {"genus:", "genus"},
        {"species:", "species"},
    };
    std::istringstream in(wikitext);
    std::string line;
    while (std::getline(in, line)) {
        const std::string lower_line = to_lower(line);
        for (const auto& [prefix, rank] : kScanRanks) {
            const auto pos = lower_line.find(prefix);
            if (pos == std::string::npos) continue;
            const std::string value =
                trim(strip_wiki_markup(trim(line.substr(pos + prefix.size()))));
            if (!value.empty() && ranks.find(rank) == ranks.end()) {
                // First word only; scan lines often carry trailing prose.
                const auto space = value.find(' ');
                ranks[rank] = rank == "species" ? value : value.substr(0, space);
            }
        }
    }
    return ranks;
}

std::optional<RawPage> fetch_page(const std::string& title, PageBackend& backend) {
    if (trim(title).empty()) throw WikiError("empty page title");
    auto response = backend.get(title);
    if (!response || response->missing) return std::nullopt;

    std::optional<std::string> redirected_from;
    std::optional<std::string> target = response->redirect;
    if (!target) {
        const std::string t = trim(response->wikitext);
        if (to_lower(t).rfind("#redirect", 0) == 0) {
            const auto open = t.find("[[");
            const auto close = t.find("]]");
            if (open != std::string::npos && close != std::string::npos && close > open) {
                target = trim(t.substr(open + 2, close - open - 2));
            }
        }
    }
    if (target) {
        redirected_from = title;
        response = backend.get(*target);
        if (!response || response->missing) return std::nullopt;
        // One hop only; a redirect to another redirect is rejected.
        if (response->redirect) return std::nullopt;
        const std::string t = trim(response->wikitext);
        if (to_lower(t).rfind("#redirect", 0) == 0) return std::nullopt;
    }

    RawPage page;
    page.title = response->title.empty() ? (target ? *target : title) : response->title;
    page.sections = split_sections(response->wikitext);
    page.taxobox_ranks = parse_taxobox(response->wikitext, &page.taxobox_from_infobox);
    page.fetched_at = response->fetched_at;
    page.source_url = response->source_url;
    page.redirected_from = redirected_from;
    return page;
}

const std::vector<std::string>& section_whitelist() {
    static const std::vector<std::string> keywords = {
        "description",     "morphology", "appearance",      "identification",
        "feature",         "characteristics", "physical",   "structure",
        "explanation of names",
    };
    return keywords;
}

std::vector<std::pair<std::string, std::string>> candidate_sections(const RawPage& page) {
    std::vector<std::pair<std::string, std::string>> kept;
    for (const auto& [heading, body] : page.sections) {
        if (trim(body).empty()) continue;
        const std::string lower = to_lower(heading);
        for (const auto& keyword : section_whitelist()) {
            if (lower.find(keyword) != std::string::npos) {
                kept.emplace_back(heading, body);
                break;  // emit once even when several keywords match
            }
        }
    }
    return kept;
}

namespace {

// Species fields appear as "pictus", "L. pictus" or "Lycaon pictus"; the
// epithet is the last whitespace-separated token in every form.
std::string normalize_species_token(const std::string& token) {
    const std::string t = trim(token);
    const auto space = t.find_last_of(' ');
    return space == std::string::npos ? t : t.substr(space + 1);
}

}  // namespace

Verdict validate_taxonomy_page(const RawPage& page, const taxa::TaxonRecord& taxon,
                               int min_matching_ranks) {
    if (!taxon.genus) throw WikiError("taxon must have at least a genus");
    if (page.taxobox_ranks.empty()) return {false, "no taxobox"};

    int matches = 0;
    for (taxa::Rank rank : taxa::kAllRanks) {
        const auto& token = taxon.rank_token(rank);
        if (!token) continue;
        const auto it = page.taxobox_ranks.find(taxa::rank_name(rank));
        if (it == page.taxobox_ranks.end()) continue;
        std::string page_token = it->second;
        std::string record_token = *token;
        if (rank == taxa::Rank::species) {
            page_token = normalize_species_token(page_token);
            record_token = normalize_species_token(record_token);
        }
        if (to_lower(trim(page_token)) == to_lower(trim(record_token))) {
            ++matches;
        } else {
            return {false, std::string(taxa::rank_name(rank)) + " mismatch: page has \"" +
                               it->second + "\", record has \"" + *token + "\""};
        }
    }
    if (matches < min_matching_ranks) {
        return {false, "only " + std::to_string(matches) + " matching ranks (need " +
                           std::to_string(min_matching_ranks) + ")"};
    }
    Verdict verdict{true, ""};
    if (!page.taxobox_from_infobox) {
        verdict.reason = "ranks read by page-text scan, not infobox";
    }
    return verdict;
}

namespace {

std::vector<std::string> split_paragraphs(const std::string& body) {
    std::vector<std::string> paragraphs;
    std::string current;
    std::istringstream in(body);
    std::string line;
    auto flush = [&]() {
        const std::string t = trim(current);
        if (!t.empty()) paragraphs.push_back(t);
        current.clear();
    };
    while (std::getline(in, line)) {
        if (trim(line).empty()) {
            flush();
        } else {
            if (!current.empty()) current.push_back(' ');
            current += trim(line);
        }
    }
    flush();
    return paragraphs;
}

std::optional<DescriptionCandidate> try_page(const std::string& title,
                                             const taxa::TaxonRecord& taxon,
                                             DescriptionSource source, PageBackend& backend,
                                             const ResolveOptions& options) {
    const auto page = fetch_page(title, backend);
    if (!page) return std::nullopt;
    if (!validate_taxonomy_page(*page, taxon, options.min_matching_ranks).accepted) {
        return std::nullopt;
    }
    const auto sections = candidate_sections(*page);
    if (sections.empty()) return std::nullopt;
    DescriptionCandidate candidate;
    candidate.taxon = taxon;
    candidate.source = source;
    candidate.page_title = page->title;
    for (const auto& [heading, body] : sections) {
        for (auto& paragraph : split_paragraphs(body)) {
            candidate.paragraphs.push_back(std::move(paragraph));
        }
    }
    if (candidate.paragraphs.empty()) return std::nullopt;
    return candidate;
}

}  // namespace

std::optional<DescriptionCandidate> resolve_description_source(
    const taxa::TaxonRecord& taxon, PageBackend& backend, const ResolveOptions& options) {
    if (!taxon.genus) throw WikiError("taxon must have at least a genus");
    if (taxon.species) {
        if (auto candidate = try_page(taxon.scientific_name, taxon,
                                      DescriptionSource::species_page, backend, options)) {
            return candidate;
        }
        return try_page(*taxon.genus, taxon, DescriptionSource::genus_fallback, backend,
                        options);
    }
    return try_page(*taxon.genus, taxon, DescriptionSource::genus_direct, backend, options);
}

std::vector<ResolveOutcome> resolve_many(const std::vector<taxa::TaxonRecord>& taxa_list,
                                         PageBackend& backend, int max_in_flight,
                                         const ResolveOptions& options) {
    if (max_in_flight < 1) throw WikiError("max_in_flight must be >= 1");
    std::vector<ResolveOutcome> outcomes(taxa_list.size());
    std::atomic<std::size_t> next{0};
    const int workers = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), taxa_list.size()));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= taxa_list.size()) return;
                try {
                    outcomes[i].candidate =
                        resolve_description_source(taxa_list[i], backend, options);
                } catch (const std::exception& e) {
                    outcomes[i].error = e.what();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    return outcomes;
}

}  // namespace taxocap::wiki
