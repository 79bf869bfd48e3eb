#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "taxocap/taxa.hpp"

namespace taxocap::wiki {

struct WikiError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RawPage {
    std::string title;
    std::vector<std::pair<std::string, std::string>> sections;  // (heading, body), page order
    std::map<std::string, std::string> taxobox_ranks;           // rank name -> token
    bool taxobox_from_infobox = true;  // false when ranks came from a page-text scan
    std::string fetched_at;
    std::string source_url;
    std::optional<std::string> redirected_from;
};

enum class DescriptionSource { species_page, genus_fallback, genus_direct };

const char* source_name(DescriptionSource s);
std::optional<DescriptionSource> source_from_name(const std::string& name);

struct DescriptionCandidate {
    taxa::TaxonRecord taxon;
    DescriptionSource source = DescriptionSource::species_page;
    std::vector<std::string> paragraphs;
    std::string page_title;
};

// Raw page payload before parsing; `missing` models a 404/nonexistent title.
struct PageResponse {
    int status = 200;
    bool missing = false;
    std::string wikitext;
    std::string title;
    std::optional<std::string> redirect;  // explicit redirect target
    std::string fetched_at;
    std::string source_url;
};

class PageBackend {
public:
    virtual ~PageBackend() = default;
    // Absent = page does not exist. Throws WikiError on transport failure.
    virtual std::optional<PageResponse> get(const std::string& title) = 0;
};

// Reads recorded pages from <root>/<title with spaces as underscores>/
// containing response.json ({"title": ..., "wikitext": ...}) and meta.json
// ({"status": ..., "redirect": ...?, "fetched_at": ...?}).
class FixtureBackend : public PageBackend {
public:
    explicit FixtureBackend(std::string root);
    std::optional<PageResponse> get(const std::string& title) override;

    static std::string title_to_dir(const std::string& title);

private:
    std::string root_;
};

struct LiveBackendConfig {
    std::string api_url = "https://en.wikipedia.org/w/api.php";
    double requests_per_second = 5.0;
    std::string user_agent = "taxocap/0.1 (research toolkit)";
};

// MediaWiki action API (action=parse, prop=wikitext). Honors the configured
// request rate; safe for concurrent callers.
class LiveBackend : public PageBackend {
public:
    explicit LiveBackend(LiveBackendConfig config);
    ~LiveBackend() override;
    std::optional<PageResponse> get(const std::string& title) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Wikitext helpers exposed for tests.
std::vector<std::pair<std::string, std::string>> split_sections(const std::string& wikitext);
std::map<std::string, std::string> parse_taxobox(const std::string& wikitext,
                                                 bool* from_infobox);

// Fetches and parses a page; follows at most one redirect (meta redirect or
// #REDIRECT wikitext). A second hop counts as absent.
std::optional<RawPage> fetch_page(const std::string& title, PageBackend& backend);

// Sections whose heading contains any whitelist keyword (case-insensitive
// substring); order preserved, empty bodies dropped.
std::vector<std::pair<std::string, std::string>> candidate_sections(const RawPage& page);

const std::vector<std::string>& section_whitelist();

struct Verdict {
    bool accepted = false;
    std::string reason;  // mismatching rank, "no taxobox", or scan note on accept
};

// Accept iff every rank present in both the taxobox and the record matches
// case-insensitively after trimming (taxobox species abbreviations like
// "L. pictus" are reduced to "pictus"), with at least `min_matching_ranks`
// agreeing ranks.
Verdict validate_taxonomy_page(const RawPage& page, const taxa::TaxonRecord& taxon,
                               int min_matching_ranks = 3);

struct ResolveOptions {
    int min_matching_ranks = 3;
};

// Species page first (when the record has a species); on absence, validation
// failure, or zero candidate sections, the genus page as genus_fallback.
// Records without a species rank go straight to the genus page.
std::optional<DescriptionCandidate> resolve_description_source(
    const taxa::TaxonRecord& taxon, PageBackend& backend, const ResolveOptions& options = {});

struct ResolveOutcome {
    std::optional<DescriptionCandidate> candidate;
    std::string error;  // non-empty when the lookup failed in transport
};

// Concurrent resolution with a bounded in-flight window; results come back in
// input order.
std::vector<ResolveOutcome> resolve_many(const std::vector<taxa::TaxonRecord>& taxa,
                                         PageBackend& backend, int max_in_flight = 8,
                                         const ResolveOptions& options = {});

}  // namespace taxocap::wiki
