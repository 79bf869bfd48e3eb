// MediaWiki action API backend. Separate translation unit for the httplib
// include; the fixture backend covers all tests.

#ifdef TAXOCAP_USE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <ctime>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "taxocap/wiki.hpp"

namespace taxocap::wiki {

using json = nlohmann::json;

namespace {

std::string url_encode(const std::string& value) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : value) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else if (c == ' ') {
            out.push_back('+');
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xf]);
        }
    }
    return out;
}

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

struct SplitUrl {
    std::string origin;
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw WikiError("bad api url: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/w/api.php"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

struct LiveBackend::Impl {
    LiveBackendConfig config;
    std::mutex mutex;
    std::chrono::steady_clock::time_point last_request{};
};

LiveBackend::LiveBackend(LiveBackendConfig config) : impl_(std::make_unique<Impl>()) {
    impl_->config = std::move(config);
}

LiveBackend::~LiveBackend() = default;

std::optional<PageResponse> LiveBackend::get(const std::string& title) {
    {
        // Space requests at 1/rps seconds.
        std::unique_lock lock(impl_->mutex);
        const auto interval = std::chrono::milliseconds(
            static_cast<long long>(1000.0 / impl_->config.requests_per_second));
        const auto now = std::chrono::steady_clock::now();
        const auto earliest = impl_->last_request + interval;
        if (now < earliest) {
            lock.unlock();
            std::this_thread::sleep_for(earliest - now);
            lock.lock();
        }
        impl_->last_request = std::chrono::steady_clock::now();
    }

    const SplitUrl url = split_url(impl_->config.api_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(60, 0);
    httplib::Headers headers = {{"User-Agent", impl_->config.user_agent}};
    const std::string query = url.path + "?action=parse&prop=wikitext&format=json" +
                              "&formatversion=2&redirects=0&page=" + url_encode(title);
    const auto res = client.Get(query, headers);
    if (!res) throw WikiError("transport: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw WikiError("HTTP " + std::to_string(res->status) + " fetching \"" + title + "\"");
    }
    json body;
    try {
        body = json::parse(res->body);
    } catch (const json::exception& e) {
        throw WikiError(std::string("malformed API response: ") + e.what());
    }
    if (body.contains("error")) {
        const std::string code = body["error"].value("code", "");
        if (code == "missingtitle" || code == "pagecannotexist" || code == "invalidtitle") {
            return std::nullopt;
        }
        throw WikiError("API error: " + code);
    }
    if (!body.contains("parse")) throw WikiError("API response missing parse payload");

    PageResponse response;
    response.status = 200;
    response.title = body["parse"].value("title", title);
    response.wikitext = body["parse"].value("wikitext", "");
    response.fetched_at = iso_now();
    response.source_url = url.origin + query;
    return response;
}

}  // namespace taxocap::wiki
