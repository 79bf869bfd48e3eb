// Live chat-completions transport, kept in its own translation unit so the
// large httplib header is compiled once.

#ifdef TAXOCAP_USE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "taxocap/gateway.hpp"

namespace taxocap::llm {

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw GatewayError("endpoint_url must start with http:// or https://: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl parsed;
    if (path_start == std::string::npos) {
        parsed.origin = url;
        parsed.path = "/v1/chat/completions";
    } else {
        parsed.origin = url.substr(0, path_start);
        parsed.path = url.substr(path_start);
    }
    return parsed;
}

}  // namespace

BackendResponse HttpChatBackend::send(const ChatRequest& request) {
    const ParsedUrl url = parse_url(endpoint_);
    httplib::Client client(url.origin);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const auto res =
        client.Post(url.path, headers, canonical_request_json(request), "application/json");
    if (!res) {
        return {0, "", true, httplib::to_string(res.error())};
    }
    return {res->status, res->body, false, ""};
}

}  // namespace taxocap::llm
