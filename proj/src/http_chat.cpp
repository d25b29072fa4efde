#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "annot/backends.hpp"

#include <cstdlib>
#include <regex>

#include <fmt/format.h>

namespace annot {

using nlohmann::json;

HttpChatAnnotator::HttpChatAnnotator(const BackendConfig& cfg) : cfg_(cfg), id_(cfg.id()) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key) throw ConfigError(fmt::format("environment variable {} holding the API key is not set", cfg.api_key_env));
    key_ = key;

    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(cfg.endpoint_url, m, url_re))
        throw ConfigError(fmt::format("endpoint_url '{}' is not an http(s) URL", cfg.endpoint_url));
    origin_ = m.str(1);
    path_ = m[2].matched ? m.str(2) : "/";
}

json HttpChatAnnotator::request_body(const PromptBundle& prompt) const {
    json messages = json::array();
    if (cfg_.system_role) {
        messages.push_back({{"role", "system"}, {"content", prompt.role_text}});
        messages.push_back({{"role", "user"}, {"content", prompt.user_text}});
    } else {
        messages.push_back({{"role", "user"}, {"content", prompt.inline_text()}});
    }
    json body = json::object();
    if (!cfg_.model_name.empty()) body["model"] = cfg_.model_name;
    body["messages"] = messages;
    if (cfg_.temperature) body["temperature"] = *cfg_.temperature;
    return body;
}

Completion HttpChatAnnotator::complete(const PromptBundle& prompt, const RequestContext&) {
    httplib::Client client(origin_);
    client.set_connection_timeout(cfg_.timeout_seconds);
    client.set_read_timeout(cfg_.timeout_seconds);
    client.set_write_timeout(cfg_.timeout_seconds);
    httplib::Headers headers;
    if (cfg_.auth == AuthStyle::bearer)
        headers.emplace("Authorization", "Bearer " + key_);
    else
        headers.emplace("api-key", key_);

    auto res = client.Post(path_, headers, request_body(prompt).dump(), "application/json");
    if (!res) return {CompletionStatus::transport_error, {}, httplib::to_string(res.error())};

    auto filtered = [&](std::string_view text) {
        return std::any_of(cfg_.content_filter_markers.begin(), cfg_.content_filter_markers.end(),
                           [&](const std::string& m) { return !m.empty() && text.find(m) != std::string_view::npos; });
    };
    if (res->status != 200) {
        if (filtered(res->body)) return {CompletionStatus::content_filtered, {}, fmt::format("HTTP {}", res->status)};
        const auto detail = fmt::format("HTTP {}: {}", res->status, res->body.substr(0, 200));
        // Timeouts, throttling and server errors may pass; other client errors will not.
        const bool transient = res->status == 408 || res->status == 429 || res->status >= 500;
        return {transient ? CompletionStatus::transport_error : CompletionStatus::unavailable, {}, detail};
    }
    try {
        const auto j = json::parse(res->body);
        const auto& choice = j.at("choices").at(0);
        const auto finish = choice.value("finish_reason", std::string());
        if (filtered(finish)) return {CompletionStatus::content_filtered, {}, "finish_reason " + finish};
        const auto& content = choice.at("message").at("content");
        if (content.is_null()) return {CompletionStatus::transport_error, {}, "empty message content"};
        return {CompletionStatus::ok, content.get<std::string>(), {}};
    } catch (const json::exception& e) {
        return {CompletionStatus::transport_error, {}, fmt::format("unreadable response: {}", e.what())};
    }
}

} // namespace annot
