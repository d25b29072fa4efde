#pragma once

#include "annot/parsing.hpp"
#include "annot/prompting.hpp"
#include "annot/transcript.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace annot {

enum class BackendKind { http_chat, simulated, replay };
BackendKind backend_kind_from_string(std::string_view s);
std::string_view to_string(BackendKind k);

// Seeded stand-in for a generative model. Perceived score = latent + N(0, sigma)
// drawn per (tuple, repeat, attempt, slot); picks and ratings follow the
// perceived scores.
struct SimulatedAnnotatorConfig {
    std::map<std::string, double> latent_scores;
    // Overrides latent_scores for a dimension (multi-emotion prompts).
    std::map<std::string, std::map<std::string, double>> latent_by_dimension;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    double malformed_rate = 0.0;
    // Attempts up to this number always answer malformed.
    int forced_malformed_attempts = 0;
    // Prompts containing any of these ids are refused as content-filtered.
    std::set<std::string> content_filter_ids;
};

enum class AuthStyle { bearer, api_key_header };

struct BackendConfig {
    BackendKind kind = BackendKind::simulated;
    std::string backend_id; // defaults to kind/model

    // http_chat
    std::string endpoint_url;
    std::string model_name;
    std::string api_key_env = "OPENAI_API_KEY";
    AuthStyle auth = AuthStyle::bearer;
    bool system_role = true;
    std::optional<double> temperature;
    int timeout_seconds = 60;
    std::vector<std::string> content_filter_markers{"content_filter", "content_management_policy", "ResponsibleAIPolicyViolation"};

    // simulated
    SimulatedAnnotatorConfig simulated;

    // replay
    std::string replay_path;

    int max_retries = 5;
    std::shared_ptr<const BackendConfig> fallback;
    std::optional<double> rate_limit; // requests per second
    int burst = 1;
    int max_in_flight = 4;
    int backoff_base_ms = 1000;

    // Throws ConfigError on an invalid combination.
    void validate() const;
    std::string id() const;
};

enum class CompletionStatus { ok, transport_error, content_filtered, unavailable };
std::string_view to_string(CompletionStatus s);
CompletionStatus completion_status_from_string(std::string_view s);

struct RequestContext {
    std::size_t tuple_index = 0;
    int repeat = 0;
    int attempt = 1;
    bool fallback = false;
};

struct Completion {
    CompletionStatus status = CompletionStatus::ok;
    std::string text;
    std::string detail;
    bool replayed = false; // served from a transcript, no request was made
};

// Anything that turns a prompt into raw answer text.
class Annotator {
public:
    virtual ~Annotator() = default;
    virtual std::string id() const = 0;
    virtual Completion complete(const PromptBundle& prompt, const RequestContext& ctx) = 0;
};

class SimulatedAnnotator final : public Annotator {
public:
    explicit SimulatedAnnotator(SimulatedAnnotatorConfig cfg, std::string id = "simulated");
    std::string id() const override { return id_; }
    Completion complete(const PromptBundle& prompt, const RequestContext& ctx) override;

    // Rating the simulator reports for a perceived score on the scale.
    static double scale_value(double perceived, const RatingScaleSpec& scale);

private:
    double latent(const std::string& dimension, const std::string& id) const;
    SimulatedAnnotatorConfig cfg_;
    std::string id_;
};

// Serves recorded answers keyed by (tuple, repeat, attempt, fallback). A
// missing key or a prompt-hash mismatch answers `unavailable`.
class ReplayAnnotator final : public Annotator {
public:
    explicit ReplayAnnotator(const std::vector<TranscriptRecord>& records, std::string id = "replay");
    std::string id() const override { return id_; }
    Completion complete(const PromptBundle& prompt, const RequestContext& ctx) override;
    bool contains(const PromptBundle& prompt, const RequestContext& ctx) const;

private:
    using Key = std::tuple<std::size_t, int, int, bool>;
    std::map<Key, TranscriptRecord> records_;
    std::string id_;
};

// Replays what a transcript already holds and forwards the rest, so a resumed
// run only requests what is missing.
class CachedAnnotator final : public Annotator {
public:
    CachedAnnotator(const std::vector<TranscriptRecord>& records, std::shared_ptr<Annotator> live);
    std::string id() const override { return live_->id(); }
    Completion complete(const PromptBundle& prompt, const RequestContext& ctx) override;

private:
    ReplayAnnotator cache_;
    std::shared_ptr<Annotator> live_;
};

// Token bucket in virtual-time form: each acquire reserves the next slot and
// sleeps until it.
class RateLimiter {
public:
    RateLimiter(double requests_per_second, int burst);
    void acquire();

private:
    std::mutex mutex_;
    std::chrono::steady_clock::duration interval_;
    std::chrono::steady_clock::duration tolerance_;
    std::chrono::steady_clock::time_point tat_;
};

class RateLimitedAnnotator final : public Annotator {
public:
    RateLimitedAnnotator(std::shared_ptr<Annotator> inner, double requests_per_second, int burst);
    std::string id() const override { return inner_->id(); }
    Completion complete(const PromptBundle& prompt, const RequestContext& ctx) override;

private:
    std::shared_ptr<Annotator> inner_;
    RateLimiter limiter_;
};

// Generic OpenAI-compatible chat-completions client (also Azure-style paths).
class HttpChatAnnotator final : public Annotator {
public:
    // Reads the API key from the configured environment variable; a missing
    // key throws ConfigError before any request.
    explicit HttpChatAnnotator(const BackendConfig& cfg);
    std::string id() const override { return id_; }
    Completion complete(const PromptBundle& prompt, const RequestContext& ctx) override;

    // Request body for a prompt (exposed for tests).
    nlohmann::json request_body(const PromptBundle& prompt) const;

private:
    BackendConfig cfg_;
    std::string id_;
    std::string key_;
    std::string origin_; // scheme://host[:port]
    std::string path_;   // path and query
};

// Builds the annotator stack for a config (rate limiting included).
std::shared_ptr<Annotator> make_annotator(const BackendConfig& cfg);

struct RawResponse {
    std::string text;
    int attempt = 1;
    std::string backend_id;
    long latency_ms = 0;
    bool from_fallback = false;
    CompletionStatus status = CompletionStatus::ok;
    bool replayed = false;
};

using Acceptor = std::function<ParseOutcome(const PromptBundle&, std::string_view)>;

struct AnnotationResult {
    std::optional<Judgment> judgment;
    std::vector<RawResponse> responses; // every attempt, fallback answers included
    std::string failure;                // set iff judgment is empty
    int attempts = 0;

    bool accepted() const { return judgment.has_value(); }
};

struct BatchItem {
    std::size_t tuple_index = 0;
    int repeat = 0;
    AnnotationResult result;
};

struct BatchStats {
    std::size_t items = 0;
    std::size_t accepted = 0;
    std::size_t failed = 0;
    std::size_t retried = 0; // accepted or failed items that needed more than one attempt
    std::size_t requests = 0;
    std::size_t replayed = 0;
    std::size_t fallback_uses = 0;
    std::size_t rejected_answers = 0;
};

struct BatchResult {
    std::vector<BatchItem> items; // input order: tuple-major, then repeat
    BatchStats stats;
};

// Retry-until-acceptable annotation over a primary annotator and an optional
// fallback used when the primary refuses on content grounds.
class Backend {
public:
    explicit Backend(const BackendConfig& cfg);
    Backend(const BackendConfig& cfg, std::shared_ptr<Annotator> primary, std::shared_ptr<Annotator> fallback = nullptr);

    // Every attempt is appended to the log when one is attached.
    void attach_transcript(TranscriptLog* log) { transcript_ = log; }
    // Serve attempts already present in `records` without new requests.
    void use_cache(const std::vector<TranscriptRecord>& records);

    AnnotationResult annotate(const PromptBundle& prompt, std::size_t tuple_index, int repeat = 0,
                              const Acceptor& accept = parse_response) const;

    // Prompts are aligned with tuple indices 0..n-1; each is run `repeats`
    // times. Per-item failures are data, not exceptions.
    BatchResult run_batch(std::span<const PromptBundle> prompts, int repeats = 1,
                          const Acceptor& accept = parse_response) const;

    std::size_t requests_sent() const { return requests_->load(); }
    const BackendConfig& config() const { return cfg_; }

private:
    Completion call(Annotator& annotator, const PromptBundle& prompt, const RequestContext& ctx,
                    std::vector<RawResponse>& responses) const;

    BackendConfig cfg_;
    std::shared_ptr<Annotator> primary_;
    std::shared_ptr<Annotator> fallback_;
    TranscriptLog* transcript_ = nullptr;
    std::shared_ptr<std::atomic<std::size_t>> requests_ = std::make_shared<std::atomic<std::size_t>>(0);
};

} // namespace annot
