#include "annot/backends.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace annot {

BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "http_chat") return BackendKind::http_chat;
    if (s == "simulated") return BackendKind::simulated;
    if (s == "replay") return BackendKind::replay;
    throw ConfigError(fmt::format("unknown backend kind '{}'", s));
}

std::string_view to_string(BackendKind k) {
    switch (k) {
    case BackendKind::http_chat: return "http_chat";
    case BackendKind::simulated: return "simulated";
    case BackendKind::replay: return "replay";
    }
    return "?";
}

std::string_view to_string(CompletionStatus s) {
    switch (s) {
    case CompletionStatus::ok: return "ok";
    case CompletionStatus::transport_error: return "transport_error";
    case CompletionStatus::content_filtered: return "content_filter";
    case CompletionStatus::unavailable: return "unavailable";
    }
    return "?";
}

CompletionStatus completion_status_from_string(std::string_view s) {
    if (s == "ok") return CompletionStatus::ok;
    if (s == "transport_error") return CompletionStatus::transport_error;
    if (s == "content_filter") return CompletionStatus::content_filtered;
    if (s == "unavailable") return CompletionStatus::unavailable;
    throw ParseError("transcript", 0, fmt::format("unknown status '{}'", s));
}

void BackendConfig::validate() const {
    if (max_retries < 1) throw ConfigError("max_retries must be >= 1");
    if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    if (rate_limit && !(*rate_limit > 0.0)) throw ConfigError("rate_limit must be > 0 requests per second");
    if (burst < 1) throw ConfigError("burst must be >= 1");
    if (backoff_base_ms < 0) throw ConfigError("backoff_base_ms must be >= 0");
    if (temperature && *temperature < 0.0) throw ConfigError("temperature must be >= 0");
    switch (kind) {
    case BackendKind::http_chat:
        if (endpoint_url.empty()) throw ConfigError("http_chat backend needs endpoint_url");
        if (api_key_env.empty()) throw ConfigError("http_chat backend needs api_key_env");
        break;
    case BackendKind::simulated:
        if (simulated.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
        if (simulated.malformed_rate < 0.0 || simulated.malformed_rate >= 1.0)
            throw ConfigError("malformed_rate must be in [0, 1)");
        break;
    case BackendKind::replay:
        if (replay_path.empty()) throw ConfigError("replay backend needs replay_path");
        break;
    }
    if (fallback) fallback->validate();
}

std::string BackendConfig::id() const {
    if (!backend_id.empty()) return backend_id;
    if (kind == BackendKind::http_chat && !model_name.empty()) return fmt::format("http_chat:{}", model_name);
    return std::string(to_string(kind));
}

// --- replay ---------------------------------------------------------------

ReplayAnnotator::ReplayAnnotator(const std::vector<TranscriptRecord>& records, std::string id) : id_(std::move(id)) {
    for (const auto& r : records) records_[Key{r.tuple_index, r.repeat, r.attempt, r.from_fallback}] = r;
}

bool ReplayAnnotator::contains(const PromptBundle& prompt, const RequestContext& ctx) const {
    auto it = records_.find(Key{ctx.tuple_index, ctx.repeat, ctx.attempt, ctx.fallback});
    return it != records_.end() && it->second.prompt_hash == prompt.hash();
}

Completion ReplayAnnotator::complete(const PromptBundle& prompt, const RequestContext& ctx) {
    auto it = records_.find(Key{ctx.tuple_index, ctx.repeat, ctx.attempt, ctx.fallback});
    if (it == records_.end())
        return {CompletionStatus::unavailable, {},
                fmt::format("no recorded answer for tuple {} repeat {} attempt {}", ctx.tuple_index, ctx.repeat,
                            ctx.attempt),
                true};
    const auto& r = it->second;
    if (r.prompt_hash != prompt.hash())
        return {CompletionStatus::unavailable, {}, fmt::format("prompt hash mismatch for tuple {}", ctx.tuple_index),
                true};
    return {completion_status_from_string(r.status), r.response_text, {}, true};
}

CachedAnnotator::CachedAnnotator(const std::vector<TranscriptRecord>& records, std::shared_ptr<Annotator> live)
    : cache_(records, live->id()), live_(std::move(live)) {}

Completion CachedAnnotator::complete(const PromptBundle& prompt, const RequestContext& ctx) {
    if (cache_.contains(prompt, ctx)) return cache_.complete(prompt, ctx);
    return live_->complete(prompt, ctx);
}

// --- rate limiting ----------------------------------------------------------

RateLimiter::RateLimiter(double requests_per_second, int burst)
    : interval_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / requests_per_second))),
      tolerance_(interval_ * (burst - 1)),
      tat_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mutex_);
        const auto now = std::chrono::steady_clock::now();
        tat_ = std::max(tat_, now - tolerance_);
        slot = std::max(now, tat_ - tolerance_);
        tat_ += interval_;
    }
    std::this_thread::sleep_until(slot);
}

RateLimitedAnnotator::RateLimitedAnnotator(std::shared_ptr<Annotator> inner, double requests_per_second, int burst)
    : inner_(std::move(inner)), limiter_(requests_per_second, burst) {}

Completion RateLimitedAnnotator::complete(const PromptBundle& prompt, const RequestContext& ctx) {
    limiter_.acquire();
    return inner_->complete(prompt, ctx);
}

std::shared_ptr<Annotator> make_annotator(const BackendConfig& cfg) {
    cfg.validate();
    std::shared_ptr<Annotator> a;
    switch (cfg.kind) {
    case BackendKind::http_chat:
        a = std::make_shared<HttpChatAnnotator>(cfg);
        break;
    case BackendKind::simulated:
        a = std::make_shared<SimulatedAnnotator>(cfg.simulated, cfg.id());
        break;
    case BackendKind::replay:
        return std::make_shared<ReplayAnnotator>(TranscriptLog::load(cfg.replay_path), cfg.id());
    }
    if (cfg.rate_limit) a = std::make_shared<RateLimitedAnnotator>(std::move(a), *cfg.rate_limit, cfg.burst);
    return a;
}

// --- retry loop -------------------------------------------------------------

Backend::Backend(const BackendConfig& cfg)
    : cfg_(cfg), primary_(make_annotator(cfg)), fallback_(cfg.fallback ? make_annotator(*cfg.fallback) : nullptr) {}

Backend::Backend(const BackendConfig& cfg, std::shared_ptr<Annotator> primary, std::shared_ptr<Annotator> fallback)
    : cfg_(cfg), primary_(std::move(primary)), fallback_(std::move(fallback)) {
    cfg_.validate();
}

void Backend::use_cache(const std::vector<TranscriptRecord>& records) {
    if (records.empty()) return;
    primary_ = std::make_shared<CachedAnnotator>(records, primary_);
    if (fallback_) fallback_ = std::make_shared<CachedAnnotator>(records, fallback_);
}

Completion Backend::call(Annotator& annotator, const PromptBundle& prompt, const RequestContext& ctx,
                         std::vector<RawResponse>& responses) const {
    const auto timestamp = utc_timestamp_now();
    const auto start = std::chrono::steady_clock::now();
    Completion c = annotator.complete(prompt, ctx);
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    if (!c.replayed) requests_->fetch_add(1);

    RawResponse raw{c.text, ctx.attempt, annotator.id(), static_cast<long>(latency), ctx.fallback, c.status,
                    c.replayed};
    responses.push_back(raw);
    // Resume-cache hits are already in the log; a replay backend re-records.
    const bool record = !c.replayed || cfg_.kind == BackendKind::replay;
    if (transcript_ && record && c.status != CompletionStatus::unavailable) {
        TranscriptRecord rec;
        rec.tuple_index = ctx.tuple_index;
        rec.repeat = ctx.repeat;
        rec.attempt = ctx.attempt;
        rec.prompt_hash = prompt.hash();
        rec.response_text = c.text;
        rec.timestamp = timestamp;
        rec.backend_id = annotator.id();
        rec.status = std::string(to_string(c.status));
        rec.from_fallback = ctx.fallback;
        rec.latency_ms = raw.latency_ms;
        transcript_->append(rec);
    }
    return c;
}

AnnotationResult Backend::annotate(const PromptBundle& prompt, std::size_t tuple_index, int repeat,
                                   const Acceptor& accept) const {
    AnnotationResult result;
    for (int attempt = 1; attempt <= cfg_.max_retries; ++attempt) {
        result.attempts = attempt;
        RequestContext ctx{tuple_index, repeat, attempt, false};
        Completion c = call(*primary_, prompt, ctx, result.responses);

        if (c.status == CompletionStatus::content_filtered) {
            if (!fallback_) {
                result.failure = "content filtered and no fallback backend configured";
                return result;
            }
            ctx.fallback = true;
            c = call(*fallback_, prompt, ctx, result.responses);
        }
        if (c.status == CompletionStatus::unavailable) {
            result.failure = c.detail.empty() ? "backend unavailable" : c.detail;
            return result;
        }
        if (c.status == CompletionStatus::transport_error || c.status == CompletionStatus::content_filtered) {
            result.failure = fmt::format("{}: {}", to_string(c.status), c.detail);
            if (attempt < cfg_.max_retries && cfg_.backoff_base_ms > 0 && !c.replayed) {
                const auto delay = std::chrono::milliseconds(
                    static_cast<long>(cfg_.backoff_base_ms * std::pow(2.0, attempt - 1)));
                std::this_thread::sleep_for(delay);
            }
            continue;
        }
        ParseOutcome parsed = accept(prompt, c.text);
        if (parsed) {
            result.judgment = std::move(parsed.judgment);
            result.failure.clear();
            return result;
        }
        result.failure = fmt::format("not acceptable: {}", parsed.reason);
    }
    result.failure = fmt::format("max_retries ({}) exhausted; last: {}", cfg_.max_retries, result.failure);
    return result;
}

BatchResult Backend::run_batch(std::span<const PromptBundle> prompts, int repeats, const Acceptor& accept) const {
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    BatchResult out;
    const std::size_t total = prompts.size() * static_cast<std::size_t>(repeats);
    out.items.resize(total);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < total;) {
            const std::size_t tuple = i / static_cast<std::size_t>(repeats);
            const int repeat = static_cast<int>(i % static_cast<std::size_t>(repeats));
            BatchItem item{tuple, repeat, {}};
            try {
                item.result = annotate(prompts[tuple], tuple, repeat, accept);
            } catch (const std::exception& e) {
                item.result.failure = e.what();
            }
            out.items[i] = std::move(item);
        }
    };
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_in_flight), total);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    auto& s = out.stats;
    s.items = total;
    for (const auto& item : out.items) {
        const auto& r = item.result;
        if (r.accepted())
            ++s.accepted;
        else
            ++s.failed;
        if (r.attempts > 1) ++s.retried;
        for (const auto& resp : r.responses) {
            if (resp.replayed)
                ++s.replayed;
            else if (resp.status != CompletionStatus::unavailable)
                ++s.requests;
            if (resp.from_fallback) ++s.fallback_uses;
        }
        const long rejected = static_cast<long>(r.attempts) - (r.accepted() ? 1 : 0);
        if (rejected > 0) s.rejected_answers += static_cast<std::size_t>(rejected);
    }
    if (s.failed) spdlog::warn("batch: {} of {} item(s) failed", s.failed, total);
    return out;
}

} // namespace annot
