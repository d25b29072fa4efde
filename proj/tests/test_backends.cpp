#include "annot/backends.hpp"
#include "annot/scoring.hpp"
#include "annot/transcript.hpp"
#include "golden_cells.hpp"
#include "support.hpp"

#include <doctest.h>
#include <fmt/format.h>

#include <atomic>
#include <chrono>
#include <thread>

using namespace annot;

namespace {

std::vector<TextRef> texts_for(const std::vector<std::string>& ids) {
    std::vector<TextRef> out;
    for (const auto& id : ids) out.push_back({id, "text of " + id});
    return out;
}

PromptBundle bws_prompt(const std::vector<std::string>& ids, const std::string& dim = "joy") {
    const auto texts = texts_for(ids);
    return render_prompt(Protocol::bws, texts, dim, std::nullopt);
}

BackendConfig simulated(std::map<std::string, double> latent) {
    BackendConfig b;
    b.kind = BackendKind::simulated;
    b.max_in_flight = 1;
    b.backoff_base_ms = 0;
    b.simulated.latent_scores = std::move(latent);
    return b;
}

// Scripted annotator: answers from a list per call and tracks concurrency.
class Scripted final : public Annotator {
public:
    explicit Scripted(std::vector<Completion> script, std::chrono::milliseconds delay = {})
        : script_(std::move(script)), delay_(delay) {}
    std::string id() const override { return "scripted"; }
    Completion complete(const PromptBundle& prompt, const RequestContext&) override {
        const int now = ++in_flight_;
        int seen = peak_.load();
        while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
        }
        if (delay_.count()) std::this_thread::sleep_for(delay_);
        const auto i = calls_++;
        --in_flight_;
        if (script_.empty()) {
            const auto& ids = prompt.tuple_ids;
            return {CompletionStatus::ok, fmt::format("Most joy Speaker: 1\nLeast joy Speaker: {}", ids.size()), {}};
        }
        return script_[std::min(i, script_.size() - 1)];
    }
    std::size_t calls() const { return calls_; }
    int peak() const { return peak_; }

private:
    std::vector<Completion> script_;
    std::chrono::milliseconds delay_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<int> in_flight_{0}, peak_{0};
};

const std::map<std::string, double> abcd{{"a", .9}, {"b", .5}, {"c", .3}, {"d", .1}};

} // namespace

TEST_SUITE("backends") {

TEST_CASE("perfect simulator picks the latent extremes on the first attempt") {
    const Backend backend(simulated(abcd));
    for (const auto& order : std::vector<std::vector<std::string>>{{"a", "b", "c", "d"}, {"c", "d", "a", "b"}, {"d", "c", "b", "a"}}) {
        const auto r = backend.annotate(bws_prompt(order), 0);
        REQUIRE(r.accepted());
        CHECK(*r.judgment->best_id == "a");
        CHECK(*r.judgment->worst_id == "d");
        CHECK(r.attempts == 1);
    }
}

TEST_CASE("perfect simulator ratings are the latent score mapped onto the scale") {
    const Backend backend(simulated(abcd));
    for (const char* code : {"D-10", "OL-100", "B-1", "D-4"}) {
        const auto scale = RatingScaleSpec::parse(code);
        const auto texts = texts_for({"a", "b", "c", "d"});
        const auto r = backend.annotate(render_prompt(Protocol::rs_t, texts, "joy", scale), 0);
        REQUIRE(r.accepted());
        for (const auto& [id, v] : r.judgment->ratings) {
            const double expect = scale.decimals ? std::round(abcd.at(id) * 1e4) / 1e4
                                                 : std::round(abcd.at(id) * scale.max_value);
            CHECK(v == doctest::Approx(expect));
        }
    }
}

TEST_CASE("simulator output depends only on its keys") {
    auto cfg = simulated(abcd);
    cfg.simulated.noise_sigma = 0.3;
    cfg.simulated.seed = 4;
    SimulatedAnnotator sim(cfg.simulated);
    const auto p = bws_prompt({"a", "b", "c", "d"});
    const auto x = sim.complete(p, {3, 0, 1, false});
    CHECK(sim.complete(p, {3, 0, 1, false}).text == x.text);
    int differing = 0;
    for (std::size_t t = 0; t < 30; ++t) differing += sim.complete(p, {t, 0, 1, false}).text != x.text;
    CHECK(differing > 0);
}

TEST_CASE("one malformed answer is retried and the second attempt is accepted") {
    auto cfg = simulated(abcd);
    cfg.simulated.forced_malformed_attempts = 1;
    testing::TempDir dir("retry");
    TranscriptLog log(dir / "t.jsonl");
    Backend backend(cfg);
    backend.attach_transcript(&log);
    const auto r = backend.annotate(bws_prompt({"a", "b", "c", "d"}), 7);
    REQUIRE(r.accepted());
    CHECK(r.attempts == 2);
    REQUIRE(r.responses.size() == 2);
    CHECK(r.responses[0].text == "Most joy Speaker: 1\nLeast joy Speaker: 1");
    CHECK(*r.judgment->best_id == "a");
    const auto records = TranscriptLog::load(dir / "t.jsonl");
    REQUIRE(records.size() == 2);
    CHECK(records[0].tuple_index == 7);
    CHECK(records[1].attempt == 2);
    CHECK(records[0].prompt_hash == bws_prompt({"a", "b", "c", "d"}).hash());
}

TEST_CASE("exhausted retries fail the tuple without an exception") {
    auto cfg = simulated(abcd);
    cfg.max_retries = 3;
    cfg.simulated.forced_malformed_attempts = 99;
    const Backend backend(cfg);
    const auto r = backend.annotate(bws_prompt({"a", "b", "c", "d"}), 0);
    CHECK_FALSE(r.accepted());
    CHECK(r.attempts == 3);
    CHECK(r.responses.size() == 3);
    CHECK(r.failure.find("max_retries (3) exhausted") != std::string::npos);
}

TEST_CASE("content filter goes to the fallback, or fails without one") {
    auto primary = simulated(abcd);
    primary.simulated.content_filter_ids = {"c"};
    primary.backend_id = "primary";
    const auto p = bws_prompt({"a", "b", "c", "d"});

    const auto alone = Backend(primary).annotate(p, 0);
    CHECK_FALSE(alone.accepted());
    CHECK(alone.attempts == 1);
    CHECK(alone.responses.front().status == CompletionStatus::content_filtered);

    auto fb = simulated(abcd);
    fb.backend_id = "fallback";
    primary.fallback = std::make_shared<const BackendConfig>(fb);
    const auto r = Backend(primary).annotate(p, 0);
    REQUIRE(r.accepted());
    REQUIRE(r.responses.size() == 2);
    CHECK(r.responses[1].from_fallback);
    CHECK(r.responses[1].backend_id == "fallback");
    CHECK(*r.judgment->best_id == "a");
}

TEST_CASE("transport errors back off and retry; unavailable stops") {
    auto cfg = simulated(abcd);
    cfg.backoff_base_ms = 20;
    auto script = std::make_shared<Scripted>(std::vector<Completion>{
        {CompletionStatus::transport_error, {}, "timeout"},
        {CompletionStatus::transport_error, {}, "reset"},
        {CompletionStatus::ok, "Most joy Speaker: 2\nLeast joy Speaker: 3", {}}});
    const auto start = std::chrono::steady_clock::now();
    const auto r = Backend(cfg, script).annotate(bws_prompt({"a", "b", "c", "d"}), 0);
    const auto waited = std::chrono::steady_clock::now() - start;
    REQUIRE(r.accepted());
    CHECK(r.attempts == 3);
    CHECK(waited >= std::chrono::milliseconds(60)); // 20 + 40
    CHECK(*r.judgment->best_id == "b");

    auto gone = std::make_shared<Scripted>(std::vector<Completion>{{CompletionStatus::unavailable, {}, "no such model"}});
    const auto u = Backend(cfg, gone).annotate(bws_prompt({"a", "b", "c", "d"}), 0);
    CHECK_FALSE(u.accepted());
    CHECK(gone->calls() == 1);
    CHECK(u.failure == "no such model");
}

TEST_CASE("custom acceptors decide what counts") {
    const Backend backend(simulated(abcd));
    int calls = 0;
    const auto r = backend.annotate(bws_prompt({"a", "b", "c", "d"}), 0, 0, [&](const PromptBundle& p, std::string_view t) {
        return ++calls < 3 ? ParseOutcome::reject("not yet") : parse_response(p, t);
    });
    CHECK(r.accepted());
    CHECK(r.attempts == 3);
}

TEST_CASE("batches keep input order and count") {
    std::map<std::string, double> latent;
    std::vector<PromptBundle> prompts;
    for (int t = 0; t < 16; ++t) {
        std::vector<std::string> ids;
        for (int i = 0; i < 4; ++i) {
            ids.push_back(fmt::format("x{}_{}", t, i));
            latent[ids.back()] = (t * 4 + i) / 64.0;
        }
        prompts.push_back(bws_prompt(ids));
    }
    auto cfg = simulated(latent);
    cfg.max_in_flight = 4;
    const auto out = Backend(cfg).run_batch(prompts, 2);
    REQUIRE(out.items.size() == 32);
    for (std::size_t i = 0; i < out.items.size(); ++i) {
        CHECK(out.items[i].tuple_index == i / 2);
        CHECK(out.items[i].repeat == static_cast<int>(i % 2));
        REQUIRE(out.items[i].result.accepted());
        CHECK(*out.items[i].result.judgment->best_id == prompts[i / 2].tuple_ids[3]);
    }
    CHECK(out.stats.accepted == 32);
    CHECK(out.stats.failed == 0);
    CHECK(out.stats.requests == 32);
}

TEST_CASE("no more than max_in_flight requests are outstanding") {
    std::vector<PromptBundle> prompts(12, bws_prompt({"a", "b", "c", "d"}));
    for (int limit : {1, 3}) {
        auto cfg = simulated(abcd);
        cfg.max_in_flight = limit;
        auto script = std::make_shared<Scripted>(std::vector<Completion>{}, std::chrono::milliseconds(30));
        Backend(cfg, script).run_batch(prompts);
        CHECK(script->peak() <= limit);
        if (limit > 1) CHECK(script->peak() > 1);
    }
}

TEST_CASE("rate limit: 10 requests at 2 per second take at least 4.5 s") {
    auto cfg = simulated(abcd);
    cfg.rate_limit = 2.0;
    cfg.max_in_flight = 4;
    std::vector<PromptBundle> prompts(10, bws_prompt({"a", "b", "c", "d"}));
    testing::TempDir dir("rate");
    TranscriptLog log(dir / "t.jsonl");
    Backend backend(cfg);
    backend.attach_transcript(&log);
    const auto start = std::chrono::steady_clock::now();
    const auto out = backend.run_batch(prompts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(out.stats.accepted == 10);
    CHECK(secs >= 4.5);
    CHECK(secs < 8.0);
    CHECK(TranscriptLog::load(dir / "t.jsonl").size() == 10);
}

TEST_CASE("replay serves recorded text byte for byte and refuses changed prompts") {
    auto cfg = simulated(abcd);
    cfg.simulated.noise_sigma = 0.4;
    cfg.simulated.seed = 12;
    cfg.simulated.forced_malformed_attempts = 1;
    testing::TempDir dir("replay");
    std::vector<PromptBundle> prompts;
    for (const auto& order : std::vector<std::vector<std::string>>{{"a", "b", "c", "d"}, {"d", "a", "c", "b"}, {"b", "c", "d", "a"}})
        prompts.push_back(bws_prompt(order));
    BatchResult live;
    {
        TranscriptLog log(dir / "t.jsonl");
        Backend backend(cfg);
        backend.attach_transcript(&log);
        live = backend.run_batch(prompts);
    }
    BackendConfig rp;
    rp.kind = BackendKind::replay;
    rp.replay_path = (dir / "t.jsonl").string();
    rp.backoff_base_ms = 0;
    const Backend replay(rp);
    const auto again = replay.run_batch(prompts);
    CHECK(replay.requests_sent() == 0);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        REQUIRE(again.items[i].result.responses.size() == live.items[i].result.responses.size());
        for (std::size_t k = 0; k < live.items[i].result.responses.size(); ++k)
            CHECK(again.items[i].result.responses[k].text == live.items[i].result.responses[k].text);
        CHECK(again.items[i].result.judgment == live.items[i].result.judgment);
    }
    const auto changed = replay.annotate(bws_prompt({"a", "b", "c", "d"}, "fear"), 0);
    CHECK_FALSE(changed.accepted());
    CHECK(changed.failure.find("hash mismatch") != std::string::npos);
}

TEST_CASE("resuming from a transcript requests only what is missing") {
    std::map<std::string, double> latent;
    std::vector<PromptBundle> prompts;
    for (int t = 0; t < 20; ++t) {
        std::vector<std::string> ids;
        for (int i = 0; i < 4; ++i) {
            ids.push_back(fmt::format("r{}_{}", t, i));
            latent[ids.back()] = ((t * 7 + i * 13) % 64) / 64.0;
        }
        prompts.push_back(bws_prompt(ids));
    }
    auto cfg = simulated(latent);
    cfg.simulated.noise_sigma = 0.2;
    cfg.simulated.malformed_rate = 0.2;
    cfg.simulated.seed = 3;
    testing::TempDir dir("resume");

    Backend full(cfg);
    const auto uninterrupted = full.run_batch(prompts);

    {
        TranscriptLog log(dir / "t.jsonl");
        Backend first(cfg);
        first.attach_transcript(&log);
        first.run_batch(std::span(prompts).first(8));
    }
    const auto records = TranscriptLog::load(dir / "t.jsonl");
    Backend second(cfg);
    second.use_cache(records);
    const auto resumed = second.run_batch(prompts);
    CHECK(records.size() + second.requests_sent() == full.requests_sent());
    for (std::size_t i = 0; i < prompts.size(); ++i) CHECK(resumed.items[i].result.judgment == uninterrupted.items[i].result.judgment);
}

TEST_CASE("rare malformed answers are all recovered by retrying") {
    // Reduced-scale version of a large run where about 0.2 % of requests
    // needed a second attempt.
    std::map<std::string, double> latent;
    for (int i = 0; i < 40; ++i) latent[fmt::format("m{}", i)] = i / 40.0;
    auto cfg = simulated(latent);
    cfg.simulated.malformed_rate = 0.00194;
    cfg.simulated.seed = 388;
    std::vector<PromptBundle> prompts;
    for (int t = 0; t < 10000; ++t) {
        std::vector<std::string> ids;
        for (int i = 0; i < 4; ++i) ids.push_back(fmt::format("m{}", (t * 3 + i * 11) % 40));
        prompts.push_back(bws_prompt(ids));
    }
    const auto out = Backend(cfg).run_batch(prompts);
    CHECK(out.stats.failed == 0);
    // Binomial(10000, 0.00194): mean 19.4, sd 4.4.
    CHECK(out.stats.retried >= 5);
    CHECK(out.stats.retried <= 40);
    std::vector<Judgment> js;
    for (const auto& item : out.items) js.push_back(*item.result.judgment);
    std::vector<std::string> ids;
    for (const auto& [id, _] : latent) ids.push_back(id);
    const auto table = normalize(score_counting(js, ids));
    for (const auto& row : table.rows) CHECK(row.best + row.worst <= row.appearances);
}

TEST_CASE("transcript log tolerates a truncated tail") {
    testing::TempDir dir("tail");
    {
        TranscriptLog log(dir / "t.jsonl");
        TranscriptRecord r;
        r.response_text = "Most joy Speaker: 1";
        r.prompt_hash = "h";
        log.append(r);
        r.tuple_index = 1;
        log.append(r);
    }
    {
        std::ofstream out(dir / "t.jsonl", std::ios::app);
        out << "{\"tuple_index\":2,\"repe";
    }
    CHECK(TranscriptLog::load(dir / "t.jsonl").size() == 2);
    {
        TranscriptLog log(dir / "t.jsonl");
        TranscriptRecord r;
        r.tuple_index = 5;
        log.append(r);
    }
    const auto records = TranscriptLog::load(dir / "t.jsonl");
    REQUIRE(records.size() == 3);
    CHECK(records.back().tuple_index == 5);
    CHECK(TranscriptLog::load(dir / "missing.jsonl").empty());
}

TEST_CASE("config validation") {
    BackendConfig b;
    b.kind = BackendKind::http_chat;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b.endpoint_url = "http://localhost:1/v1/chat/completions";
    CHECK_NOTHROW(b.validate());
    b.max_retries = 0;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b.max_retries = 5;
    b.rate_limit = 0.0;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    BackendConfig s;
    s.simulated.malformed_rate = 1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    BackendConfig r;
    r.kind = BackendKind::replay;
    CHECK_THROWS_AS(r.validate(), ConfigError);
}

}
