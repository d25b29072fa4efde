#include "annot/transcript.hpp"

#include "annot/types.hpp"

#include <chrono>
#include <ctime>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace annot {

using nlohmann::json;

json to_json(const TranscriptRecord& r) {
    json o = json::object();
    o["tuple_index"] = r.tuple_index;
    o["repeat"] = r.repeat;
    o["attempt"] = r.attempt;
    o["prompt_hash"] = r.prompt_hash;
    o["response_text"] = r.response_text;
    o["timestamp"] = r.timestamp;
    o["backend_id"] = r.backend_id;
    o["status"] = r.status;
    o["from_fallback"] = r.from_fallback;
    o["latency_ms"] = r.latency_ms;
    return o;
}

TranscriptRecord transcript_record_from_json(const json& j) {
    TranscriptRecord r;
    r.tuple_index = j.at("tuple_index").get<std::size_t>();
    r.repeat = j.value("repeat", 0);
    r.attempt = j.at("attempt").get<int>();
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    r.response_text = j.at("response_text").get<std::string>();
    r.timestamp = j.value("timestamp", std::string());
    r.backend_id = j.value("backend_id", std::string());
    r.status = j.value("status", std::string("ok"));
    r.from_fallback = j.value("from_fallback", false);
    r.latency_ms = j.value("latency_ms", 0L);
    return r;
}

std::string utc_timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                       tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

namespace {

// Cuts a partial final line so appended records start on a fresh line.
void drop_partial_tail(const std::filesystem::path& path) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec || size == 0) return;
    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.back() == '\n') return;
    const auto keep = content.rfind('\n');
    std::filesystem::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
}

} // namespace

TranscriptLog::TranscriptLog(const std::filesystem::path& path) {
    drop_partial_tail(path);
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw Error(fmt::format("cannot open transcript {}", path.string()));
}

void TranscriptLog::append(const TranscriptRecord& record) {
    const auto line = to_json(record).dump();
    std::lock_guard lock(mutex_);
    out_ << line << '\n';
    out_.flush();
    ++appended_;
}

std::size_t TranscriptLog::appended() const {
    std::lock_guard lock(mutex_);
    return appended_;
}

std::vector<TranscriptRecord> TranscriptLog::load(const std::filesystem::path& path) {
    std::vector<TranscriptRecord> out;
    std::ifstream in(path, std::ios::binary);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const bool last = in.peek() == std::char_traits<char>::eof();
        try {
            out.push_back(transcript_record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            if (last) {
                spdlog::warn("{}:{}: skipping truncated transcript line", path.string(), lineno);
                break;
            }
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return out;
}

} // namespace annot
