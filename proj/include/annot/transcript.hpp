#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <string>
#include <vector>

namespace annot {

// One backend attempt as written to transcripts.jsonl.
struct TranscriptRecord {
    std::size_t tuple_index = 0;
    int repeat = 0;
    int attempt = 1;
    std::string prompt_hash;
    std::string response_text;
    std::string timestamp; // ISO-8601 UTC with milliseconds
    std::string backend_id;
    std::string status = "ok"; // ok | transport_error | content_filter | unavailable
    bool from_fallback = false;
    long latency_ms = 0;
};

nlohmann::json to_json(const TranscriptRecord& r);
TranscriptRecord transcript_record_from_json(const nlohmann::json& j);

std::string utc_timestamp_now();

// Append-only JSONL log. Each record is flushed as written so an interrupted
// run leaves a usable prefix.
class TranscriptLog {
public:
    explicit TranscriptLog(const std::filesystem::path& path);

    void append(const TranscriptRecord& record);
    std::size_t appended() const;

    // Reads every complete record. A truncated final line (left by a killed
    // run) is skipped; malformed lines elsewhere throw ParseError.
    static std::vector<TranscriptRecord> load(const std::filesystem::path& path);

private:
    mutable std::mutex mutex_;
    std::ofstream out_;
    std::size_t appended_ = 0;
};

} // namespace annot
