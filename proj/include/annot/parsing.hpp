#pragma once

#include "annot/prompting.hpp"
#include "annot/types.hpp"

#include <json.hpp>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace annot {

struct DimensionJudgment {
    std::vector<std::pair<std::string, double>> ratings;
    std::optional<std::string> best_id;
    std::optional<std::string> worst_id;

    bool operator==(const DimensionJudgment&) const = default;
};

// One accepted answer for one tuple. Ratings for rs/rs_t, a best/worst pick
// for pc/bws, and per-dimension sub-judgments for multi-emotion prompts.
struct Judgment {
    Protocol protocol = Protocol::bws;
    std::vector<std::string> ids;
    std::vector<std::pair<std::string, double>> ratings;
    std::optional<std::string> best_id;
    std::optional<std::string> worst_id;
    std::map<std::string, DimensionJudgment> per_dimension;

    bool adapted() const { return !per_dimension.empty(); }
    // Single-dimension view of a multi-emotion judgment.
    Judgment project(const std::string& dimension) const;

    bool operator==(const Judgment&) const = default;
};

// Either an accepted Judgment or the reason the answer was not acceptable.
struct ParseOutcome {
    std::optional<Judgment> judgment;
    std::string reason;

    explicit operator bool() const { return judgment.has_value(); }
    static ParseOutcome accept(Judgment j) { return {std::move(j), {}}; }
    static ParseOutcome reject(std::string why) { return {std::nullopt, std::move(why)}; }
};

ParseOutcome parse_rating(std::string_view response, std::span<const std::string> expected_ids,
                          const RatingScaleSpec& scale);

// `texts` enables matching an answer that repeats a speaker's text verbatim.
ParseOutcome parse_best_worst(std::string_view response, std::span<const std::string> expected_ids,
                              std::span<const std::string> texts = {});

ParseOutcome parse_adapted_ratings(std::string_view response, std::span<const std::string> expected_ids,
                                   std::span<const std::string> dimensions, const RatingScaleSpec& scale);
ParseOutcome parse_adapted_best_worst(std::string_view response, std::span<const std::string> expected_ids,
                                      std::span<const std::string> dimensions,
                                      std::span<const std::string> texts = {});

// Dispatches on the prompt's protocol and variant.
ParseOutcome parse_response(const PromptBundle& prompt, std::string_view response);

nlohmann::json to_json(const Judgment& j);
Judgment judgment_from_json(const nlohmann::json& j);

} // namespace annot
