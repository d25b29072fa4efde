#pragma once

#include "annot/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace annot {

enum class ScaleLevel { bare, outlined, descriptive };

// A rating scale variant such as "D-10" or "B-1". Granularity 1 means the
// 0.0-1.0 decimal scale, which asks the model to round to four places.
struct RatingScaleSpec {
    ScaleLevel level = ScaleLevel::descriptive;
    int max_value = 10;
    bool decimals = false;

    // Parses the "B-1", "OL-10", "D-4", "OL-100" notation.
    static RatingScaleSpec parse(std::string_view code);
    std::string code() const;
    // Throws PromptError for combinations without a defined template.
    void validate() const;

    bool operator==(const RatingScaleSpec&) const = default;
};

struct TextRef {
    std::string id;
    std::string text;
};

struct PromptBundle {
    std::string role_text;
    std::string user_text;
    Protocol protocol = Protocol::bws;
    std::vector<std::string> tuple_ids;
    std::vector<std::string> tuple_texts;
    std::optional<RatingScaleSpec> scale;
    std::vector<std::string> dimensions;

    bool adapted() const { return dimensions.size() > 1; }
    // Role as the first line, for backends without a system channel.
    std::string inline_text() const;
    // Hex SHA-256 over role and user text.
    std::string hash() const;
};

// Fixed role sentence shared by all protocols.
const std::string& role_text();

PromptBundle render_prompt(Protocol protocol, std::span<const TextRef> texts, std::string_view dimension,
                           const std::optional<RatingScaleSpec>& scale);

// One prompt covering several emotions at once (rs_t or bws only).
PromptBundle render_adapted_multiemotion(std::span<const TextRef> texts, std::span<const std::string> dimensions,
                                         const std::optional<RatingScaleSpec>& scale, Protocol protocol);

// Scale block alone; an empty emotion renders the generic wording used by the
// multi-emotion prompt.
std::string render_scale_block(const RatingScaleSpec& scale, std::string_view emo);

// Number of texts the adapted prompt expects (4 for both supported protocols).
inline constexpr std::size_t adapted_dimension_count = 6;

} // namespace annot
