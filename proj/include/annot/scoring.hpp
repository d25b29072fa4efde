#pragma once

#include "annot/parsing.hpp"
#include "annot/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace annot {

struct ScoreRow {
    std::string id;
    int best = 0;
    int worst = 0;
    int appearances = 0;
    std::optional<double> raw;        // unset when the item was never judged
    std::optional<double> normalized; // unset iff raw is unset

    bool operator==(const ScoreRow&) const = default;
};

// Per-text scores for one corpus under one protocol, in corpus order.
class ScoreTable {
public:
    Protocol protocol = Protocol::bws;
    std::uint64_t seed = 0;
    std::vector<ScoreRow> rows;
    std::vector<std::string> warnings;

    const ScoreRow* find(std::string_view id) const;
    std::vector<std::string> undefined_ids() const;

    // Columns: id, best, worst, appearances, raw, normalized. Reals use six
    // decimals, undefined values are written as NA.
    void write_tsv(std::ostream& out) const;
    static ScoreTable read_tsv(std::istream& in, std::string_view source_name);
};

enum class RatingAggregation { single, mean };
RatingAggregation rating_aggregation_from_string(std::string_view s);

// Counting method: raw = (#best - #worst) / #appearances over judged tuples,
// then min-max normalized. Judgments must be single-dimension pc/bws picks.
ScoreTable score_counting(std::span<const Judgment> judgments, std::span<const std::string> corpus_ids,
                          std::uint64_t seed = 0);

// Direct ratings; `mean` averages repeated ratings of the same id.
ScoreTable score_ratings(std::span<const Judgment> judgments, std::span<const std::string> corpus_ids,
                         RatingAggregation aggregation, std::uint64_t seed = 0);

// Maps defined raw scores affinely onto [0,1]. If all raws are equal every
// defined item gets 0.5 and a warning is recorded.
ScoreTable normalize(ScoreTable table);

struct DominancePair {
    std::string winner;
    std::string loser;
    bool operator==(const DominancePair&) const = default;
};

// The five pairwise orderings implied by a best/worst pick over a 4-tuple.
// The pair between the two unchosen items is not implied.
std::vector<DominancePair> implied_pairs(std::span<const std::string> tuple, const Judgment& judgment);

// Single-dimension views of multi-emotion judgments.
std::vector<Judgment> project_dimension(std::span<const Judgment> judgments, const std::string& dimension);

} // namespace annot

namespace annot {

// A judgment tagged with the tuple it answers; `repeat` distinguishes repeated
// passes over the same tuple.
struct Annotation {
    std::size_t tuple_index = 0;
    int repeat = 0;
    Judgment judgment;
};

} // namespace annot
