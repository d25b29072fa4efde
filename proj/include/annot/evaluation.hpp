#pragma once

#include "annot/scoring.hpp"

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace annot {

struct Corpus;
struct TupleSet;

// Product-moment correlation. Throws UndefinedCorrelation for mismatched or
// too-short inputs and for zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
// Pearson over average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

struct ShrResult {
    double mean = 0.0;
    std::vector<double> per_iteration;
    std::size_t dropped_items = 0; // summed over iterations
    std::vector<std::string> warnings;
};

// Split-half reliability. Each iteration assigns annotations to two bins,
// scores each bin on its own and correlates the raw scores over items scored
// in both. Tuples annotated more than once are split within the tuple; tuples
// annotated once are split as whole tuples.
ShrResult split_half_reliability(std::span<const Annotation> annotations, const TupleSet& tuple_set, int iterations,
                                 std::uint64_t seed);

struct DimensionReport {
    std::string dimension;
    std::optional<double> pearson;
    std::optional<double> shr;
    int shr_iterations = 0;
    std::size_t n_items = 0;
};

struct EvalReport {
    std::string protocol;
    std::string scale;
    double k = 0.0;
    std::uint64_t seed = 0;
    std::vector<DimensionReport> dimensions;

    // Mean of the defined per-dimension values; n_items is summed.
    DimensionReport mean() const;
    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    // Pearson and SHR are shown x100 with one decimal, one row per dimension
    // plus a Mean row.
    std::string render_table() const;
};

// Pearson of normalized scores against gold over items that have both.
DimensionReport evaluate_dimension(const Corpus& corpus, const ScoreTable& scores,
                                   const std::optional<ShrResult>& shr, int shr_iterations);

} // namespace annot
