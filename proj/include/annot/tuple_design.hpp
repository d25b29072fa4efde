#pragma once

#include "annot/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace annot {

struct Corpus;

struct TupleDesignConfig {
    double multiplier_k = 2.0; // tuple budget = round(k * N)
    int tuple_size = 4;
    std::uint64_t seed = 0;
    int max_repair_attempts = 8;
};

struct DesignStats {
    std::vector<int> appearances; // per corpus id, corpus order
    int min_appearance = 0;
    int max_appearance = 0;
    // Sum over unordered id pairs of (occurrences - 1) for pairs seen more than once.
    long repeated_pairs = 0;
};

struct TupleSet {
    Protocol protocol = Protocol::bws;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::string>> tuples;
    DesignStats stats;
    std::vector<std::string> warnings;

    std::size_t size() const { return tuples.size(); }
};

DesignStats compute_design_stats(const std::vector<std::vector<std::string>>& tuples,
                                 const std::vector<std::string>& corpus_ids);

// Quadruples with near-equal appearance counts and (as far as feasible) no id
// pair shared by two tuples. Deterministic in (corpus ids, cfg).
TupleSet design_bws_tuples(const Corpus& corpus, const TupleDesignConfig& cfg);

// All unordered pairs over the corpus, or over a seeded sample of
// `subset_size` ids, each emitted once with a random left/right order.
TupleSet design_pc_pairs(const Corpus& corpus, std::optional<std::size_t> subset_size, std::uint64_t seed);

// Singletons in corpus order, or a seeded partition into 4-tuples (the last
// may be shorter) for rating-scale tuples.
TupleSet design_rs_units(const Corpus& corpus, bool batched, std::uint64_t seed);

// One-line JSON object {protocol, seed, tuples:[[ids...]...]}.
void write_tuple_set(const TupleSet& set, std::ostream& out);
void save_tuple_set(const TupleSet& set, const std::filesystem::path& path);
// Reads a design file and recomputes its stats against the corpus; ids that
// are not in the corpus or repeat inside a tuple are rejected.
TupleSet read_tuple_set(std::istream& in, const Corpus& corpus, std::string_view source_name);
TupleSet load_tuple_set(const std::filesystem::path& path, const Corpus& corpus);

} // namespace annot
