#pragma once

#include "annot/backends.hpp"
#include "annot/corpus.hpp"
#include "annot/evaluation.hpp"
#include "annot/prompting.hpp"
#include "annot/scoring.hpp"
#include "annot/tuple_design.hpp"

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace annot {

struct CorpusSource {
    std::filesystem::path path;
    CorpusFormat format = CorpusFormat::ait_tsv;
    Split split = Split::train;
};

struct RunConfig {
    std::vector<CorpusSource> corpora; // one per dimension
    Protocol protocol = Protocol::bws;
    std::optional<RatingScaleSpec> scale; // rs / rs_t only
    bool adapted = false;                 // one multi-emotion prompt per tuple
    RatingAggregation aggregation = RatingAggregation::mean;
    int repeats = 1;
    TupleDesignConfig design;
    std::optional<std::size_t> pc_subset;
    std::optional<std::filesystem::path> design_path; // reuse a design file verbatim
    BackendConfig backend;
    bool latent_from_gold = true; // simulated backends read latent scores from gold
    std::filesystem::path output_dir = "run";
    int shr_iterations = 100;
    std::uint64_t eval_seed = 1;

    // Reads the YAML config; relative paths resolve against the file's folder.
    static RunConfig load(const std::filesystem::path& path);
    static RunConfig from_yaml_text(const std::string& text, const std::filesystem::path& base_dir);
    std::string to_yaml() const;
    // Config errors surface here, before any backend traffic.
    void validate() const;
};

// Thrown when an existing run directory belongs to a different design or corpus.
class ResumeMismatch : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct FailedTuple {
    std::string unit;
    std::size_t tuple_index = 0;
    int repeat = 0;
    std::vector<std::string> ids;
    std::string failure;
    std::vector<std::string> responses;
};

struct RunSummary {
    EvalReport report;
    std::vector<std::pair<std::string, BatchStats>> batch_stats; // per annotation unit
    std::vector<FailedTuple> failed;
    std::size_t requests = 0; // backend requests made by this invocation
};

// Individual stages; each reads what earlier stages left in output_dir.
void stage_design(const RunConfig& cfg);
RunSummary stage_annotate(const RunConfig& cfg);
void stage_score(const RunConfig& cfg);
EvalReport stage_eval(const RunConfig& cfg);

// load -> design -> render -> annotate -> parse -> score -> evaluate -> export.
// Re-running over an existing directory replays recorded attempts and only
// requests what is missing.
RunSummary run_annotation(const RunConfig& cfg);

// --- simulator sweep ---------------------------------------------------------

struct ComparisonConfig {
    std::size_t n = 100;
    double noise_sigma = 0.15;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<double> ks{2, 3, 6, 12};
    std::vector<Protocol> protocols{Protocol::rs, Protocol::rs_t, Protocol::pc, Protocol::bws};
    RatingScaleSpec scale = RatingScaleSpec::parse("D-10");
    std::optional<std::size_t> pc_subset;
    int shr_iterations = 20;
    std::string dimension = "joy";
};

struct ComparisonRow {
    Protocol protocol = Protocol::bws;
    double k = 0.0; // tuple multiplier for bws, 0 otherwise
    std::uint64_t seed = 0;
    double pearson = 0.0;
    std::optional<double> shr;
    std::size_t tuples = 0;
};

struct ComparisonCell {
    Protocol protocol = Protocol::bws;
    double k = 0.0;
    double mean_pearson = 0.0;
    double sd_pearson = 0.0;
    std::optional<double> mean_shr;
    std::size_t seeds = 0;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    std::vector<ComparisonCell> cells;
    // Per seed: BWS at the smallest k against single-text rating.
    std::size_t bws_wins = 0;
    std::size_t bws_losses = 0;

    const ComparisonCell* cell(Protocol p, double k = 0.0) const;
    nlohmann::json to_json() const;
    std::string render_table() const;
};

// N texts with uniform latent intensities drawn from `seed`; the latent value
// is stored as the gold score.
Corpus synthetic_corpus(std::size_t n, std::uint64_t seed, const std::string& dimension);

ComparisonReport run_protocol_comparison(const ComparisonConfig& cfg);
ComparisonConfig comparison_config_from_yaml(const std::string& text);

} // namespace annot
