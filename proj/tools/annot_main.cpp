#include "annot/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

// Flags mirror config keys; a flag only overrides when given.
struct Overrides {
    std::string config;
    std::optional<std::string> protocol, scale, output, backend, model, endpoint, design, aggregation;
    std::optional<double> k, rate_limit, noise_sigma;
    std::optional<std::uint64_t> seed, sim_seed;
    std::optional<int> repeats, max_in_flight, max_retries, shr_iterations;
    std::optional<std::size_t> pc_subset;
    bool adapted = false;

    void add_to(CLI::App& cmd) {
        cmd.add_option("-c,--config", config, "run config (YAML)")->required()->check(CLI::ExistingFile);
        cmd.add_option("--protocol", protocol, "rs | rs_t | pc | bws");
        cmd.add_option("--scale", scale, "rating scale, e.g. D-10 or OL-100");
        cmd.add_option("--aggregation", aggregation, "single | mean");
        cmd.add_option("-o,--output", output, "output directory");
        cmd.add_option("--k", k, "tuple multiplier (bws)");
        cmd.add_option("--seed", seed, "design seed");
        cmd.add_option("--repeats", repeats, "annotation passes per tuple");
        cmd.add_option("--pc-subset", pc_subset, "texts sampled for pairwise comparison");
        cmd.add_option("--design", design, "reuse this design file");
        cmd.add_flag("--adapted", adapted, "one multi-emotion prompt per tuple");
        cmd.add_option("--backend", backend, "http_chat | simulated | replay");
        cmd.add_option("--model", model, "model name (http_chat)");
        cmd.add_option("--endpoint", endpoint, "chat completions URL (http_chat)");
        cmd.add_option("--rate-limit", rate_limit, "requests per second");
        cmd.add_option("--max-in-flight", max_in_flight, "concurrent requests");
        cmd.add_option("--max-retries", max_retries, "attempts per tuple");
        cmd.add_option("--noise-sigma", noise_sigma, "simulator noise");
        cmd.add_option("--sim-seed", sim_seed, "simulator seed");
        cmd.add_option("--shr-iterations", shr_iterations, "split-half iterations");
    }

    annot::RunConfig apply() const {
        auto cfg = annot::RunConfig::load(config);
        try {
            if (protocol) cfg.protocol = annot::protocol_from_string(*protocol);
            if (scale) cfg.scale = annot::RatingScaleSpec::parse(*scale);
            if (aggregation) cfg.aggregation = annot::rating_aggregation_from_string(*aggregation);
            if (backend) cfg.backend.kind = annot::backend_kind_from_string(*backend);
        } catch (const annot::ConfigError&) {
            throw;
        } catch (const annot::Error& e) {
            throw annot::ConfigError(e.what());
        }
        if (output) cfg.output_dir = *output;
        if (k) cfg.design.multiplier_k = *k;
        if (seed) cfg.design.seed = *seed;
        if (repeats) cfg.repeats = *repeats;
        if (pc_subset) cfg.pc_subset = *pc_subset;
        if (design) cfg.design_path = *design;
        if (adapted) cfg.adapted = true;
        if (model) cfg.backend.model_name = *model;
        if (endpoint) cfg.backend.endpoint_url = *endpoint;
        if (rate_limit) cfg.backend.rate_limit = *rate_limit;
        if (max_in_flight) cfg.backend.max_in_flight = *max_in_flight;
        if (max_retries) cfg.backend.max_retries = *max_retries;
        if (noise_sigma) cfg.backend.simulated.noise_sigma = *noise_sigma;
        if (sim_seed) cfg.backend.simulated.seed = *sim_seed;
        if (shr_iterations) cfg.shr_iterations = *shr_iterations;
        cfg.validate();
        return cfg;
    }
};

void print_summary(const annot::RunSummary& s) {
    for (const auto& [unit, st] : s.batch_stats)
        fmt::print("{}: {} of {} items accepted, {} failed, {} retried, {} requests\n", unit, st.accepted, st.items,
                   st.failed, st.retried, st.requests);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLM-based emotion intensity annotation with best-worst scaling and rating scales"};
    app.require_subcommand(1);
    app.fallthrough();
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");
    app.add_flag("-q,--quiet", quiet, "warnings and errors only");

    Overrides design_o, annotate_o, score_o, eval_o, run_o;
    auto* design_cmd = app.add_subcommand("design", "build and write the tuple design");
    design_o.add_to(*design_cmd);
    auto* annotate_cmd = app.add_subcommand("annotate", "render prompts and collect judgments (resumable)");
    annotate_o.add_to(*annotate_cmd);
    auto* score_cmd = app.add_subcommand("score", "turn judgments into scores and labeled.jsonl");
    score_o.add_to(*score_cmd);
    auto* eval_cmd = app.add_subcommand("eval", "correlate scores with gold and write report.json");
    eval_o.add_to(*eval_cmd);
    auto* run_cmd = app.add_subcommand("run", "design, annotate, score and evaluate in one go");
    run_o.add_to(*run_cmd);

    auto* compare_cmd = app.add_subcommand("compare", "simulator sweep over protocols and tuple budgets");
    std::string compare_config, compare_out;
    std::optional<std::size_t> cmp_n, cmp_pc_subset;
    std::optional<double> cmp_sigma;
    std::vector<std::uint64_t> cmp_seeds;
    std::vector<double> cmp_ks;
    std::vector<std::string> cmp_protocols;
    std::optional<int> cmp_shr;
    compare_cmd->add_option("-c,--config", compare_config, "sweep config (YAML)")->check(CLI::ExistingFile);
    compare_cmd->add_option("--n", cmp_n, "synthetic texts per seed");
    compare_cmd->add_option("--noise-sigma", cmp_sigma, "simulator noise");
    compare_cmd->add_option("--seeds", cmp_seeds, "seed list")->delimiter(',');
    compare_cmd->add_option("--ks", cmp_ks, "bws tuple multipliers")->delimiter(',');
    compare_cmd->add_option("--protocols", cmp_protocols, "protocols to compare")->delimiter(',');
    compare_cmd->add_option("--pc-subset", cmp_pc_subset, "texts sampled for pairwise comparison");
    compare_cmd->add_option("--shr-iterations", cmp_shr, "split-half iterations");
    compare_cmd->add_option("-o,--output", compare_out, "write comparison.json and comparison.txt here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

    try {
        if (*design_cmd) {
            annot::stage_design(design_o.apply());
        } else if (*annotate_cmd) {
            print_summary(annot::stage_annotate(annotate_o.apply()));
        } else if (*score_cmd) {
            annot::stage_score(score_o.apply());
        } else if (*eval_cmd) {
            std::cout << annot::stage_eval(eval_o.apply()).render_table();
        } else if (*run_cmd) {
            const auto summary = annot::run_annotation(run_o.apply());
            print_summary(summary);
            std::cout << summary.report.render_table();
            if (!summary.failed.empty())
                fmt::print("{} tuple annotation(s) failed; see report.json\n", summary.failed.size());
        } else if (*compare_cmd) {
            annot::ComparisonConfig cfg;
            if (!compare_config.empty()) {
                std::ifstream in(compare_config);
                std::ostringstream s;
                s << in.rdbuf();
                cfg = annot::comparison_config_from_yaml(s.str());
            }
            if (cmp_n) cfg.n = *cmp_n;
            if (cmp_sigma) cfg.noise_sigma = *cmp_sigma;
            if (!cmp_seeds.empty()) cfg.seeds = cmp_seeds;
            if (!cmp_ks.empty()) cfg.ks = cmp_ks;
            if (!cmp_protocols.empty()) {
                cfg.protocols.clear();
                try {
                    for (const auto& p : cmp_protocols) cfg.protocols.push_back(annot::protocol_from_string(p));
                } catch (const annot::Error& e) {
                    throw annot::ConfigError(e.what());
                }
            }
            if (cmp_pc_subset) cfg.pc_subset = *cmp_pc_subset;
            if (cmp_shr) cfg.shr_iterations = *cmp_shr;
            const auto report = annot::run_protocol_comparison(cfg);
            std::cout << report.render_table();
            if (!compare_out.empty()) {
                fs::create_directories(compare_out);
                std::ofstream(fs::path(compare_out) / "comparison.json") << report.to_json().dump(2) << "\n";
                std::ofstream(fs::path(compare_out) / "comparison.txt") << report.render_table();
            }
        }
    } catch (const annot::ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return 1;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 0;
}
