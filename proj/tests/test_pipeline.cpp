#include "annot/pipeline.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>

using namespace annot;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string base_yaml(const std::string& extra = "") {
    return "protocol: bws\n"
           "corpora:\n"
           "  - path: joy.tsv\n"
           "design:\n"
           "  k: 2\n"
           "  seed: 7\n"
           "backend:\n"
           "  kind: simulated\n"
           "  max_in_flight: 2\n"
           "  backoff_base_ms: 1\n"
           "  simulated:\n"
           "    noise_sigma: 0.1\n"
           "    seed: 3\n"
           "evaluation:\n"
           "  shr_iterations: 10\n"
           "output_dir: out\n" +
           extra;
}

RunConfig setup(const testing::TempDir& dir, std::size_t n = 100, const std::string& extra = "") {
    testing::write_ait(dir / "joy.tsv", testing::ladder_corpus(n));
    testing::spit(dir / "run.yaml", base_yaml(extra));
    return RunConfig::load(dir / "run.yaml");
}

std::size_t design_size(const fs::path& p) { return json::parse(testing::slurp(p)).at("tuples").size(); }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(ANNOT_CLI_PATH) + " -q " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config: YAML keys, defaults and path resolution") {
    testing::TempDir dir("cfg");
    const auto cfg = setup(dir);
    CHECK(cfg.protocol == Protocol::bws);
    CHECK(cfg.design.multiplier_k == 2.0);
    CHECK(cfg.design.seed == 7u);
    CHECK(cfg.repeats == 1);
    CHECK(cfg.corpora.at(0).path == dir / "joy.tsv");
    CHECK(cfg.output_dir == dir / "out");
    CHECK(cfg.backend.kind == BackendKind::simulated);
    CHECK(cfg.backend.simulated.noise_sigma == doctest::Approx(0.1));
    CHECK(cfg.shr_iterations == 10);
    CHECK_NOTHROW(cfg.validate());

    const auto again = RunConfig::from_yaml_text(cfg.to_yaml(), "");
    CHECK(again.to_yaml() == cfg.to_yaml());
}

TEST_CASE("config: errors") {
    testing::TempDir dir("cfgerr");
    testing::write_ait(dir / "joy.tsv", testing::ladder_corpus(8));
    CHECK_THROWS_AS(RunConfig::from_yaml_text("protocl: bws\n", dir.path()), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_yaml_text("backend: {kind: telepathy}\n", dir.path()), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_yaml_text("backend: {simulated: {sigma: 1}}\n", dir.path()), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_yaml_text("repeats: many\n", dir.path()), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_yaml_text("corpora: [{path: a, format: xml}]\n", dir.path()), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_yaml_text("protocol: [bws\n", dir.path()), ConfigError);

    auto validated = [&](const std::string& yaml) { RunConfig::from_yaml_text(yaml, dir.path()).validate(); };
    CHECK_THROWS_AS(validated("protocol: bws\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: nope.tsv}]\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\nprotocol: rs\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\nprotocol: bws\nscale: D-10\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\nprotocol: rs\nscale: Q-7\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\nrepeats: 0\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\ndesign: {tuple_size: 5}\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\ndesign: {pc_subset: 10}\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\nadapted: true\n"), ConfigError);
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\nbackend: {kind: replay, replay_path: none.jsonl}\n"),
                    ConfigError);
    ::unsetenv("ANNOT_PIPELINE_UNSET_KEY");
    CHECK_THROWS_AS(validated("corpora: [{path: joy.tsv}]\nbackend: {kind: http_chat, endpoint_url: "
                              "'http://127.0.0.1:9/x', api_key_env: ANNOT_PIPELINE_UNSET_KEY}\n"),
                    ConfigError);
}

TEST_CASE("simulated run writes every artifact") {
    testing::TempDir dir("run");
    const auto cfg = setup(dir);
    const auto summary = run_annotation(cfg);

    const auto out = dir / "out";
    for (const char* f : {"config.yaml", "report.json", "report.txt", "joy/design.jsonl", "joy/manifest.json",
                          "joy/transcripts.jsonl", "joy/judgments.jsonl", "joy/scores.tsv", "joy/labeled.jsonl"})
        CHECK_MESSAGE(fs::exists(out / f), f);
    CHECK(design_size(out / "joy/design.jsonl") == 200);
    CHECK(testing::count_lines(out / "joy/judgments.jsonl") == 200);
    CHECK(testing::count_lines(out / "joy/labeled.jsonl") == 100);
    CHECK(testing::count_lines(out / "joy/scores.tsv") == 101);
    CHECK(summary.requests == 200);
    CHECK(summary.failed.empty());

    const auto report = json::parse(testing::slurp(out / "report.json"));
    REQUIRE(report.at("rows").size() == 1);
    const auto& row = report.at("rows")[0];
    CHECK(row.at("protocol") == "bws");
    CHECK(row.at("dimension") == "joy");
    CHECK(row.at("k") == 2.0);
    CHECK(row.at("pearson").get<double>() > 0.9);
    CHECK(row.at("shr").get<double>() > 0.5);
    CHECK(report.contains("mean"));
    CHECK(report.at("stats")[0].at("accepted") == 200);
    CHECK(report.at("failed_tuples").empty());

    const auto first = json::parse(testing::slurp(out / "joy/labeled.jsonl").substr(
        0, testing::slurp(out / "joy/labeled.jsonl").find('\n')));
    CHECK(first.at("id") == "t000");
    CHECK(first.at("dimension") == "joy");
    CHECK(first.contains("text"));
    CHECK(first.at("score").is_number());
}

TEST_CASE("identical configs give identical outputs") {
    testing::TempDir a("det_a"), b("det_b");
    run_annotation(setup(a));
    run_annotation(setup(b));
    for (const char* f : {"joy/scores.tsv", "joy/labeled.jsonl", "joy/design.jsonl", "joy/judgments.jsonl", "report.json"})
        CHECK_MESSAGE(testing::slurp(a / "out" / f) == testing::slurp(b / "out" / f), f);
}

TEST_CASE("resume requests only what is missing") {
    testing::TempDir dir("resume");
    const auto cfg = setup(dir);
    run_annotation(cfg);
    const auto out = dir / "out";
    const auto full_scores = testing::slurp(out / "joy/scores.tsv");

    // Keep the first 120 transcript lines, as if the run had been killed.
    const auto transcript = testing::slurp(out / "joy/transcripts.jsonl");
    std::size_t pos = 0;
    for (int i = 0; i < 120; ++i) pos = transcript.find('\n', pos) + 1;
    testing::spit(out / "joy/transcripts.jsonl", transcript.substr(0, pos) + "{\"tuple_ind");
    fs::remove(out / "joy/judgments.jsonl");

    const auto resumed = run_annotation(cfg);
    CHECK(resumed.requests == 80);
    CHECK(testing::slurp(out / "joy/scores.tsv") == full_scores);

    const auto again = run_annotation(cfg);
    CHECK(again.requests == 0);
}

TEST_CASE("a run directory from another design is refused") {
    testing::TempDir dir("mismatch");
    auto cfg = setup(dir, 40);
    run_annotation(cfg);
    cfg.design.seed = 8;
    CHECK_THROWS_AS(run_annotation(cfg), ResumeMismatch);
    CHECK_THROWS_AS(stage_score(cfg), ResumeMismatch);
}

TEST_CASE("stages run one at a time") {
    testing::TempDir dir("stages");
    const auto cfg = setup(dir, 40);
    CHECK_THROWS_AS(stage_score(cfg), Error);
    stage_design(cfg);
    CHECK(design_size(dir / "out/joy/design.jsonl") == 80);
    CHECK_FALSE(fs::exists(dir / "out/joy/judgments.jsonl"));
    stage_annotate(cfg);
    stage_score(cfg);
    const auto report = stage_eval(cfg);
    REQUIRE(report.dimensions.size() == 1);
    CHECK(report.dimensions[0].n_items == 40);
}

TEST_CASE("a stored design is reused verbatim") {
    testing::TempDir dir("reuse");
    auto cfg = setup(dir, 40);
    stage_design(cfg);
    const auto design = testing::slurp(dir / "out/joy/design.jsonl");
    cfg.design_path = dir / "out/joy/design.jsonl";
    cfg.design.seed = 99;
    cfg.output_dir = dir / "out2";
    stage_design(cfg);
    CHECK(testing::slurp(dir / "out2/joy/design.jsonl") == design);
}

TEST_CASE("failed tuples are reported and left out of scoring") {
    testing::TempDir dir("failed");
    auto cfg = setup(dir, 40);
    cfg.backend.simulated.content_filter_ids = {"t003"};
    const auto summary = run_annotation(cfg);
    REQUIRE(summary.failed.size() == 8);
    for (const auto& f : summary.failed)
        CHECK(std::find(f.ids.begin(), f.ids.end(), "t003") != f.ids.end());

    const auto report = json::parse(testing::slurp(dir / "out/report.json"));
    CHECK(report.at("failed_tuples").size() == 8);
    CHECK(report.at("stats")[0].at("failed") == 8);
    CHECK(report.at("stats")[0].at("accepted") == 72);
    CHECK(report.at("rows")[0].at("n_items") == 39);
    CHECK(testing::count_lines(dir / "out/joy/labeled.jsonl") == 39);
    CHECK(testing::slurp(dir / "out/report.txt").find("8 tuple annotation(s) failed") != std::string::npos);

    cfg.backend.max_retries = 2;
    cfg.backend.simulated.content_filter_ids.clear();
    cfg.backend.simulated.forced_malformed_attempts = 5;
    cfg.output_dir = dir / "all_failed";
    CHECK_THROWS_AS(run_annotation(cfg), Error);
    CHECK(testing::slurp(dir / "all_failed/joy/judgments.jsonl").find("max_retries (2) exhausted") != std::string::npos);
}

TEST_CASE("rating protocols and repeats") {
    testing::TempDir dir("rating");
    auto cfg = setup(dir, 30);
    cfg.protocol = Protocol::rs;
    cfg.scale = RatingScaleSpec::parse("D-10");
    cfg.repeats = 2;
    const auto summary = run_annotation(cfg);
    CHECK(summary.requests == 60);
    REQUIRE(summary.report.dimensions.size() == 1);
    CHECK(summary.report.dimensions[0].shr.has_value());
    const auto report = json::parse(testing::slurp(dir / "out/report.json"));
    CHECK(report.at("rows")[0].at("scale") == "D-10");
    CHECK(report.at("rows")[0].at("k") == 0.0);

    cfg.repeats = 1;
    cfg.output_dir = dir / "single";
    const auto once = run_annotation(cfg);
    CHECK_FALSE(once.report.dimensions[0].shr.has_value());
}

TEST_CASE("pairwise comparison on a sampled subset") {
    testing::TempDir dir("pc");
    auto cfg = setup(dir, 40);
    cfg.protocol = Protocol::pc;
    cfg.pc_subset = 12;
    const auto summary = run_annotation(cfg);
    CHECK(summary.requests == 66);
    CHECK(summary.report.dimensions[0].n_items == 12);
    CHECK(testing::count_lines(dir / "out/joy/labeled.jsonl") == 12);
}

TEST_CASE("adapted multi-emotion run scores all six dimensions") {
    testing::TempDir dir("adapted");
    std::string yaml = "protocol: bws\nadapted: true\ndesign: {k: 2, seed: 5}\n"
                       "backend: {kind: simulated, simulated: {noise_sigma: 0.05, seed: 1}}\n"
                       "evaluation: {shr_iterations: 5}\noutput_dir: out\ncorpora:\n";
    const std::vector<std::string> dims{"anger", "disgust", "fear", "joy", "sadness", "surprise"};
    for (const auto& d : dims) {
        testing::write_ait(dir / (d + ".tsv"), testing::ladder_corpus(24, d));
        yaml += "  - path: " + d + ".tsv\n";
    }
    testing::spit(dir / "run.yaml", yaml);
    const auto cfg = RunConfig::load(dir / "run.yaml");
    const auto summary = run_annotation(cfg);
    CHECK(summary.requests == 48);
    REQUIRE(summary.report.dimensions.size() == 6);
    for (const auto& d : summary.report.dimensions) {
        CAPTURE(d.dimension);
        CHECK(*d.pearson > 0.8);
        CHECK(fs::exists(dir / "out" / d.dimension / "labeled.jsonl"));
    }
    CHECK(fs::exists(dir / "out/adapted/transcripts.jsonl"));
    const auto report = json::parse(testing::slurp(dir / "out/report.json"));
    CHECK(report.at("rows").size() == 6);
    CHECK(report.at("mean").at("dimension") == "Mean");
}

TEST_CASE("two corpora for one dimension are rejected") {
    testing::TempDir dir("dupdim");
    auto cfg = setup(dir, 10);
    cfg.corpora.push_back(cfg.corpora.front());
    CHECK_THROWS_AS(stage_design(cfg), ConfigError);
}

TEST_CASE("protocol comparison on a small sweep") {
    ComparisonConfig c;
    c.n = 40;
    c.seeds = {1, 2};
    c.ks = {2, 6};
    c.shr_iterations = 3;
    const auto report = run_protocol_comparison(c);
    CHECK(report.rows.size() == 2 * 5);
    REQUIRE(report.cell(Protocol::bws, 6.0));
    CHECK(report.cell(Protocol::bws, 6.0)->seeds == 2);
    CHECK(report.cell(Protocol::bws, 6.0)->mean_pearson > report.cell(Protocol::bws, 2.0)->mean_pearson - 0.05);
    CHECK(report.bws_wins + report.bws_losses == 2);
    CHECK(report.render_table().find("6N") != std::string::npos);
    CHECK(report.to_json().at("rows").size() == 10);

    const auto parsed = comparison_config_from_yaml("n: 50\nks: [1, 2]\nprotocols: [bws, rs]\n");
    CHECK(parsed.n == 50);
    CHECK(parsed.ks == std::vector<double>{1, 2});
    CHECK(parsed.protocols.size() == 2);
    CHECK_THROWS_AS(comparison_config_from_yaml("m: 1\n"), ConfigError);
}

TEST_CASE("cli exit codes") {
    testing::TempDir dir("cli");
    setup(dir, 20);
    const auto cfg = (dir / "run.yaml").string();
    CHECK(run_cli("run -c " + cfg) == 0);
    CHECK(fs::exists(dir / "out/report.json"));
    CHECK(run_cli("run -c " + cfg + " --seed 99") == 1);
    CHECK(run_cli("run -c " + cfg + " --protocol nonsense -o " + (dir / "x").string()) == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("score -c " + cfg + " -o " + (dir / "empty").string()) == 2);
    CHECK(run_cli("compare --n 12 --seeds 1 --ks 2 --shr-iterations 1 -o " + (dir / "cmp").string()) == 0);
    CHECK(fs::exists(dir / "cmp/comparison.json"));
}

}
