#include "annot/pipeline.hpp"

#include "annot/rng.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace annot {

using nlohmann::json;

Corpus synthetic_corpus(std::size_t n, std::uint64_t seed, const std::string& dimension) {
    Corpus c;
    c.dimension = dimension;
    Rng rng(derive_seed(seed, {0x5A17}));
    for (std::size_t i = 0; i < n; ++i) {
        TextInstance t;
        t.id = fmt::format("s{:04}", i);
        t.text = fmt::format("synthetic text number {}", i);
        t.dimension = dimension;
        t.gold_score = rng.uniform01();
        c.instances.push_back(std::move(t));
    }
    return c;
}

namespace {

struct Measured {
    double pearson = 0.0;
    std::optional<double> shr;
    std::size_t tuples = 0;
};

Measured measure(const ComparisonConfig& cfg, const Corpus& corpus, const TupleSet& design, Protocol protocol,
                 std::uint64_t seed) {
    BackendConfig b;
    b.kind = BackendKind::simulated;
    b.max_in_flight = 1;
    b.simulated.noise_sigma = cfg.noise_sigma;
    b.simulated.seed = derive_seed(seed, {0xC0DE});
    for (const auto& t : corpus.instances) b.simulated.latent_scores[t.id] = *t.gold_score;

    std::vector<PromptBundle> prompts;
    prompts.reserve(design.size());
    const std::optional<RatingScaleSpec> scale =
        is_comparative(protocol) ? std::nullopt : std::optional<RatingScaleSpec>(cfg.scale);
    for (const auto& tuple : design.tuples) {
        std::vector<TextRef> texts;
        for (const auto& id : tuple) texts.push_back({id, corpus.find(id)->text});
        prompts.push_back(render_prompt(protocol, texts, cfg.dimension, scale));
    }
    const auto batch = Backend(b).run_batch(prompts);

    std::vector<Judgment> judgments;
    std::vector<Annotation> annotations;
    for (const auto& item : batch.items) {
        if (!item.result.judgment) continue;
        judgments.push_back(*item.result.judgment);
        annotations.push_back({item.tuple_index, item.repeat, *item.result.judgment});
    }
    const auto ids = corpus.ids();
    const ScoreTable table = normalize(is_comparative(protocol)
                                           ? score_counting(judgments, ids, seed)
                                           : score_ratings(judgments, ids, RatingAggregation::mean, seed));
    std::vector<double> predicted, gold;
    for (const auto& t : corpus.instances) {
        const auto* row = table.find(t.id);
        if (!row || !row->normalized) continue;
        predicted.push_back(*row->normalized);
        gold.push_back(*t.gold_score);
    }
    Measured m;
    m.tuples = design.size();
    m.pearson = pearson(predicted, gold);
    if (is_comparative(protocol) && cfg.shr_iterations > 0) {
        try {
            m.shr = split_half_reliability(annotations, design, cfg.shr_iterations, derive_seed(seed, {0x5E1F}))
                        .mean;
        } catch (const UndefinedCorrelation&) {
        }
    }
    return m;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

ComparisonReport run_protocol_comparison(const ComparisonConfig& cfg) {
    if (cfg.n < 4) throw ConfigError("the comparison needs at least 4 texts");
    if (cfg.seeds.empty()) throw ConfigError("the comparison needs at least one seed");
    if (cfg.protocols.empty()) throw ConfigError("no protocols selected");
    for (double k : cfg.ks)
        if (!(k > 0.0)) throw ConfigError("every k must be positive");
    cfg.scale.validate();

    ComparisonReport report;
    for (const auto seed : cfg.seeds) {
        const Corpus corpus = synthetic_corpus(cfg.n, seed, cfg.dimension);
        for (const auto protocol : cfg.protocols) {
            std::vector<std::pair<double, TupleSet>> designs;
            switch (protocol) {
            case Protocol::rs: designs.emplace_back(0.0, design_rs_units(corpus, false, seed)); break;
            case Protocol::rs_t: designs.emplace_back(0.0, design_rs_units(corpus, true, seed)); break;
            case Protocol::pc: designs.emplace_back(0.0, design_pc_pairs(corpus, cfg.pc_subset, seed)); break;
            case Protocol::bws:
                for (double k : cfg.ks) {
                    TupleDesignConfig d;
                    d.multiplier_k = k;
                    d.seed = seed;
                    designs.emplace_back(k, design_bws_tuples(corpus, d));
                }
                break;
            }
            for (const auto& [k, design] : designs) {
                const Corpus* scored = &corpus;
                Corpus sampled;
                if (protocol == Protocol::pc && cfg.pc_subset) {
                    std::vector<std::string> used;
                    for (const auto& id : corpus.ids())
                        for (const auto& t : design.tuples)
                            if (t[0] == id || t[1] == id) {
                                used.push_back(id);
                                break;
                            }
                    sampled = corpus.subset(used);
                    scored = &sampled;
                }
                const auto m = measure(cfg, *scored, design, protocol, seed);
                report.rows.push_back({protocol, k, seed, m.pearson, m.shr, m.tuples});
                spdlog::info("compare: seed {} {} k={} pearson {:.4f}", seed, to_string(protocol), k, m.pearson);
            }
        }
    }

    std::map<std::pair<int, double>, std::vector<const ComparisonRow*>> groups;
    for (const auto& r : report.rows) groups[{static_cast<int>(r.protocol), r.k}].push_back(&r);
    for (const auto protocol : cfg.protocols) {
        for (auto& [key, rows] : groups) {
            if (key.first != static_cast<int>(protocol)) continue;
            std::vector<double> ps, ss;
            for (const auto* r : rows) {
                ps.push_back(r->pearson);
                if (r->shr) ss.push_back(*r->shr);
            }
            ComparisonCell c;
            c.protocol = protocol;
            c.k = key.second;
            c.mean_pearson = mean_of(ps);
            c.sd_pearson = sd_of(ps);
            if (!ss.empty()) c.mean_shr = mean_of(ss);
            c.seeds = rows.size();
            report.cells.push_back(c);
        }
    }

    const bool have_both = std::count(cfg.protocols.begin(), cfg.protocols.end(), Protocol::rs) &&
                           std::count(cfg.protocols.begin(), cfg.protocols.end(), Protocol::bws) && !cfg.ks.empty();
    if (have_both) {
        const double k0 = *std::min_element(cfg.ks.begin(), cfg.ks.end());
        for (const auto seed : cfg.seeds) {
            double rs = 0.0, bws = 0.0;
            for (const auto& r : report.rows) {
                if (r.seed != seed) continue;
                if (r.protocol == Protocol::rs) rs = r.pearson;
                if (r.protocol == Protocol::bws && r.k == k0) bws = r.pearson;
            }
            if (bws > rs) ++report.bws_wins;
            else ++report.bws_losses;
        }
    }
    return report;
}

const ComparisonCell* ComparisonReport::cell(Protocol p, double k) const {
    for (const auto& c : cells)
        if (c.protocol == p && c.k == k) return &c;
    return nullptr;
}

json ComparisonReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"protocol", to_string(r.protocol)},
                          {"k", r.k},
                          {"seed", r.seed},
                          {"pearson", r.pearson},
                          {"shr", r.shr ? json(*r.shr) : json(nullptr)},
                          {"tuples", r.tuples}});
    json cells_j = json::array();
    for (const auto& c : cells)
        cells_j.push_back({{"protocol", to_string(c.protocol)},
                           {"k", c.k},
                           {"mean_pearson", c.mean_pearson},
                           {"sd_pearson", c.sd_pearson},
                           {"mean_shr", c.mean_shr ? json(*c.mean_shr) : json(nullptr)},
                           {"seeds", c.seeds}});
    return {{"rows", rows_j}, {"cells", cells_j}, {"bws_vs_rs", {{"wins", bws_wins}, {"losses", bws_losses}}}};
}

std::string ComparisonReport::render_table() const {
    std::string out = fmt::format("{:<9} {:>5} {:>9} {:>7} {:>8} {:>6}\n", "Protocol", "k", "Pearson", "SD", "SHR", "Seeds");
    for (const auto& c : cells) {
        const std::string k = c.protocol == Protocol::bws ? fmt::format("{:g}N", c.k) : "-";
        out += fmt::format("{:<9} {:>5} {:>9.1f} {:>7.1f} {:>8} {:>6}\n", to_string(c.protocol), k,
                           c.mean_pearson * 100.0, c.sd_pearson * 100.0,
                           c.mean_shr ? fmt::format("{:.1f}", *c.mean_shr * 100.0) : "-", c.seeds);
    }
    if (bws_wins + bws_losses > 0)
        out += fmt::format("\nBWS vs RS per seed: {} win(s), {} loss(es)\n", bws_wins, bws_losses);
    return out;
}

ComparisonConfig comparison_config_from_yaml(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(fmt::format("comparison config is not valid YAML: {}", e.what()));
    }
    ComparisonConfig c;
    if (!root || root.IsNull()) return c;
    if (!root.IsMap()) throw ConfigError("comparison config must be a mapping");
    try {
        for (const auto& kv : root) {
            const auto key = kv.first.as<std::string>();
            const auto& v = kv.second;
            if (key == "n") c.n = v.as<std::size_t>();
            else if (key == "noise_sigma") c.noise_sigma = v.as<double>();
            else if (key == "seeds") c.seeds = v.as<std::vector<std::uint64_t>>();
            else if (key == "ks") c.ks = v.as<std::vector<double>>();
            else if (key == "protocols") {
                c.protocols.clear();
                for (const auto& p : v.as<std::vector<std::string>>()) c.protocols.push_back(protocol_from_string(p));
            } else if (key == "scale") c.scale = RatingScaleSpec::parse(v.as<std::string>());
            else if (key == "pc_subset") c.pc_subset = v.as<std::size_t>();
            else if (key == "shr_iterations") c.shr_iterations = v.as<int>();
            else if (key == "dimension") c.dimension = v.as<std::string>();
            else throw ConfigError(fmt::format("unknown comparison key '{}'", key));
        }
    } catch (const YAML::Exception& e) {
        throw ConfigError(fmt::format("bad comparison config value: {}", e.what()));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return c;
}

} // namespace annot
