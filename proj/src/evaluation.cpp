#include "annot/evaluation.hpp"

#include "annot/corpus.hpp"
#include "annot/rng.hpp"
#include "annot/tuple_design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace annot {

using nlohmann::json;

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw UndefinedCorrelation("correlation inputs differ in length");
    const std::size_t n = x.size();
    if (n < 2) throw UndefinedCorrelation("correlation needs at least two points");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw UndefinedCorrelation("correlation undefined for zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// Raw per-item scores for one bin: counting for picks, mean for ratings.
std::vector<std::optional<double>> bin_scores(std::span<const Annotation> annotations,
                                              const std::vector<std::size_t>& members,
                                              const std::unordered_map<std::string, std::size_t>& index) {
    const std::size_t n = index.size();
    std::vector<double> sum(n, 0.0);
    std::vector<int> seen(n, 0);
    for (auto m : members) {
        const auto& j = annotations[m].judgment;
        if (is_comparative(j.protocol)) {
            for (const auto& id : j.ids) {
                const auto i = index.at(id);
                ++seen[i];
                if (id == j.best_id) sum[i] += 1.0;
                if (id == j.worst_id) sum[i] -= 1.0;
            }
        } else {
            for (const auto& [id, v] : j.ratings) {
                const auto i = index.at(id);
                ++seen[i];
                sum[i] += v;
            }
        }
    }
    std::vector<std::optional<double>> out(n);
    for (std::size_t i = 0; i < n; ++i)
        if (seen[i] > 0) out[i] = sum[i] / seen[i];
    return out;
}

} // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw UndefinedCorrelation("correlation inputs differ in length");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    return pearson(rx, ry);
}

ShrResult split_half_reliability(std::span<const Annotation> annotations, const TupleSet& tuple_set, int iterations,
                                 std::uint64_t seed) {
    if (iterations < 1) throw ValidationError("split-half reliability needs at least one iteration");
    if (annotations.empty()) throw ValidationError("no annotations");

    std::unordered_map<std::string, std::size_t> index;
    for (const auto& t : tuple_set.tuples)
        for (const auto& id : t) index.emplace(id, index.size());

    std::map<std::size_t, std::vector<std::size_t>> by_tuple;
    for (std::size_t a = 0; a < annotations.size(); ++a) {
        const auto& ann = annotations[a];
        if (ann.judgment.adapted()) throw ValidationError("project multi-emotion judgments before split-half");
        if (ann.tuple_index >= tuple_set.size()) throw ValidationError("annotation refers to an unknown tuple");
        by_tuple[ann.tuple_index].push_back(a);
    }

    ShrResult result;
    for (int it = 0; it < iterations; ++it) {
        Rng rng(derive_seed(seed, {0x5E1F, static_cast<std::uint64_t>(it)}));
        std::vector<std::size_t> bin_a, bin_b, singles;
        for (auto& [tuple, members] : by_tuple) {
            if (members.size() == 1) {
                singles.push_back(members.front());
                continue;
            }
            auto shuffled = members;
            rng.shuffle(std::span(shuffled));
            const std::size_t half = shuffled.size() / 2;
            const std::size_t to_a = shuffled.size() % 2 && rng.below(2) ? half + 1 : half;
            bin_a.insert(bin_a.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(to_a));
            bin_b.insert(bin_b.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(to_a), shuffled.end());
        }
        rng.shuffle(std::span(singles));
        const std::size_t ceil_half = (singles.size() + 1) / 2;
        bin_a.insert(bin_a.end(), singles.begin(), singles.begin() + static_cast<std::ptrdiff_t>(ceil_half));
        bin_b.insert(bin_b.end(), singles.begin() + static_cast<std::ptrdiff_t>(ceil_half), singles.end());

        const auto sa = bin_scores(annotations, bin_a, index);
        const auto sb = bin_scores(annotations, bin_b, index);
        std::vector<double> xa, xb;
        std::size_t dropped = 0;
        for (std::size_t i = 0; i < sa.size(); ++i) {
            if (sa[i] && sb[i]) {
                xa.push_back(*sa[i]);
                xb.push_back(*sb[i]);
            } else if (sa[i] || sb[i]) {
                ++dropped;
            }
        }
        result.dropped_items += dropped;
        try {
            result.per_iteration.push_back(pearson(xa, xb));
        } catch (const UndefinedCorrelation& e) {
            result.warnings.push_back(fmt::format("iteration {}: {}", it, e.what()));
        }
    }
    if (result.dropped_items > 0) {
        result.warnings.push_back(
            fmt::format("{} item-iteration(s) scored in only one bin were dropped", result.dropped_items));
        spdlog::warn("split-half: {}", result.warnings.back());
    }
    if (result.per_iteration.empty()) throw UndefinedCorrelation("split-half correlation undefined in every iteration");
    result.mean = std::accumulate(result.per_iteration.begin(), result.per_iteration.end(), 0.0) /
                  static_cast<double>(result.per_iteration.size());
    return result;
}

DimensionReport evaluate_dimension(const Corpus& corpus, const ScoreTable& scores, const std::optional<ShrResult>& shr,
                                   int shr_iterations) {
    DimensionReport r;
    r.dimension = corpus.dimension;
    std::vector<double> gold, predicted;
    for (const auto& t : corpus.instances) {
        const auto* row = scores.find(t.id);
        if (!row || !row->normalized) continue;
        ++r.n_items;
        if (!t.gold_score) continue;
        gold.push_back(*t.gold_score);
        predicted.push_back(*row->normalized);
    }
    try {
        r.pearson = pearson(predicted, gold);
    } catch (const UndefinedCorrelation& e) {
        spdlog::warn("{}: pearson vs gold undefined: {}", corpus.dimension, e.what());
    }
    if (shr) {
        r.shr = shr->mean;
        r.shr_iterations = shr_iterations;
    }
    return r;
}

DimensionReport EvalReport::mean() const {
    DimensionReport m;
    m.dimension = "Mean";
    double ps = 0.0, ss = 0.0;
    int pn = 0, sn = 0;
    for (const auto& d : dimensions) {
        if (d.pearson) {
            ps += *d.pearson;
            ++pn;
        }
        if (d.shr) {
            ss += *d.shr;
            ++sn;
        }
        m.n_items += d.n_items;
        m.shr_iterations = std::max(m.shr_iterations, d.shr_iterations);
    }
    if (pn) m.pearson = ps / pn;
    if (sn) m.shr = ss / sn;
    return m;
}

namespace {

json row_json(const EvalReport& r, const DimensionReport& d) {
    json o = json::object();
    o["dimension"] = d.dimension;
    o["protocol"] = r.protocol;
    o["scale"] = r.scale;
    o["k"] = r.k;
    o["pearson"] = d.pearson ? json(*d.pearson) : json(nullptr);
    o["shr"] = d.shr ? json(*d.shr) : json(nullptr);
    o["shr_iterations"] = d.shr_iterations;
    o["n_items"] = d.n_items;
    o["seed"] = r.seed;
    return o;
}

DimensionReport row_from_json(const json& o) {
    DimensionReport d;
    d.dimension = o.at("dimension").get<std::string>();
    if (!o.at("pearson").is_null()) d.pearson = o.at("pearson").get<double>();
    if (!o.at("shr").is_null()) d.shr = o.at("shr").get<double>();
    d.shr_iterations = o.value("shr_iterations", 0);
    d.n_items = o.at("n_items").get<std::size_t>();
    return d;
}

std::string pct(const std::optional<double>& v) { return v ? fmt::format("{:.1f}", *v * 100.0) : "-"; }

} // namespace

json EvalReport::to_json() const {
    json rows = json::array();
    for (const auto& d : dimensions) rows.push_back(row_json(*this, d));
    json o = json::object();
    o["rows"] = rows;
    o["mean"] = row_json(*this, mean());
    return o;
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    const auto& rows = j.at("rows");
    if (!rows.empty()) {
        r.protocol = rows.front().at("protocol").get<std::string>();
        r.scale = rows.front().at("scale").get<std::string>();
        r.k = rows.front().at("k").get<double>();
        r.seed = rows.front().at("seed").get<std::uint64_t>();
    }
    for (const auto& row : rows) r.dimensions.push_back(row_from_json(row));
    return r;
}

std::string EvalReport::render_table() const {
    std::string out = fmt::format("{:<12} {:>8} {:>8} {:>7}\n", "Dimension", "Pearson", "SHR", "N");
    auto line = [&](const DimensionReport& d) {
        out += fmt::format("{:<12} {:>8} {:>8} {:>7}\n", d.dimension, pct(d.pearson), pct(d.shr), d.n_items);
    };
    for (const auto& d : dimensions) line(d);
    line(mean());
    return out;
}

} // namespace annot
