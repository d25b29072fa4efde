#include "annot/scoring.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace annot {

const ScoreRow* ScoreTable::find(std::string_view id) const {
    for (const auto& r : rows)
        if (r.id == id) return &r;
    return nullptr;
}

std::vector<std::string> ScoreTable::undefined_ids() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (!r.raw) out.push_back(r.id);
    return out;
}

namespace {

std::string real_or_na(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : "NA"; }

std::unordered_map<std::string, std::size_t> index_ids(std::span<const std::string> ids, ScoreTable& table) {
    std::unordered_map<std::string, std::size_t> index;
    table.rows.reserve(ids.size());
    for (const auto& id : ids) {
        if (!index.emplace(id, table.rows.size()).second)
            throw ValidationError(fmt::format("duplicate corpus id '{}'", id));
        ScoreRow row;
        row.id = id;
        table.rows.push_back(std::move(row));
    }
    return index;
}

std::size_t lookup(const std::unordered_map<std::string, std::size_t>& index, const std::string& id) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError(fmt::format("judged id '{}' is not in the corpus", id));
    return it->second;
}

void flag_unjudged(ScoreTable& table) {
    std::size_t missing = 0;
    for (const auto& r : table.rows)
        if (!r.raw) ++missing;
    if (missing) {
        table.warnings.push_back(fmt::format("{} item(s) were never judged and have no score", missing));
        spdlog::warn("scoring: {}", table.warnings.back());
    }
}

} // namespace

void ScoreTable::write_tsv(std::ostream& out) const {
    out << "id\tbest\tworst\tappearances\traw\tnormalized\n";
    for (const auto& r : rows)
        out << r.id << '\t' << r.best << '\t' << r.worst << '\t' << r.appearances << '\t' << real_or_na(r.raw)
            << '\t' << real_or_na(r.normalized) << '\n';
}

ScoreTable ScoreTable::read_tsv(std::istream& in, std::string_view source) {
    ScoreTable t;
    std::string line;
    std::size_t lineno = 0;
    auto real = [&](const std::string& s) -> std::optional<double> {
        if (s == "NA") return std::nullopt;
        try {
            return std::stod(s);
        } catch (const std::exception&) {
            throw ParseError(source, lineno, fmt::format("bad number '{}'", s));
        }
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (lineno == 1 && line.starts_with("id\t"))) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1)
            f.push_back(line.substr(start, pos - start));
        f.push_back(line.substr(start));
        if (f.size() != 6) throw ParseError(source, lineno, fmt::format("expected 6 columns, found {}", f.size()));
        ScoreRow r;
        r.id = f[0];
        try {
            r.best = std::stoi(f[1]);
            r.worst = std::stoi(f[2]);
            r.appearances = std::stoi(f[3]);
        } catch (const std::exception&) {
            throw ParseError(source, lineno, "bad count");
        }
        r.raw = real(f[4]);
        r.normalized = real(f[5]);
        t.rows.push_back(std::move(r));
    }
    return t;
}

RatingAggregation rating_aggregation_from_string(std::string_view s) {
    if (s == "single") return RatingAggregation::single;
    if (s == "mean") return RatingAggregation::mean;
    throw ConfigError(fmt::format("unknown rating aggregation '{}'", s));
}

ScoreTable score_counting(std::span<const Judgment> judgments, std::span<const std::string> corpus_ids,
                          std::uint64_t seed) {
    if (judgments.empty()) throw ValidationError("no judgments to score");
    ScoreTable table;
    table.protocol = judgments.front().protocol;
    table.seed = seed;
    const auto index = index_ids(corpus_ids, table);

    for (const auto& j : judgments) {
        if (!is_comparative(j.protocol) || j.adapted())
            throw ValidationError("counting needs single-dimension best/worst judgments");
        if (!j.best_id || !j.worst_id || *j.best_id == *j.worst_id)
            throw ValidationError("judgment lacks two distinct picks");
        bool best_in = false, worst_in = false;
        for (const auto& id : j.ids) {
            auto& row = table.rows[lookup(index, id)];
            ++row.appearances;
            if (id == *j.best_id) {
                ++row.best;
                best_in = true;
            }
            if (id == *j.worst_id) {
                ++row.worst;
                worst_in = true;
            }
        }
        if (!best_in || !worst_in) throw ValidationError("picked id is not a member of its tuple");
    }
    for (auto& r : table.rows)
        if (r.appearances > 0) r.raw = static_cast<double>(r.best - r.worst) / r.appearances;
    flag_unjudged(table);
    return normalize(std::move(table));
}

ScoreTable score_ratings(std::span<const Judgment> judgments, std::span<const std::string> corpus_ids,
                         RatingAggregation aggregation, std::uint64_t seed) {
    if (judgments.empty()) throw ValidationError("no judgments to score");
    ScoreTable table;
    table.protocol = judgments.front().protocol;
    table.seed = seed;
    const auto index = index_ids(corpus_ids, table);
    std::vector<double> sums(table.rows.size(), 0.0);

    for (const auto& j : judgments) {
        if (is_comparative(j.protocol) || j.adapted())
            throw ValidationError("rating aggregation needs single-dimension rating judgments");
        for (const auto& [id, value] : j.ratings) {
            const auto i = lookup(index, id);
            sums[i] += value;
            ++table.rows[i].appearances;
        }
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        auto& r = table.rows[i];
        if (r.appearances == 0) continue;
        if (aggregation == RatingAggregation::single && r.appearances > 1)
            throw ValidationError(fmt::format("id '{}' rated {} times under single aggregation", r.id, r.appearances));
        r.raw = sums[i] / r.appearances;
    }
    flag_unjudged(table);
    return normalize(std::move(table));
}

ScoreTable normalize(ScoreTable table) {
    std::optional<double> lo, hi;
    for (const auto& r : table.rows) {
        if (!r.raw) continue;
        lo = lo ? std::min(*lo, *r.raw) : *r.raw;
        hi = hi ? std::max(*hi, *r.raw) : *r.raw;
    }
    if (!lo) throw ValidationError("no defined scores to normalize");
    const bool degenerate = *hi == *lo;
    if (degenerate) {
        table.warnings.push_back("all scores are equal; normalized to 0.5");
        spdlog::warn("normalize: {}", table.warnings.back());
    }
    for (auto& r : table.rows) {
        if (!r.raw)
            r.normalized.reset();
        else
            r.normalized = degenerate ? 0.5 : (*r.raw - *lo) / (*hi - *lo);
    }
    return table;
}

std::vector<DominancePair> implied_pairs(std::span<const std::string> tuple, const Judgment& judgment) {
    if (tuple.size() != 4) throw ValidationError("implied pairs need a 4-tuple");
    if (!judgment.best_id || !judgment.worst_id || *judgment.best_id == *judgment.worst_id)
        throw ValidationError("implied pairs need two distinct picks");
    const auto& best = *judgment.best_id;
    const auto& worst = *judgment.worst_id;
    if (std::find(tuple.begin(), tuple.end(), best) == tuple.end() ||
        std::find(tuple.begin(), tuple.end(), worst) == tuple.end())
        throw ValidationError("picked id is not a member of the tuple");

    std::vector<DominancePair> out;
    for (const auto& id : tuple)
        if (id != best) out.push_back({best, id});
    for (const auto& id : tuple)
        if (id != best && id != worst) out.push_back({id, worst});
    return out;
}

std::vector<Judgment> project_dimension(std::span<const Judgment> judgments, const std::string& dimension) {
    std::vector<Judgment> out;
    out.reserve(judgments.size());
    for (const auto& j : judgments) out.push_back(j.project(dimension));
    return out;
}

} // namespace annot
