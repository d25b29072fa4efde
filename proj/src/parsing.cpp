#include "annot/parsing.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <regex>

#include <fmt/format.h>

namespace annot {

using nlohmann::json;

Judgment Judgment::project(const std::string& dimension) const {
    if (!adapted()) return *this;
    auto it = per_dimension.find(dimension);
    if (it == per_dimension.end()) throw ValidationError(fmt::format("judgment has no dimension '{}'", dimension));
    Judgment out;
    out.protocol = protocol;
    out.ids = ids;
    out.ratings = it->second.ratings;
    out.best_id = it->second.best_id;
    out.worst_id = it->second.worst_id;
    return out;
}

namespace {

constexpr auto icase = std::regex::ECMAScript | std::regex::icase;
const char* const kNumber = R"(([-+]?(?:\d+(?:\.\d*)?|\.\d+)))";

std::vector<std::string> lines_of(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char c : text) {
        if (c == '\n') {
            out.push_back(std::move(current));
            current.clear();
        } else if (c != '\r' && c != '*') { // markdown emphasis is noise
            current.push_back(c);
        }
    }
    out.push_back(std::move(current));
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\"'`");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\"'`.");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::optional<double> to_number(const std::string& token) {
    std::string_view s = token;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<std::string> check_rating(double v, const RatingScaleSpec& scale, double& out) {
    if (!std::isfinite(v) || v < 0.0 || v > scale.max_value)
        return fmt::format("rating {} outside [0, {}]", v, scale.max_value);
    out = scale.decimals ? std::round(v * 1e4) / 1e4 : v;
    return std::nullopt;
}

// Numeric tokens in reading order, after dropping "/10" or "out of 10" style
// scale references.
std::vector<double> bare_numbers(std::string_view response, int max_value) {
    std::string text(response);
    const std::regex scale_ref(fmt::format(R"((?:/|\bout\s+of)\s*{}(?:\.0+)?\b)", max_value), icase);
    text = std::regex_replace(text, scale_ref, " ");
    static const std::regex number(kNumber);
    std::vector<double> out;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it) {
        // Skip digits glued to letters ("GPT4", "text1").
        const auto pos = static_cast<std::size_t>(it->position());
        if (pos > 0 && std::isalpha(static_cast<unsigned char>(text[pos - 1]))) continue;
        if (auto v = to_number(it->str(1))) out.push_back(*v);
    }
    return out;
}

// Resolves a speaker reference: "3", "Speaker 3", "#3", "Speaker 3: ...", or
// the verbatim text of one speaker.
std::optional<std::size_t> resolve_speaker(const std::string& raw, std::size_t n, std::span<const std::string> texts) {
    static const std::regex numeric(R"(^\s*(?:speaker|text)?\s*#?\s*(\d+)\s*[.)]?\s*$)", icase);
    static const std::regex labeled(R"(^\s*(?:speaker|text)\s*#?\s*(\d+)\b)", icase);
    std::smatch m;
    if (std::regex_match(raw, m, numeric) || std::regex_search(raw, m, labeled)) {
        const auto idx = std::stoul(m.str(1));
        if (idx >= 1 && idx <= n) return idx - 1;
        return n; // out of range marker
    }
    const auto needle = lower(trim(raw));
    if (needle.empty()) return std::nullopt;
    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (lower(trim(texts[i])) == needle) {
            if (hit) return std::nullopt;
            hit = i;
        }
    }
    return hit;
}

struct PickResult {
    std::optional<std::size_t> most;
    std::optional<std::size_t> least;
    std::string error;
};

// Reads "Most ...: X" / "Least ...: X" lines. When `dimension` is non-empty
// the label must name it.
PickResult read_labeled_picks(const std::vector<std::string>& lines, std::size_t n, std::span<const std::string> texts,
                              const std::string& dimension) {
    static const std::regex line_re(R"(^\s*[-#>]*\s*(most|least)\b([^:]*):\s*(.*)$)", icase);
    PickResult r;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::smatch m;
        if (!std::regex_match(lines[i], m, line_re)) continue;
        if (!dimension.empty()) {
            const auto label = " " + lower(m.str(2)) + " ";
            if (label.find(" " + lower(dimension) + " ") == std::string::npos) continue;
        }
        std::string value = m.str(3);
        if (trim(value).empty()) {
            // Answer on the following line.
            for (std::size_t j = i + 1; j < lines.size(); ++j) {
                if (trim(lines[j]).empty()) continue;
                std::smatch other;
                if (!std::regex_match(lines[j], other, line_re)) value = lines[j];
                break;
            }
        }
        auto idx = resolve_speaker(value, n, texts);
        auto& slot = lower(m.str(1)) == "most" ? r.most : r.least;
        const char* which = lower(m.str(1)) == "most" ? "most" : "least";
        if (!idx) {
            r.error = fmt::format("cannot resolve {} answer '{}'", which, trim(value));
            return r;
        }
        if (*idx >= n) {
            r.error = fmt::format("{} answer '{}' out of range 1..{}", which, trim(value), n);
            return r;
        }
        if (slot && *slot != *idx) {
            r.error = fmt::format("conflicting {} answers", which);
            return r;
        }
        slot = idx;
    }
    return r;
}

std::optional<std::string> finish_pick(const PickResult& picks, std::span<const std::string> ids,
                                       std::optional<std::string>& best, std::optional<std::string>& worst) {
    if (!picks.error.empty()) return picks.error;
    if (!picks.most) return std::string("no most answer");
    if (!picks.least) return std::string("no least answer");
    if (*picks.most == *picks.least) return std::string("most and least name the same speaker");
    best = ids[*picks.most];
    worst = ids[*picks.least];
    return std::nullopt;
}

std::optional<std::string> find_dimension(const std::string& label, std::span<const std::string> dimensions) {
    const auto l = trim(lower(label));
    for (const auto& d : dimensions)
        if (lower(d) == l) return d;
    return std::nullopt;
}

} // namespace

ParseOutcome parse_rating(std::string_view response, std::span<const std::string> expected_ids,
                          const RatingScaleSpec& scale) {
    const std::size_t n = expected_ids.size();
    if (n == 0 || n > 4) return ParseOutcome::reject("rating parse expects 1 to 4 ids");
    static const std::regex indexed(std::string(R"(^\s*[-#>]*\s*text\s*#?\s*(\d+)[^:=]*[:=]\s*(?:[^:=]*\bintensity\s*[:=]\s*)?)") +
                                        kNumber + R"(\s*\.?\s*$)",
                                    icase);
    static const std::regex labeled(std::string(R"(^\s*[-#>]*\s*[^:=]*\bintensity\s*[:=]\s*)") + kNumber +
                                         R"(\s*\.?\s*$)",
                                     icase);

    std::vector<std::optional<double>> by_index(n);
    std::size_t indexed_hits = 0;
    std::vector<double> unindexed;
    for (const auto& line : lines_of(response)) {
        std::smatch m;
        if (std::regex_match(line, m, indexed)) {
            const auto idx = std::stoul(m.str(1));
            auto v = to_number(m.str(2));
            if (!v) return ParseOutcome::reject("non-numeric rating");
            if (idx < 1 || idx > n) return ParseOutcome::reject(fmt::format("text index {} out of range", idx));
            if (by_index[idx - 1] && *by_index[idx - 1] != *v)
                return ParseOutcome::reject(fmt::format("conflicting ratings for text {}", idx));
            if (!by_index[idx - 1]) ++indexed_hits;
            by_index[idx - 1] = v;
        } else if (std::regex_match(line, m, labeled)) {
            auto v = to_number(m.str(1));
            if (!v) return ParseOutcome::reject("non-numeric rating");
            unindexed.push_back(*v);
        }
    }

    std::vector<double> values;
    if (indexed_hits == n && unindexed.empty()) {
        for (const auto& v : by_index) values.push_back(*v);
    } else if (indexed_hits == 0 && unindexed.size() == n) {
        values = unindexed;
    } else if (indexed_hits > 0 || !unindexed.empty()) {
        return ParseOutcome::reject(
            fmt::format("expected {} rating(s), found {}", n, indexed_hits + unindexed.size()));
    } else {
        values = bare_numbers(response, scale.max_value);
        if (values.size() != n)
            return ParseOutcome::reject(fmt::format("expected {} number(s), found {}", n, values.size()));
    }

    Judgment j;
    j.protocol = n == 1 ? Protocol::rs : Protocol::rs_t;
    j.ids.assign(expected_ids.begin(), expected_ids.end());
    for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        if (auto err = check_rating(values[i], scale, v)) return ParseOutcome::reject(*err);
        j.ratings.emplace_back(expected_ids[i], v);
    }
    return ParseOutcome::accept(std::move(j));
}

ParseOutcome parse_best_worst(std::string_view response, std::span<const std::string> expected_ids,
                              std::span<const std::string> texts) {
    const std::size_t n = expected_ids.size();
    if (n != 2 && n != 4) return ParseOutcome::reject("best/worst parse expects 2 or 4 ids");
    const auto lines = lines_of(response);
    PickResult picks = read_labeled_picks(lines, n, texts, "");
    if (picks.error.empty() && !picks.most && !picks.least) {
        // Fallback: exactly two integers in reading order.
        static const std::regex integer(R"((?:^|[^\w.])(\d+)(?![\w.]))");
        std::vector<std::size_t> found;
        const std::string text(response);
        for (auto it = std::sregex_iterator(text.begin(), text.end(), integer); it != std::sregex_iterator(); ++it)
            found.push_back(std::stoul(it->str(1)));
        if (found.size() != 2)
            return ParseOutcome::reject(fmt::format("no labeled answer and {} bare integer(s)", found.size()));
        for (auto v : found)
            if (v < 1 || v > n) return ParseOutcome::reject(fmt::format("speaker {} out of range 1..{}", v, n));
        picks.most = found[0] - 1;
        picks.least = found[1] - 1;
    }
    Judgment j;
    j.protocol = n == 2 ? Protocol::pc : Protocol::bws;
    j.ids.assign(expected_ids.begin(), expected_ids.end());
    if (auto err = finish_pick(picks, expected_ids, j.best_id, j.worst_id)) return ParseOutcome::reject(*err);
    return ParseOutcome::accept(std::move(j));
}

ParseOutcome parse_adapted_ratings(std::string_view response, std::span<const std::string> expected_ids,
                                   std::span<const std::string> dimensions, const RatingScaleSpec& scale) {
    static const std::regex slot(std::string(R"(^\s*[-#>]*\s*text\s*#?\s*(\d+)\s*[:,-]?\s*(.+?)\s+intensity\s*[:=]\s*)") +
                                     kNumber + R"(\s*\.?\s*$)",
                                 icase);
    const std::size_t n = expected_ids.size();
    std::map<std::string, std::vector<std::optional<double>>> table;
    for (const auto& d : dimensions) table[d].assign(n, std::nullopt);
    for (const auto& line : lines_of(response)) {
        std::smatch m;
        if (!std::regex_match(line, m, slot)) continue;
        const auto idx = std::stoul(m.str(1));
        auto dim = find_dimension(m.str(2), dimensions);
        if (!dim) return ParseOutcome::reject(fmt::format("unknown dimension '{}'", m.str(2)));
        if (idx < 1 || idx > n) return ParseOutcome::reject(fmt::format("text index {} out of range", idx));
        auto v = to_number(m.str(3));
        if (!v) return ParseOutcome::reject("non-numeric rating");
        auto& cell = table[*dim][idx - 1];
        if (cell && *cell != *v) return ParseOutcome::reject(fmt::format("conflicting ratings for text {} {}", idx, *dim));
        cell = v;
    }
    Judgment j;
    j.protocol = Protocol::rs_t;
    j.ids.assign(expected_ids.begin(), expected_ids.end());
    for (const auto& d : dimensions) {
        DimensionJudgment dj;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& cell = table[d][i];
            if (!cell) return ParseOutcome::reject(fmt::format("missing {} rating for text {}", d, i + 1));
            double v = 0.0;
            if (auto err = check_rating(*cell, scale, v)) return ParseOutcome::reject(*err);
            dj.ratings.emplace_back(expected_ids[i], v);
        }
        j.per_dimension.emplace(d, std::move(dj));
    }
    return ParseOutcome::accept(std::move(j));
}

ParseOutcome parse_adapted_best_worst(std::string_view response, std::span<const std::string> expected_ids,
                                      std::span<const std::string> dimensions, std::span<const std::string> texts) {
    const std::size_t n = expected_ids.size();
    const auto lines = lines_of(response);
    Judgment j;
    j.protocol = Protocol::bws;
    j.ids.assign(expected_ids.begin(), expected_ids.end());
    for (const auto& d : dimensions) {
        const auto picks = read_labeled_picks(lines, n, texts, d);
        DimensionJudgment dj;
        if (auto err = finish_pick(picks, expected_ids, dj.best_id, dj.worst_id))
            return ParseOutcome::reject(fmt::format("{}: {}", d, *err));
        j.per_dimension.emplace(d, std::move(dj));
    }
    return ParseOutcome::accept(std::move(j));
}

ParseOutcome parse_response(const PromptBundle& prompt, std::string_view response) {
    if (prompt.adapted()) {
        if (prompt.protocol == Protocol::rs_t)
            return parse_adapted_ratings(response, prompt.tuple_ids, prompt.dimensions, *prompt.scale);
        return parse_adapted_best_worst(response, prompt.tuple_ids, prompt.dimensions, prompt.tuple_texts);
    }
    if (is_comparative(prompt.protocol)) return parse_best_worst(response, prompt.tuple_ids, prompt.tuple_texts);
    if (!prompt.scale) return ParseOutcome::reject("rating prompt without scale");
    auto out = parse_rating(response, prompt.tuple_ids, *prompt.scale);
    if (out) out.judgment->protocol = prompt.protocol;
    return out;
}

json to_json(const Judgment& j) {
    auto picks = [](json& o, const auto& src) {
        if (!src.ratings.empty()) {
            json r = json::array();
            for (const auto& [id, v] : src.ratings) r.push_back(json::array({id, v}));
            o["ratings"] = r;
        }
        if (src.best_id) o["best"] = *src.best_id;
        if (src.worst_id) o["worst"] = *src.worst_id;
    };
    json o = json::object();
    o["protocol"] = std::string(to_string(j.protocol));
    o["ids"] = j.ids;
    picks(o, j);
    if (j.adapted()) {
        json dims = json::object();
        for (const auto& [d, dj] : j.per_dimension) {
            json x = json::object();
            picks(x, dj);
            dims[d] = x;
        }
        o["per_dimension"] = dims;
    }
    return o;
}

Judgment judgment_from_json(const json& o) {
    auto read = [](const json& src, auto& dst) {
        if (src.contains("ratings"))
            for (const auto& r : src.at("ratings")) dst.ratings.emplace_back(r.at(0).get<std::string>(), r.at(1).get<double>());
        if (src.contains("best")) dst.best_id = src.at("best").get<std::string>();
        if (src.contains("worst")) dst.worst_id = src.at("worst").get<std::string>();
    };
    Judgment j;
    j.protocol = protocol_from_string(o.at("protocol").get<std::string>());
    j.ids = o.at("ids").get<std::vector<std::string>>();
    read(o, j);
    if (o.contains("per_dimension"))
        for (const auto& [d, x] : o.at("per_dimension").items()) {
            DimensionJudgment dj;
            read(x, dj);
            j.per_dimension.emplace(d, std::move(dj));
        }
    return j;
}

} // namespace annot
