#include "annot/corpus.hpp"

#include "annot/scoring.hpp"
#include "annot/types.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace annot {

using nlohmann::json;

std::string_view to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw ConfigError(fmt::format("unknown split '{}'", s));
}

CorpusFormat corpus_format_from_string(std::string_view s) {
    if (s == "ait_tsv" || s == "tsv") return CorpusFormat::ait_tsv;
    if (s == "jsonl") return CorpusFormat::jsonl;
    throw ConfigError(fmt::format("unknown corpus format '{}'", s));
}

std::vector<std::string> Corpus::ids() const {
    std::vector<std::string> out;
    out.reserve(instances.size());
    for (const auto& t : instances) out.push_back(t.id);
    return out;
}

const TextInstance* Corpus::find(std::string_view id) const {
    for (const auto& t : instances)
        if (t.id == id) return &t;
    return nullptr;
}

bool Corpus::has_gold() const {
    for (const auto& t : instances)
        if (!t.gold_score) return false;
    return !instances.empty();
}

namespace {

bool is_blank(std::string_view s) {
    return s.find_first_not_of(" \t\r\n\v\f") == std::string_view::npos;
}

} // namespace

void Corpus::validate() const {
    if (instances.empty()) throw ValidationError("corpus is empty");
    std::unordered_set<std::string> seen;
    for (const auto& t : instances) {
        if (!seen.insert(t.id).second) throw ValidationError(fmt::format("duplicate id '{}'", t.id));
        if (t.id.empty()) throw ValidationError("empty id");
        if (is_blank(t.text)) throw ValidationError(fmt::format("text of '{}' is blank", t.id));
        if (t.dimension != dimension)
            throw ValidationError(fmt::format("instance '{}' has dimension '{}', corpus is '{}'", t.id,
                                              t.dimension, dimension));
        if (t.gold_score && !(*t.gold_score >= 0.0 && *t.gold_score <= 1.0))
            throw ValidationError(fmt::format("score {} of '{}' outside [0,1]", *t.gold_score, t.id));
    }
}

Corpus Corpus::subset(const std::vector<std::string>& wanted) const {
    Corpus out{dimension, split, {}};
    out.instances.reserve(wanted.size());
    for (const auto& id : wanted) {
        const auto* t = find(id);
        if (!t) throw ValidationError(fmt::format("id '{}' not in corpus", id));
        out.instances.push_back(*t);
    }
    return out;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::optional<double> parse_real(std::string_view s) {
    while (!s.empty() && (s.front() == ' ')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

void strip_newline(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

Corpus read_tsv(std::istream& in, std::string_view source, Split split) {
    Corpus corpus;
    corpus.split = split;
    std::string line;
    std::size_t lineno = 0;
    std::size_t columns = 0;
    while (std::getline(in, line)) {
        ++lineno;
        strip_newline(line);
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() != 3 && fields.size() != 4)
            throw ParseError(source, lineno,
                             fmt::format("expected 3 or 4 tab-separated columns, found {}", fields.size()));
        if (columns == 0) {
            const bool header = fields.size() == 4 ? !parse_real(fields[3]) && fields[3] != "NONE"
                                                   : fields[0] == "id" || fields[0] == "ID";
            if (header && corpus.instances.empty()) {
                columns = fields.size();
                continue;
            }
            columns = fields.size();
        }
        if (fields.size() != columns)
            throw ParseError(source, lineno,
                             fmt::format("expected {} columns, found {}", columns, fields.size()));
        TextInstance t{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), std::nullopt};
        if (fields.size() == 4 && !fields[3].empty() && fields[3] != "NONE") {
            auto v = parse_real(fields[3]);
            if (!v) throw ParseError(source, lineno, fmt::format("score '{}' is not a number", fields[3]));
            t.gold_score = *v;
        }
        if (corpus.instances.empty()) corpus.dimension = t.dimension;
        corpus.instances.push_back(std::move(t));
    }
    return corpus;
}

Corpus read_jsonl(std::istream& in, std::string_view source, Split split) {
    Corpus corpus;
    corpus.split = split;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        strip_newline(line);
        if (is_blank(line)) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(source, lineno, e.what());
        }
        if (!row.is_object() || !row.contains("id") || !row.contains("text") || !row.contains("dimension"))
            throw ParseError(source, lineno, "row must be an object with id, text and dimension");
        TextInstance t;
        try {
            t.id = row.at("id").is_string() ? row.at("id").get<std::string>() : row.at("id").dump();
            t.text = row.at("text").get<std::string>();
            t.dimension = row.at("dimension").get<std::string>();
            if (row.contains("score") && !row.at("score").is_null()) t.gold_score = row.at("score").get<double>();
        } catch (const json::exception& e) {
            throw ParseError(source, lineno, e.what());
        }
        if (corpus.instances.empty()) corpus.dimension = t.dimension;
        corpus.instances.push_back(std::move(t));
    }
    return corpus;
}

} // namespace

Corpus read_corpus(std::istream& in, CorpusFormat format, std::string_view source_name, Split split) {
    Corpus c = format == CorpusFormat::ait_tsv ? read_tsv(in, source_name, split)
                                               : read_jsonl(in, source_name, split);
    c.validate();
    return c;
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open corpus file {}", path.string()));
    return read_corpus(in, format, path.string(), split);
}

std::string format_score(double value) {
    return fmt::format("{:.4f}", value);
}

std::size_t write_labeled(const Corpus& corpus, const ScoreTable& scores, std::ostream& out) {
    std::vector<std::string> missing;
    std::vector<double> values;
    values.reserve(corpus.size());
    for (const auto& t : corpus.instances) {
        const auto* row = scores.find(t.id);
        if (!row || !row->normalized) {
            missing.push_back(t.id);
            continue;
        }
        values.push_back(*row->normalized);
    }
    if (!missing.empty()) {
        throw ValidationError(fmt::format("no score for {} id(s): {}", missing.size(), fmt::join(missing, ", ")));
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& t = corpus.instances[i];
        // Built by hand so the score keeps exactly four decimals.
        out << "{\"id\":" << json(t.id).dump() << ",\"text\":" << json(t.text).dump()
            << ",\"dimension\":" << json(t.dimension).dump() << ",\"score\":" << format_score(values[i])
            << "}\n";
    }
    return corpus.size();
}

std::size_t export_labeled(const Corpus& corpus, const ScoreTable& scores, const std::filesystem::path& path) {
    std::ostringstream buf;
    const auto n = write_labeled(corpus, scores, buf);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    out << buf.str();
    return n;
}

} // namespace annot
