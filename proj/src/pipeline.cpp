#include "annot/pipeline.hpp"

#include "annot/rng.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace annot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- config parsing -----------------------------------------------------------

void check_keys(const YAML::Node& node, std::initializer_list<std::string_view> allowed, std::string_view where) {
    if (!node) return;
    if (!node.IsMap()) throw ConfigError(fmt::format("'{}' must be a mapping", where.empty() ? "config" : where));
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(where.empty() ? fmt::format("unknown config key '{}'", key)
                                            : fmt::format("unknown config key '{}.{}'", where, key));
    }
}

template <class T>
std::optional<T> opt(const YAML::Node& node, const char* key) {
    if (!node) return std::nullopt;
    const YAML::Node v = node[key];
    if (!v || v.IsNull()) return std::nullopt;
    try {
        return v.as<T>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(fmt::format("bad value for '{}': {}", key, e.what()));
    }
}

template <class T>
T get(const YAML::Node& node, const char* key, T fallback) {
    auto v = opt<T>(node, key);
    return v ? *v : fallback;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

// Wraps the domain parsers so bad enum strings surface as config errors.
template <class F>
auto as_config(std::string_view key, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(fmt::format("{}: {}", key, e.what()));
    }
}

BackendConfig parse_backend(const YAML::Node& n, const fs::path& base) {
    check_keys(n,
               {"kind", "id", "endpoint_url", "model", "api_key_env", "auth", "system_role", "temperature",
                "timeout_seconds", "content_filter_markers", "max_retries", "rate_limit", "burst", "max_in_flight",
                "backoff_base_ms", "replay_path", "simulated", "fallback"},
               "backend");
    BackendConfig b;
    if (auto kind = opt<std::string>(n, "kind")) b.kind = as_config("backend.kind", [&] { return backend_kind_from_string(*kind); });
    b.backend_id = get<std::string>(n, "id", "");
    b.endpoint_url = get<std::string>(n, "endpoint_url", "");
    b.model_name = get<std::string>(n, "model", "");
    b.api_key_env = get<std::string>(n, "api_key_env", b.api_key_env);
    if (auto auth = opt<std::string>(n, "auth")) {
        if (*auth == "bearer") b.auth = AuthStyle::bearer;
        else if (*auth == "api_key_header" || *auth == "api-key") b.auth = AuthStyle::api_key_header;
        else throw ConfigError(fmt::format("backend.auth: unknown style '{}'", *auth));
    }
    b.system_role = get(n, "system_role", b.system_role);
    b.temperature = opt<double>(n, "temperature");
    b.timeout_seconds = get(n, "timeout_seconds", b.timeout_seconds);
    if (auto markers = opt<std::vector<std::string>>(n, "content_filter_markers")) b.content_filter_markers = *markers;
    b.max_retries = get(n, "max_retries", b.max_retries);
    b.rate_limit = opt<double>(n, "rate_limit");
    b.burst = get(n, "burst", b.burst);
    b.max_in_flight = get(n, "max_in_flight", b.max_in_flight);
    b.backoff_base_ms = get(n, "backoff_base_ms", b.backoff_base_ms);
    if (auto rp = opt<std::string>(n, "replay_path")) b.replay_path = resolve(base, *rp).string();

    const YAML::Node sim = n ? n["simulated"] : YAML::Node();
    check_keys(sim, {"noise_sigma", "seed", "malformed_rate", "forced_malformed_attempts", "content_filter_ids"},
               "backend.simulated");
    b.simulated.noise_sigma = get(sim, "noise_sigma", 0.0);
    b.simulated.seed = get<std::uint64_t>(sim, "seed", 0);
    b.simulated.malformed_rate = get(sim, "malformed_rate", 0.0);
    b.simulated.forced_malformed_attempts = get(sim, "forced_malformed_attempts", 0);
    if (auto ids = opt<std::vector<std::string>>(sim, "content_filter_ids"))
        b.simulated.content_filter_ids = std::set<std::string>(ids->begin(), ids->end());

    if (n && n["fallback"] && !n["fallback"].IsNull())
        b.fallback = std::make_shared<const BackendConfig>(parse_backend(n["fallback"], base));
    return b;
}

void emit_backend(YAML::Emitter& out, const BackendConfig& b) {
    out << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << std::string(to_string(b.kind));
    if (!b.backend_id.empty()) out << YAML::Key << "id" << YAML::Value << b.backend_id;
    if (!b.endpoint_url.empty()) out << YAML::Key << "endpoint_url" << YAML::Value << b.endpoint_url;
    if (!b.model_name.empty()) out << YAML::Key << "model" << YAML::Value << b.model_name;
    out << YAML::Key << "api_key_env" << YAML::Value << b.api_key_env;
    out << YAML::Key << "auth" << YAML::Value << (b.auth == AuthStyle::bearer ? "bearer" : "api_key_header");
    out << YAML::Key << "system_role" << YAML::Value << b.system_role;
    if (b.temperature) out << YAML::Key << "temperature" << YAML::Value << *b.temperature;
    out << YAML::Key << "timeout_seconds" << YAML::Value << b.timeout_seconds;
    out << YAML::Key << "content_filter_markers" << YAML::Value << YAML::Flow << b.content_filter_markers;
    out << YAML::Key << "max_retries" << YAML::Value << b.max_retries;
    if (b.rate_limit) out << YAML::Key << "rate_limit" << YAML::Value << *b.rate_limit;
    out << YAML::Key << "burst" << YAML::Value << b.burst;
    out << YAML::Key << "max_in_flight" << YAML::Value << b.max_in_flight;
    out << YAML::Key << "backoff_base_ms" << YAML::Value << b.backoff_base_ms;
    if (!b.replay_path.empty()) out << YAML::Key << "replay_path" << YAML::Value << b.replay_path;
    if (b.kind == BackendKind::simulated) {
        out << YAML::Key << "simulated" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "noise_sigma" << YAML::Value << b.simulated.noise_sigma;
        out << YAML::Key << "seed" << YAML::Value << b.simulated.seed;
        out << YAML::Key << "malformed_rate" << YAML::Value << b.simulated.malformed_rate;
        out << YAML::Key << "forced_malformed_attempts" << YAML::Value << b.simulated.forced_malformed_attempts;
        std::vector<std::string> ids(b.simulated.content_filter_ids.begin(), b.simulated.content_filter_ids.end());
        out << YAML::Key << "content_filter_ids" << YAML::Value << YAML::Flow << ids;
        out << YAML::EndMap;
    }
    if (b.fallback) {
        out << YAML::Key << "fallback" << YAML::Value;
        emit_backend(out, *b.fallback);
    }
    out << YAML::EndMap;
}

std::string format_format(CorpusFormat f) { return f == CorpusFormat::ait_tsv ? "ait_tsv" : "jsonl"; }

// --- run planning -----------------------------------------------------------

// One annotation unit: a dimension, or every dimension at once for the
// multi-emotion prompt. Each unit owns a subdirectory of the run.
struct Unit {
    std::string name;
    std::vector<Corpus> corpora; // full corpora, one per dimension
    Corpus items;                // texts the design draws from
    std::vector<std::string> dimensions;
    TupleSet design;
    std::vector<PromptBundle> prompts;
    BackendConfig backend;
    std::string content_hash;

    fs::path dir(const RunConfig& cfg) const { return cfg.output_dir / name; }
};

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write {}", path.string()));
        out << text;
        if (!out) throw Error(fmt::format("write failed: {}", path.string()));
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read {}", path.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void fill_latent(BackendConfig& b, const std::vector<Corpus>& corpora) {
    if (b.kind == BackendKind::simulated && b.simulated.latent_scores.empty() &&
        b.simulated.latent_by_dimension.empty()) {
        for (const auto& c : corpora) {
            auto& dim = b.simulated.latent_by_dimension[c.dimension];
            for (const auto& t : c.instances) {
                if (!t.gold_score)
                    throw ConfigError(fmt::format("simulated backend takes latent scores from gold, but '{}' in {} has none",
                                                  t.id, c.dimension));
                dim[t.id] = *t.gold_score;
            }
        }
        b.simulated.latent_scores = b.simulated.latent_by_dimension.at(corpora.front().dimension);
    }
    if (b.fallback) {
        auto fb = *b.fallback;
        fill_latent(fb, corpora);
        b.fallback = std::make_shared<const BackendConfig>(std::move(fb));
    }
}

std::string unit_content_hash(const Unit& u) {
    json material = json::object();
    json corpora = json::array();
    for (const auto& c : u.corpora) {
        json rows = json::array();
        for (const auto& t : c.instances) rows.push_back({t.id, t.text});
        corpora.push_back({{"dimension", c.dimension}, {"texts", rows}});
    }
    material["corpora"] = corpora;
    material["protocol"] = to_string(u.design.protocol);
    material["design_seed"] = u.design.seed;
    material["tuples"] = u.design.tuples;
    json prompts = json::array();
    for (const auto& p : u.prompts) prompts.push_back(p.hash());
    material["prompts"] = prompts;
    return sha256_hex(material.dump());
}

std::vector<Corpus> load_corpora(const RunConfig& cfg) {
    std::vector<Corpus> out;
    for (const auto& src : cfg.corpora) {
        auto c = load_corpus(src.path, src.format, src.split);
        c.validate();
        out.push_back(std::move(c));
    }
    return out;
}

TupleSet make_design(const RunConfig& cfg, const Unit& u) {
    if (cfg.design_path) {
        fs::path p = *cfg.design_path;
        if (fs::is_directory(p)) p = p / u.name / "design.jsonl";
        auto set = load_tuple_set(p, u.items);
        if (set.protocol != cfg.protocol)
            throw ConfigError(fmt::format("design {} is for {}, config asks for {}", p.string(), to_string(set.protocol),
                                          to_string(cfg.protocol)));
        return set;
    }
    switch (cfg.protocol) {
    case Protocol::rs: return design_rs_units(u.items, false, cfg.design.seed);
    case Protocol::rs_t: return design_rs_units(u.items, true, cfg.design.seed);
    case Protocol::pc: return design_pc_pairs(u.items, cfg.pc_subset, cfg.design.seed);
    case Protocol::bws: return design_bws_tuples(u.items, cfg.design);
    }
    throw ConfigError("unknown protocol");
}

std::vector<PromptBundle> render_all(const RunConfig& cfg, const Unit& u) {
    std::vector<PromptBundle> prompts;
    prompts.reserve(u.design.size());
    for (const auto& tuple : u.design.tuples) {
        std::vector<TextRef> texts;
        for (const auto& id : tuple) texts.push_back({id, u.items.find(id)->text});
        if (cfg.adapted)
            prompts.push_back(render_adapted_multiemotion(texts, u.dimensions, cfg.scale, cfg.protocol));
        else
            prompts.push_back(render_prompt(cfg.protocol, texts, u.dimensions.front(),
                                            is_comparative(cfg.protocol) ? std::nullopt : cfg.scale));
    }
    return prompts;
}

std::vector<Unit> plan_units(const RunConfig& cfg) {
    cfg.validate();
    auto corpora = load_corpora(cfg);
    std::vector<Unit> units;
    if (cfg.adapted) {
        Unit u;
        u.name = "adapted";
        const auto& first = corpora.front();
        for (const auto& c : corpora) {
            u.dimensions.push_back(c.dimension);
            if (c.size() != first.size())
                throw ValidationError(fmt::format("multi-emotion corpora must share ids: {} has {} texts, {} has {}",
                                                  first.dimension, first.size(), c.dimension, c.size()));
            for (const auto& t : first.instances) {
                const auto* other = c.find(t.id);
                if (!other) throw ValidationError(fmt::format("id '{}' missing from {}", t.id, c.dimension));
                if (other->text != t.text)
                    throw ValidationError(fmt::format("id '{}' has different texts in {} and {}", t.id,
                                                      first.dimension, c.dimension));
            }
        }
        u.items = first;
        u.corpora = std::move(corpora);
        units.push_back(std::move(u));
    } else {
        std::set<std::string> seen;
        for (auto& c : corpora) {
            if (!seen.insert(c.dimension).second)
                throw ConfigError(fmt::format("dimension '{}' is listed twice", c.dimension));
            Unit u;
            u.name = c.dimension;
            u.dimensions = {c.dimension};
            u.items = c;
            u.corpora = {std::move(c)};
            units.push_back(std::move(u));
        }
    }
    for (auto& u : units) {
        u.design = make_design(cfg, u);
        if (cfg.protocol == Protocol::pc && cfg.pc_subset) {
            // Only the sampled texts are scored and evaluated.
            std::set<std::string> used;
            for (const auto& t : u.design.tuples) used.insert(t.begin(), t.end());
            std::vector<std::string> ids;
            for (const auto& id : u.items.ids())
                if (used.count(id)) ids.push_back(id);
            u.items = u.items.subset(ids);
            for (auto& c : u.corpora) c = c.subset(ids);
        }
        u.prompts = render_all(cfg, u);
        u.backend = cfg.backend;
        if (u.backend.kind == BackendKind::replay && fs::is_directory(u.backend.replay_path))
            u.backend.replay_path = (fs::path(u.backend.replay_path) / u.name / "transcripts.jsonl").string();
        if (cfg.latent_from_gold) fill_latent(u.backend, u.corpora);
        u.content_hash = unit_content_hash(u);
    }
    return units;
}

json manifest_json(const RunConfig& cfg, const Unit& u) {
    json m = json::object();
    m["unit"] = u.name;
    m["dimensions"] = u.dimensions;
    m["protocol"] = to_string(cfg.protocol);
    m["scale"] = cfg.scale && !is_comparative(cfg.protocol) ? cfg.scale->code() : "";
    m["k"] = cfg.protocol == Protocol::bws ? cfg.design.multiplier_k : 0.0;
    m["design_seed"] = u.design.seed;
    m["tuples"] = u.design.size();
    m["content_hash"] = u.content_hash;
    return m;
}

// Refuses to touch a run directory created for a different corpus, design or
// prompt set.
void guard_unit_dir(const RunConfig& cfg, const Unit& u) {
    const auto dir = u.dir(cfg);
    const auto manifest = dir / "manifest.json";
    if (fs::exists(manifest)) {
        json m;
        try {
            m = json::parse(read_text(manifest));
        } catch (const json::exception& e) {
            throw ResumeMismatch(fmt::format("{}: unreadable manifest: {}", manifest.string(), e.what()));
        }
        const auto stored = m.value("content_hash", "");
        if (stored != u.content_hash)
            throw ResumeMismatch(fmt::format(
                "{} belongs to a different run (design seed {} vs {}, content hash {} vs {}); use a new output "
                "directory",
                dir.string(), m.value("design_seed", std::uint64_t{0}), u.design.seed, stored.substr(0, 12),
                u.content_hash.substr(0, 12)));
    } else if (fs::exists(dir / "transcripts.jsonl") && fs::file_size(dir / "transcripts.jsonl") > 0) {
        throw ResumeMismatch(fmt::format("{} holds transcripts but no manifest; refusing to resume", dir.string()));
    }
}

void write_design_files(const RunConfig& cfg, const Unit& u) {
    const auto dir = u.dir(cfg);
    fs::create_directories(dir);
    std::ostringstream design;
    write_tuple_set(u.design, design);
    write_text(dir / "design.jsonl", design.str());
    write_text(dir / "manifest.json", manifest_json(cfg, u).dump(2) + "\n");
}

// --- judgments file -----------------------------------------------------------

json item_json(const BatchItem& item) {
    json o = json::object();
    o["tuple_index"] = item.tuple_index;
    o["repeat"] = item.repeat;
    o["attempts"] = item.result.attempts;
    o["accepted"] = item.result.accepted();
    if (item.result.judgment) o["judgment"] = to_json(*item.result.judgment);
    else o["failure"] = item.result.failure;
    json responses = json::array();
    for (const auto& r : item.result.responses)
        responses.push_back({{"attempt", r.attempt},
                             {"status", to_string(r.status)},
                             {"from_fallback", r.from_fallback},
                             {"text", r.text}});
    o["responses"] = responses;
    return o;
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read {}", path.string()));
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(path.string(), n, e.what());
        }
    }
    return out;
}

struct UnitJudgments {
    std::vector<Annotation> annotations;
    std::vector<FailedTuple> failed;
    json stats = json::object();
};

UnitJudgments load_judgments(const RunConfig& cfg, const Unit& u) {
    const auto path = u.dir(cfg) / "judgments.jsonl";
    if (!fs::exists(path))
        throw Error(fmt::format("{} is missing; run the annotate stage first", path.string()));
    UnitJudgments out;
    std::size_t items = 0, accepted = 0, retried = 0, responses = 0, fallback = 0, rejected = 0;
    for (const auto& o : read_jsonl(path)) {
        ++items;
        const auto tuple_index = o.at("tuple_index").get<std::size_t>();
        const int repeat = o.at("repeat").get<int>();
        if (tuple_index >= u.design.size())
            throw ValidationError(fmt::format("{}: tuple {} is outside the design", path.string(), tuple_index));
        const bool ok = o.at("accepted").get<bool>();
        if (o.at("attempts").get<int>() > 1) ++retried;
        std::vector<std::string> texts;
        for (const auto& r : o.at("responses")) {
            ++responses;
            if (r.at("from_fallback").get<bool>()) ++fallback;
            texts.push_back(r.at("text").get<std::string>());
        }
        if (ok) {
            ++accepted;
            out.annotations.push_back({tuple_index, repeat, judgment_from_json(o.at("judgment"))});
            // Every answer before the accepted one was rejected or not delivered.
            for (const auto& r : o.at("responses"))
                if (r.at("status").get<std::string>() == "ok") ++rejected;
            --rejected;
        } else {
            for (const auto& r : o.at("responses"))
                if (r.at("status").get<std::string>() == "ok") ++rejected;
            out.failed.push_back(
                {u.name, tuple_index, repeat, u.design.tuples[tuple_index], o.value("failure", ""), std::move(texts)});
        }
    }
    out.stats = {{"unit", u.name},          {"items", items},       {"accepted", accepted},
                 {"failed", items - accepted}, {"retried", retried}, {"responses", responses},
                 {"fallback_responses", fallback}, {"rejected_answers", rejected}};
    return out;
}

fs::path dimension_dir(const RunConfig& cfg, const std::string& dimension) { return cfg.output_dir / dimension; }

EvalReport empty_report(const RunConfig& cfg) {
    EvalReport r;
    r.protocol = std::string(to_string(cfg.protocol));
    r.scale = cfg.scale && !is_comparative(cfg.protocol) ? cfg.scale->code() : "";
    r.k = cfg.protocol == Protocol::bws ? cfg.design.multiplier_k : 0.0;
    r.seed = cfg.design.seed;
    return r;
}

std::vector<Judgment> judgments_for(const std::vector<Annotation>& anns, const std::string& dim, bool adapted) {
    std::vector<Judgment> out;
    out.reserve(anns.size());
    for (const auto& a : anns) out.push_back(adapted ? a.judgment.project(dim) : a.judgment);
    return out;
}

} // namespace

// --- RunConfig ----------------------------------------------------------------

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return from_yaml_text(s.str(), path.parent_path());
}

RunConfig RunConfig::from_yaml_text(const std::string& text, const fs::path& base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(fmt::format("config is not valid YAML: {}", e.what()));
    }
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    check_keys(root,
               {"protocol", "scale", "adapted", "aggregation", "repeats", "output_dir", "corpora", "design", "backend",
                "evaluation", "latent_from_gold"},
               "");
    RunConfig c;
    if (auto p = opt<std::string>(root, "protocol")) c.protocol = as_config("protocol", [&] { return protocol_from_string(*p); });
    if (auto s = opt<std::string>(root, "scale")) c.scale = as_config("scale", [&] { return RatingScaleSpec::parse(*s); });
    c.adapted = get(root, "adapted", false);
    if (auto a = opt<std::string>(root, "aggregation"))
        c.aggregation = as_config("aggregation", [&] { return rating_aggregation_from_string(*a); });
    c.repeats = get(root, "repeats", 1);
    if (auto o = opt<std::string>(root, "output_dir")) c.output_dir = resolve(base_dir, *o);
    c.latent_from_gold = get(root, "latent_from_gold", true);

    const YAML::Node corpora = root["corpora"];
    if (corpora) {
        if (!corpora.IsSequence()) throw ConfigError("'corpora' must be a list");
        for (const auto& n : corpora) {
            check_keys(n, {"path", "format", "split"}, "corpora[]");
            CorpusSource src;
            auto p = opt<std::string>(n, "path");
            if (!p) throw ConfigError("every corpora entry needs a path");
            src.path = resolve(base_dir, *p);
            if (auto f = opt<std::string>(n, "format"))
                src.format = as_config("corpora.format", [&] { return corpus_format_from_string(*f); });
            if (auto sp = opt<std::string>(n, "split")) src.split = as_config("corpora.split", [&] { return split_from_string(*sp); });
            c.corpora.push_back(std::move(src));
        }
    }

    const YAML::Node design = root["design"];
    check_keys(design, {"k", "seed", "tuple_size", "max_repair_attempts", "pc_subset", "path"}, "design");
    c.design.multiplier_k = get(design, "k", c.design.multiplier_k);
    c.design.seed = get<std::uint64_t>(design, "seed", c.design.seed);
    c.design.tuple_size = get(design, "tuple_size", c.design.tuple_size);
    c.design.max_repair_attempts = get(design, "max_repair_attempts", c.design.max_repair_attempts);
    c.pc_subset = opt<std::size_t>(design, "pc_subset");
    if (auto p = opt<std::string>(design, "path")) c.design_path = resolve(base_dir, *p);

    c.backend = parse_backend(root["backend"], base_dir);

    const YAML::Node eval = root["evaluation"];
    check_keys(eval, {"shr_iterations", "seed"}, "evaluation");
    c.shr_iterations = get(eval, "shr_iterations", c.shr_iterations);
    c.eval_seed = get<std::uint64_t>(eval, "seed", c.eval_seed);
    return c;
}

std::string RunConfig::to_yaml() const {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "protocol" << YAML::Value << std::string(to_string(protocol));
    if (scale) out << YAML::Key << "scale" << YAML::Value << scale->code();
    out << YAML::Key << "adapted" << YAML::Value << adapted;
    out << YAML::Key << "aggregation" << YAML::Value << (aggregation == RatingAggregation::mean ? "mean" : "single");
    out << YAML::Key << "repeats" << YAML::Value << repeats;
    out << YAML::Key << "output_dir" << YAML::Value << output_dir.string();
    out << YAML::Key << "latent_from_gold" << YAML::Value << latent_from_gold;
    out << YAML::Key << "corpora" << YAML::Value << YAML::BeginSeq;
    for (const auto& c : corpora) {
        out << YAML::BeginMap;
        out << YAML::Key << "path" << YAML::Value << c.path.string();
        out << YAML::Key << "format" << YAML::Value << format_format(c.format);
        out << YAML::Key << "split" << YAML::Value << std::string(to_string(c.split));
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;
    out << YAML::Key << "design" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "k" << YAML::Value << design.multiplier_k;
    out << YAML::Key << "seed" << YAML::Value << design.seed;
    out << YAML::Key << "tuple_size" << YAML::Value << design.tuple_size;
    out << YAML::Key << "max_repair_attempts" << YAML::Value << design.max_repair_attempts;
    if (pc_subset) out << YAML::Key << "pc_subset" << YAML::Value << *pc_subset;
    if (design_path) out << YAML::Key << "path" << YAML::Value << design_path->string();
    out << YAML::EndMap;
    out << YAML::Key << "backend" << YAML::Value;
    emit_backend(out, backend);
    out << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "shr_iterations" << YAML::Value << shr_iterations;
    out << YAML::Key << "seed" << YAML::Value << eval_seed;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

void RunConfig::validate() const {
    if (corpora.empty()) throw ConfigError("no corpora configured");
    for (const auto& c : corpora)
        if (!fs::is_regular_file(c.path)) throw ConfigError(fmt::format("corpus file not found: {}", c.path.string()));
    if (output_dir.empty()) throw ConfigError("output_dir is empty");
    if (repeats < 1) throw ConfigError("repeats must be at least 1");
    if (shr_iterations < 0) throw ConfigError("evaluation.shr_iterations must be non-negative");
    if (design.tuple_size != 4) throw ConfigError("design.tuple_size must be 4");
    if (protocol == Protocol::bws && !(design.multiplier_k > 0.0)) throw ConfigError("design.k must be positive");
    if (design.max_repair_attempts < 1) throw ConfigError("design.max_repair_attempts must be at least 1");
    if (pc_subset && protocol != Protocol::pc) throw ConfigError("design.pc_subset only applies to pc");
    if (pc_subset && *pc_subset < 2) throw ConfigError("design.pc_subset must be at least 2");
    if (design_path && !fs::exists(*design_path))
        throw ConfigError(fmt::format("design file not found: {}", design_path->string()));
    if (is_comparative(protocol)) {
        if (scale) throw ConfigError(fmt::format("{} takes no rating scale", to_string(protocol)));
    } else {
        if (!scale) throw ConfigError(fmt::format("{} needs a rating scale (e.g. D-10)", to_string(protocol)));
        as_config("scale", [&] {
            scale->validate();
            return 0;
        });
    }
    if (adapted) {
        if (protocol != Protocol::rs_t && protocol != Protocol::bws)
            throw ConfigError("the multi-emotion prompt supports rs_t and bws only");
        if (corpora.size() != adapted_dimension_count)
            throw ConfigError(fmt::format("the multi-emotion prompt needs {} corpora sharing ids, got {}",
                                          adapted_dimension_count, corpora.size()));
    }
    as_config("backend", [&] {
        backend.validate();
        return 0;
    });
    if (backend.kind == BackendKind::replay && !fs::exists(backend.replay_path))
        throw ConfigError(fmt::format("replay transcript not found: {}", backend.replay_path));
    if (backend.kind == BackendKind::http_chat) {
        // Checked here so a missing key stops the run before any request.
        if (!std::getenv(backend.api_key_env.c_str()))
            throw ConfigError(fmt::format("environment variable {} is not set", backend.api_key_env));
    }
}

// --- stages -------------------------------------------------------------------

void stage_design(const RunConfig& cfg) {
    const auto units = plan_units(cfg);
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.yaml", cfg.to_yaml());
    for (const auto& u : units) {
        guard_unit_dir(cfg, u);
        write_design_files(cfg, u);
        spdlog::info("{}: {} tuples over {} texts (appearances {}..{}, repeated pairs {})", u.name, u.design.size(),
                     u.items.size(), u.design.stats.min_appearance, u.design.stats.max_appearance,
                     u.design.stats.repeated_pairs);
    }
}

RunSummary stage_annotate(const RunConfig& cfg) {
    const auto units = plan_units(cfg);
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.yaml", cfg.to_yaml());
    RunSummary summary;
    summary.report = empty_report(cfg);
    for (const auto& u : units) guard_unit_dir(cfg, u);
    for (const auto& u : units) {
        write_design_files(cfg, u);
        const auto dir = u.dir(cfg);
        const auto transcript_path = dir / "transcripts.jsonl";

        Backend backend(u.backend);
        if (u.backend.kind == BackendKind::replay) {
            // A replay run transcribes exactly what it served.
            fs::remove(transcript_path);
        } else {
            const auto records = TranscriptLog::load(transcript_path);
            if (!records.empty()) spdlog::info("{}: resuming with {} recorded attempts", u.name, records.size());
            backend.use_cache(records);
        }
        TranscriptLog log(transcript_path);
        backend.attach_transcript(&log);

        const auto batch = backend.run_batch(u.prompts, cfg.repeats);
        std::string lines;
        for (const auto& item : batch.items) {
            lines += item_json(item).dump() + "\n";
            if (!item.result.accepted())
                spdlog::warn("{}: tuple {} repeat {} failed: {}", u.name, item.tuple_index, item.repeat,
                             item.result.failure);
        }
        write_text(dir / "judgments.jsonl", lines);
        summary.requests += backend.requests_sent();
        summary.batch_stats.emplace_back(u.name, batch.stats);
        spdlog::info("{}: {} of {} items accepted, {} requests ({} replayed)", u.name, batch.stats.accepted,
                     batch.stats.items, batch.stats.requests, batch.stats.replayed);
        for (const auto& item : batch.items) {
            if (item.result.accepted()) continue;
            FailedTuple f{u.name, item.tuple_index, item.repeat, u.design.tuples[item.tuple_index], item.result.failure, {}};
            for (const auto& r : item.result.responses) f.responses.push_back(r.text);
            summary.failed.push_back(std::move(f));
        }
    }
    return summary;
}

void stage_score(const RunConfig& cfg) {
    const auto units = plan_units(cfg);
    for (const auto& u : units) guard_unit_dir(cfg, u);
    for (const auto& u : units) {
        const auto loaded = load_judgments(cfg, u);
        for (const auto& corpus : u.corpora) {
            const auto judgments = judgments_for(loaded.annotations, corpus.dimension, cfg.adapted);
            const auto ids = corpus.ids();
            ScoreTable raw = is_comparative(cfg.protocol)
                                 ? score_counting(judgments, ids, u.design.seed)
                                 : score_ratings(judgments, ids, cfg.aggregation, u.design.seed);
            const bool any_defined = std::any_of(raw.rows.begin(), raw.rows.end(), [](const ScoreRow& r) { return r.raw.has_value(); });
            if (!any_defined) throw Error(fmt::format("{}: no text received a score", corpus.dimension));
            const ScoreTable table = normalize(std::move(raw));
            for (const auto& w : table.warnings) spdlog::warn("{}: {}", corpus.dimension, w);

            const auto dir = dimension_dir(cfg, corpus.dimension);
            std::ostringstream tsv;
            table.write_tsv(tsv);
            write_text(dir / "scores.tsv", tsv.str());

            const auto missing = table.undefined_ids();
            std::vector<std::string> defined;
            for (const auto& r : table.rows)
                if (r.normalized) defined.push_back(r.id);
            if (!missing.empty())
                spdlog::warn("{}: {} text(s) without a score are left out of labeled.jsonl", corpus.dimension,
                             missing.size());
            std::ostringstream labeled;
            write_labeled(corpus.subset(defined), table, labeled);
            write_text(dir / "labeled.jsonl", labeled.str());
        }
    }
}

EvalReport stage_eval(const RunConfig& cfg) {
    const auto units = plan_units(cfg);
    EvalReport report = empty_report(cfg);
    json stats = json::array();
    json failed = json::array();
    for (const auto& u : units) guard_unit_dir(cfg, u);
    for (const auto& u : units) {
        const auto loaded = load_judgments(cfg, u);
        stats.push_back(loaded.stats);
        for (const auto& f : loaded.failed)
            failed.push_back({{"unit", f.unit},
                              {"tuple_index", f.tuple_index},
                              {"repeat", f.repeat},
                              {"ids", f.ids},
                              {"failure", f.failure},
                              {"responses", f.responses}});
        for (const auto& corpus : u.corpora) {
            const auto path = dimension_dir(cfg, corpus.dimension) / "scores.tsv";
            std::ifstream in(path, std::ios::binary);
            if (!in) throw Error(fmt::format("{} is missing; run the score stage first", path.string()));
            const auto scores = ScoreTable::read_tsv(in, path.string());

            std::optional<ShrResult> shr;
            // Ratings made once per text give each text a single measurement,
            // which cannot be split.
            const bool splittable = is_comparative(cfg.protocol) || cfg.repeats > 1;
            if (cfg.shr_iterations > 0 && splittable && !loaded.annotations.empty()) {
                std::vector<Annotation> anns = loaded.annotations;
                if (cfg.adapted)
                    for (auto& a : anns) a.judgment = a.judgment.project(corpus.dimension);
                try {
                    shr = split_half_reliability(anns, u.design, cfg.shr_iterations,
                                                 derive_seed(cfg.eval_seed, {0xE7A1}));
                } catch (const UndefinedCorrelation& e) {
                    spdlog::warn("{}: split-half reliability undefined: {}", corpus.dimension, e.what());
                }
            }
            report.dimensions.push_back(evaluate_dimension(corpus, scores, shr, cfg.shr_iterations));
        }
    }
    json doc = report.to_json();
    doc["stats"] = stats;
    doc["failed_tuples"] = failed;
    write_text(cfg.output_dir / "report.json", doc.dump(2) + "\n");
    std::string table = report.render_table();
    if (!failed.empty()) table += fmt::format("\n{} tuple annotation(s) failed; see report.json\n", failed.size());
    write_text(cfg.output_dir / "report.txt", table);
    return report;
}

RunSummary run_annotation(const RunConfig& cfg) {
    RunSummary summary = stage_annotate(cfg);
    stage_score(cfg);
    summary.report = stage_eval(cfg);
    return summary;
}

} // namespace annot
