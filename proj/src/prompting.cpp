#include "annot/prompting.hpp"

#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace annot {

namespace {

const std::map<std::string, std::string, std::less<>>& templates() {
    static const std::map<std::string, std::string, std::less<>> table = [] {
        std::map<std::string, std::string, std::less<>> raw{
#include "prompt_templates.inc"
        };
        // Drop "## " header lines and the final newline of each resource.
        for (auto& [name, body] : raw) {
            std::string cleaned;
            std::size_t pos = 0;
            while (pos < body.size()) {
                auto end = body.find('\n', pos);
                if (end == std::string::npos) end = body.size();
                std::string_view line(body.data() + pos, end - pos);
                if (!line.starts_with("## ")) {
                    cleaned.append(line);
                    cleaned.push_back('\n');
                }
                pos = end + 1;
            }
            while (!cleaned.empty() && cleaned.back() == '\n') cleaned.pop_back();
            body = std::move(cleaned);
        }
        return raw;
    }();
    return table;
}

const std::string& tmpl(std::string_view name) {
    const auto& t = templates();
    auto it = t.find(name);
    if (it == t.end()) throw PromptError(fmt::format("missing prompt template '{}'", name));
    return it->second;
}

using Vars = std::map<std::string, std::string, std::less<>>;

// Single pass: substituted values are never rescanned, so texts containing
// braces come through verbatim.
std::string substitute(std::string_view body, const Vars& vars) {
    std::string out;
    out.reserve(body.size() + 64);
    std::size_t pos = 0;
    while (pos < body.size()) {
        const auto open = body.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(body.substr(pos));
            break;
        }
        out.append(body.substr(pos, open - pos));
        const auto close = body.find('}', open);
        if (close == std::string_view::npos) {
            out.append(body.substr(open));
            break;
        }
        const auto name = body.substr(open + 1, close - open - 1);
        const bool ident = !name.empty() && name.find_first_not_of("abcdefghijklmnopqrstuvwxyz_") == std::string_view::npos;
        if (!ident) {
            out.push_back('{');
            pos = open + 1;
            continue;
        }
        auto it = vars.find(name);
        if (it == vars.end()) throw PromptError(fmt::format("template placeholder '{{{}}}' has no value", name));
        out.append(it->second);
        pos = close + 1;
    }
    return out;
}

// Collapses the gaps left when {emo} is substituted with nothing.
std::string tidy_generic(std::string_view text) {
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto end = text.find('\n', pos);
        const auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        bool space = false;
        bool started = false;
        for (char c : line) {
            if (c == ' ') {
                space = true;
                continue;
            }
            if (space && started) out.push_back(' ');
            space = false;
            started = true;
            out.push_back(c);
        }
        if (end == std::string_view::npos) break;
        out.push_back('\n');
        pos = end + 1;
    }
    return out;
}

std::string endpoint(const RatingScaleSpec& s, bool top) {
    if (s.decimals) return top ? "1.0" : "0.0";
    return top ? std::to_string(s.max_value) : "0";
}

std::string_view count_word(std::size_t n) {
    switch (n) {
    case 2: return "two";
    case 4: return "four";
    default: return "";
    }
}

std::string render_texts(Protocol protocol, std::span<const TextRef> texts) {
    std::string out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (i) out.push_back('\n');
        if (protocol == Protocol::rs)
            out += fmt::format("Text: {}", texts[i].text);
        else if (protocol == Protocol::rs_t)
            out += fmt::format("Text {}: {}", i + 1, texts[i].text);
        else
            out += fmt::format("Speaker {}: {}", i + 1, texts[i].text);
    }
    return out;
}

PromptBundle make_bundle(Protocol protocol, std::span<const TextRef> texts) {
    PromptBundle b;
    b.role_text = role_text();
    b.protocol = protocol;
    for (const auto& t : texts) {
        b.tuple_ids.push_back(t.id);
        b.tuple_texts.push_back(t.text);
    }
    return b;
}

void check_width(Protocol protocol, std::span<const TextRef> texts) {
    const auto want = prompt_width(protocol);
    // Rating-scale tuples tolerate a short final batch.
    const bool ok = protocol == Protocol::rs_t ? !texts.empty() && texts.size() <= want : texts.size() == want;
    if (!ok)
        throw PromptError(fmt::format("protocol {} takes {} text(s), got {}", to_string(protocol), want, texts.size()));
}

} // namespace

RatingScaleSpec RatingScaleSpec::parse(std::string_view code) {
    const auto dash = code.find('-');
    if (dash == std::string_view::npos) throw PromptError(fmt::format("bad scale code '{}'", code));
    const auto level = code.substr(0, dash);
    const auto granularity = code.substr(dash + 1);
    RatingScaleSpec s;
    if (level == "B")
        s.level = ScaleLevel::bare;
    else if (level == "OL")
        s.level = ScaleLevel::outlined;
    else if (level == "D")
        s.level = ScaleLevel::descriptive;
    else
        throw PromptError(fmt::format("bad scale level in '{}'", code));
    if (granularity == "1")
        s.max_value = 1;
    else if (granularity == "4")
        s.max_value = 4;
    else if (granularity == "10")
        s.max_value = 10;
    else if (granularity == "100")
        s.max_value = 100;
    else
        throw PromptError(fmt::format("bad scale granularity in '{}'", code));
    s.decimals = s.max_value == 1;
    s.validate();
    return s;
}

std::string RatingScaleSpec::code() const {
    const char* l = level == ScaleLevel::bare ? "B" : level == ScaleLevel::outlined ? "OL" : "D";
    return fmt::format("{}-{}", l, max_value);
}

void RatingScaleSpec::validate() const {
    if (max_value != 1 && max_value != 4 && max_value != 10 && max_value != 100)
        throw PromptError(fmt::format("unsupported scale maximum {}", max_value));
    if (level == ScaleLevel::descriptive && max_value != 4 && max_value != 10)
        throw PromptError(fmt::format("descriptive scale is only defined for 0-4 and 0-10, not {}", code()));
    if (decimals != (max_value == 1)) throw PromptError("decimals are used exactly for the 0.0-1.0 scale");
}

const std::string& role_text() { return tmpl("role"); }

std::string PromptBundle::inline_text() const { return role_text + "\n" + user_text; }

std::string PromptBundle::hash() const {
    std::string material = role_text;
    material.push_back('\0');
    material += user_text;
    return sha256_hex(material);
}

std::string render_scale_block(const RatingScaleSpec& scale, std::string_view emo) {
    scale.validate();
    std::string levels;
    switch (scale.level) {
    case ScaleLevel::descriptive:
        levels = tmpl(scale.max_value == 4 ? "scale_d4" : "scale_d10");
        break;
    case ScaleLevel::outlined:
        levels = tmpl("scale_outlined");
        break;
    case ScaleLevel::bare:
        levels = tmpl("scale_bare");
        break;
    }
    std::string rendered = substitute(
        levels, Vars{{"emo", std::string(emo)}, {"max", endpoint(scale, true)}, {"min", endpoint(scale, false)}});
    if (emo.empty()) rendered = tidy_generic(rendered);
    const std::string rounding = scale.decimals ? "\n" + tmpl("scale_rounding") : std::string();
    return substitute(tmpl("scale"), Vars{{"rounding", rounding}, {"levels", rendered}});
}

PromptBundle render_prompt(Protocol protocol, std::span<const TextRef> texts, std::string_view dimension,
                           const std::optional<RatingScaleSpec>& scale) {
    check_width(protocol, texts);
    if (dimension.empty()) throw PromptError("dimension must not be empty");
    const bool rating = !is_comparative(protocol);
    if (rating && !scale) throw PromptError("rating prompts need a scale");
    if (!rating && scale) throw PromptError("comparative prompts take no scale");

    PromptBundle b = make_bundle(protocol, texts);
    b.dimensions = {std::string(dimension)};
    Vars vars{{"emo", std::string(dimension)}, {"texts", render_texts(protocol, texts)}};
    if (rating) {
        vars["scale"] = render_scale_block(*scale, dimension);
        b.scale = scale;
        b.user_text = substitute(tmpl("rating"), vars);
    } else {
        vars["count"] = std::string(count_word(texts.size()));
        b.user_text = substitute(tmpl("comparative"), vars);
    }
    return b;
}

PromptBundle render_adapted_multiemotion(std::span<const TextRef> texts, std::span<const std::string> dimensions,
                                         const std::optional<RatingScaleSpec>& scale, Protocol protocol) {
    if (protocol != Protocol::rs_t && protocol != Protocol::bws)
        throw PromptError(fmt::format("multi-emotion prompts support rs_t and bws, not {}", to_string(protocol)));
    if (dimensions.size() != adapted_dimension_count)
        throw PromptError(fmt::format("multi-emotion prompts take {} dimensions, got {}", adapted_dimension_count,
                                      dimensions.size()));
    for (std::size_t i = 0; i < dimensions.size(); ++i)
        for (std::size_t j = i + 1; j < dimensions.size(); ++j)
            if (dimensions[i] == dimensions[j])
                throw PromptError(fmt::format("dimension '{}' listed twice", dimensions[i]));
    const bool short_rs_t = protocol == Protocol::rs_t && !texts.empty() && texts.size() < 4;
    if (texts.size() != 4 && !short_rs_t)
        throw PromptError(fmt::format("multi-emotion prompts take 4 texts, got {}", texts.size()));

    PromptBundle b = make_bundle(protocol, texts);
    b.dimensions.assign(dimensions.begin(), dimensions.end());
    Vars vars{{"emotions", fmt::format("{}", fmt::join(dimensions, ", "))},
              {"texts", render_texts(protocol, texts)},
              {"count", std::string(count_word(texts.size()))}};
    std::string slots;
    if (protocol == Protocol::rs_t) {
        if (!scale) throw PromptError("rating prompts need a scale");
        b.scale = scale;
        vars["scale"] = render_scale_block(*scale, "");
        for (const auto& emo : dimensions)
            for (std::size_t i = 0; i < texts.size(); ++i) {
                if (!slots.empty()) slots.push_back('\n');
                slots += substitute(tmpl("adapted_rating_slot"), Vars{{"index", std::to_string(i + 1)}, {"emo", emo}});
            }
        vars["slots"] = slots;
        b.user_text = substitute(tmpl("adapted_rating"), vars);
    } else {
        for (const auto& emo : dimensions) {
            if (!slots.empty()) slots.push_back('\n');
            slots += substitute(tmpl("adapted_comparative_slot"), Vars{{"emo", emo}});
        }
        vars["slots"] = slots;
        b.user_text = substitute(tmpl("adapted_comparative"), vars);
    }
    return b;
}

} // namespace annot
