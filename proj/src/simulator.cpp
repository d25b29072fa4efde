#include "annot/backends.hpp"
#include "annot/rng.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace annot {

SimulatedAnnotator::SimulatedAnnotator(SimulatedAnnotatorConfig cfg, std::string id)
    : cfg_(std::move(cfg)), id_(std::move(id)) {}

double SimulatedAnnotator::scale_value(double perceived, const RatingScaleSpec& scale) {
    const double v = std::clamp(perceived, 0.0, 1.0) * scale.max_value;
    return scale.decimals ? std::round(v * 1e4) / 1e4 : std::round(v);
}

double SimulatedAnnotator::latent(const std::string& dimension, const std::string& id) const {
    if (auto d = cfg_.latent_by_dimension.find(dimension); d != cfg_.latent_by_dimension.end()) {
        if (auto it = d->second.find(id); it != d->second.end()) return it->second;
    }
    if (auto it = cfg_.latent_scores.find(id); it != cfg_.latent_scores.end()) return it->second;
    throw ValidationError(fmt::format("simulator has no latent score for '{}' ({})", id, dimension));
}

namespace {

std::string format_value(double v, const RatingScaleSpec& scale) {
    return scale.decimals ? fmt::format("{:.4f}", v) : fmt::format("{}", static_cast<long>(v));
}

std::pair<std::size_t, std::size_t> extremes(const std::vector<double>& perceived) {
    const auto best = static_cast<std::size_t>(std::max_element(perceived.begin(), perceived.end()) - perceived.begin());
    auto worst = static_cast<std::size_t>(std::min_element(perceived.begin(), perceived.end()) - perceived.begin());
    if (worst == best) worst = perceived.size() - 1 == best ? 0 : perceived.size() - 1;
    return {best, worst};
}

} // namespace

Completion SimulatedAnnotator::complete(const PromptBundle& prompt, const RequestContext& ctx) {
    for (const auto& id : prompt.tuple_ids)
        if (cfg_.content_filter_ids.contains(id))
            return {CompletionStatus::content_filtered, {}, fmt::format("content filter triggered by '{}'", id)};

    const std::uint64_t base = derive_seed(cfg_.seed, {ctx.tuple_index, static_cast<std::uint64_t>(ctx.repeat),
                                                       static_cast<std::uint64_t>(ctx.attempt), ctx.fallback ? 1u : 0u});
    const auto& dims = prompt.dimensions;
    const std::string& first = dims.front();
    const bool malformed = ctx.attempt <= cfg_.forced_malformed_attempts ||
                           (cfg_.malformed_rate > 0.0 && Rng(derive_seed(base, {0x3A1F})).uniform01() < cfg_.malformed_rate);
    if (malformed) {
        if (is_comparative(prompt.protocol))
            return {CompletionStatus::ok, fmt::format("Most {0} Speaker: 1\nLeast {0} Speaker: 1", first), {}};
        return {CompletionStatus::ok, "I am unable to rate the intensity of this text.", {}};
    }

    std::string out;
    auto append = [&out](const std::string& line) {
        if (!out.empty()) out.push_back('\n');
        out += line;
    };
    for (std::size_t d = 0; d < dims.size(); ++d) {
        std::vector<double> perceived;
        for (std::size_t p = 0; p < prompt.tuple_ids.size(); ++p) {
            double v = latent(dims[d], prompt.tuple_ids[p]);
            if (cfg_.noise_sigma > 0.0) v += Rng(derive_seed(base, {d, p})).normal(0.0, cfg_.noise_sigma);
            perceived.push_back(v);
        }
        if (is_comparative(prompt.protocol)) {
            const auto [best, worst] = extremes(perceived);
            append(fmt::format("Most {} Speaker: {}", dims[d], best + 1));
            append(fmt::format("Least {} Speaker: {}", dims[d], worst + 1));
            continue;
        }
        const auto& scale = *prompt.scale;
        for (std::size_t p = 0; p < perceived.size(); ++p) {
            const auto value = format_value(scale_value(perceived[p], scale), scale);
            if (prompt.adapted())
                append(fmt::format("Text {} {} intensity: {}", p + 1, dims[d], value));
            else
                append(fmt::format("{} intensity: {}", dims[d], value));
        }
    }
    return {CompletionStatus::ok, out, {}};
}

} // namespace annot
