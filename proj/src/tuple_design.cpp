#include "annot/tuple_design.hpp"

#include "annot/corpus.hpp"
#include "annot/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace annot {

using nlohmann::json;

DesignStats compute_design_stats(const std::vector<std::vector<std::string>>& tuples,
                                 const std::vector<std::string>& corpus_ids) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < corpus_ids.size(); ++i) index.emplace(corpus_ids[i], i);

    DesignStats stats;
    stats.appearances.assign(corpus_ids.size(), 0);
    std::unordered_map<std::uint64_t, int> pair_counts;
    for (const auto& t : tuples) {
        std::vector<std::size_t> members;
        for (const auto& id : t) {
            auto it = index.find(id);
            if (it == index.end()) throw ValidationError(fmt::format("tuple id '{}' not in corpus", id));
            members.push_back(it->second);
            ++stats.appearances[it->second];
        }
        for (std::size_t a = 0; a < members.size(); ++a)
            for (std::size_t b = a + 1; b < members.size(); ++b) {
                auto lo = std::min(members[a], members[b]), hi = std::max(members[a], members[b]);
                ++pair_counts[(static_cast<std::uint64_t>(lo) << 32) | hi];
            }
    }
    for (const auto& [key, count] : pair_counts)
        if (count > 1) stats.repeated_pairs += count - 1;
    if (!stats.appearances.empty()) {
        auto [lo, hi] = std::minmax_element(stats.appearances.begin(), stats.appearances.end());
        stats.min_appearance = *lo;
        stats.max_appearance = *hi;
    }
    return stats;
}

namespace {

// Symmetric pair occurrence counter over item indices.
class PairCounts {
public:
    explicit PairCounts(std::size_t n) : n_(n), counts_(n * n, 0) {}
    int get(std::size_t a, std::size_t b) const { return counts_[a * n_ + b]; }
    void add(std::size_t a, std::size_t b, int delta) {
        counts_[a * n_ + b] += delta;
        counts_[b * n_ + a] += delta;
    }

private:
    std::size_t n_;
    std::vector<int> counts_;
};

using Block = std::vector<std::size_t>;

long total_repeats(const std::vector<Block>& blocks, std::size_t n) {
    PairCounts pc(n);
    long repeats = 0;
    for (const auto& b : blocks)
        for (std::size_t i = 0; i < b.size(); ++i)
            for (std::size_t j = i + 1; j < b.size(); ++j) {
                if (pc.get(b[i], b[j]) > 0) ++repeats;
                pc.add(b[i], b[j], 1);
            }
    return repeats;
}

// Greedy construction. Each item gets a quota (spread <= 1, summing to
// budget * size). Items whose remaining quota equals the number of blocks
// still to fill are forced into the current block, which keeps every prefix
// completable. Remaining slots go to the candidate minimising
// (pair reuse, -remaining quota) with seeded tie-breaking.
std::optional<std::vector<Block>> greedy_blocks(std::size_t n, std::size_t budget, std::size_t size,
                                                Rng& rng) {
    const std::size_t slots = budget * size;
    std::vector<int> quota(n, static_cast<int>(slots / n));
    {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(std::span(order));
        for (std::size_t i = 0; i < slots % n; ++i) ++quota[order[i]];
    }

    PairCounts pairs(n);
    std::vector<Block> blocks;
    blocks.reserve(budget);
    std::vector<char> in_block(n, 0);
    std::vector<std::size_t> ties;

    for (std::size_t b = 0; b < budget; ++b) {
        const int blocks_left = static_cast<int>(budget - b);
        Block block;
        for (std::size_t i = 0; i < n; ++i)
            if (quota[i] == blocks_left) block.push_back(i);
        if (block.size() > size) return std::nullopt;
        rng.shuffle(std::span(block));
        for (auto i : block) in_block[i] = 1;

        while (block.size() < size) {
            long best_reuse = std::numeric_limits<long>::max();
            int best_quota = -1;
            ties.clear();
            for (std::size_t i = 0; i < n; ++i) {
                if (quota[i] <= 0 || in_block[i]) continue;
                long reuse = 0;
                for (auto m : block) reuse += pairs.get(i, m);
                if (reuse < best_reuse || (reuse == best_reuse && quota[i] > best_quota)) {
                    best_reuse = reuse;
                    best_quota = quota[i];
                    ties.clear();
                }
                if (reuse == best_reuse && quota[i] == best_quota) ties.push_back(i);
            }
            if (ties.empty()) return std::nullopt;
            const auto pick = ties[rng.below(ties.size())];
            block.push_back(pick);
            in_block[pick] = 1;
        }
        for (std::size_t i = 0; i < block.size(); ++i) {
            in_block[block[i]] = 0;
            --quota[block[i]];
            for (std::size_t j = i + 1; j < block.size(); ++j) pairs.add(block[i], block[j], 1);
        }
        blocks.push_back(std::move(block));
    }
    return blocks;
}

// Local search that swaps single items between blocks. Swaps keep every
// item's appearance count, so only the pair structure changes. Moves that
// increase the repeat count are rejected; sideways moves are allowed.
long repair_repeats(std::vector<Block>& blocks, std::size_t n, Rng& rng, std::size_t max_moves) {
    PairCounts pairs(n);
    for (const auto& b : blocks)
        for (std::size_t i = 0; i < b.size(); ++i)
            for (std::size_t j = i + 1; j < b.size(); ++j) pairs.add(b[i], b[j], 1);

    auto repeats_of = [&](std::size_t item, const Block& block, std::size_t skip) {
        long r = 0;
        for (auto m : block)
            if (m != item && m != skip && pairs.get(item, m) > 1) ++r;
        return r;
    };

    long repeats = total_repeats(blocks, n);
    const std::size_t size = blocks.empty() ? 0 : blocks.front().size();
    for (std::size_t move = 0; move < max_moves && repeats > 0; ++move) {
        // Pick a block holding a repeated pair.
        std::size_t a = rng.below(blocks.size());
        std::size_t xi = 0;
        bool found = false;
        for (std::size_t scan = 0; scan < blocks.size() && !found; ++scan, a = (a + 1) % blocks.size()) {
            const auto& blk = blocks[a];
            for (std::size_t i = 0; i < size && !found; ++i)
                for (std::size_t j = 0; j < size; ++j)
                    if (i != j && pairs.get(blk[i], blk[j]) > 1) {
                        xi = rng.below(2) ? i : j;
                        found = true;
                        break;
                    }
            if (found) break;
        }
        if (!found) break;

        const std::size_t b = rng.below(blocks.size());
        if (b == a) continue;
        const std::size_t zi = rng.below(size);
        const std::size_t x = blocks[a][xi], z = blocks[b][zi];
        if (std::find(blocks[a].begin(), blocks[a].end(), z) != blocks[a].end()) continue;
        if (std::find(blocks[b].begin(), blocks[b].end(), x) != blocks[b].end()) continue;

        // Repeats contributed by the affected pairs, before and after.
        const long before = repeats_of(x, blocks[a], x) + repeats_of(z, blocks[b], z);
        for (auto m : blocks[a])
            if (m != x) pairs.add(x, m, -1);
        for (auto m : blocks[b])
            if (m != z) pairs.add(z, m, -1);
        for (auto m : blocks[a])
            if (m != x) pairs.add(z, m, 1);
        for (auto m : blocks[b])
            if (m != z) pairs.add(x, m, 1);
        Block na = blocks[a], nb = blocks[b];
        na[xi] = z;
        nb[zi] = x;
        const long after = repeats_of(z, na, z) + repeats_of(x, nb, x);
        if (after <= before) {
            blocks[a] = std::move(na);
            blocks[b] = std::move(nb);
            repeats += after - before;
        } else {
            for (auto m : blocks[a])
                if (m != x) pairs.add(z, m, -1);
            for (auto m : blocks[b])
                if (m != z) pairs.add(x, m, -1);
            for (auto m : blocks[a])
                if (m != x) pairs.add(x, m, 1);
            for (auto m : blocks[b])
                if (m != z) pairs.add(z, m, 1);
        }
    }
    return repeats;
}

std::size_t choose2(std::size_t n) { return n * (n - 1) / 2; }

} // namespace

TupleSet design_bws_tuples(const Corpus& corpus, const TupleDesignConfig& cfg) {
    const std::size_t n = corpus.size();
    if (cfg.tuple_size != 4) throw DesignError(fmt::format("BWS designs use 4-tuples, got {}", cfg.tuple_size));
    if (n < 4) throw DesignError(fmt::format("BWS design needs at least 4 texts, corpus has {}", n));
    if (!(cfg.multiplier_k > 0.0)) throw DesignError("tuple multiplier k must be > 0");
    if (cfg.max_repair_attempts < 1) throw DesignError("max_repair_attempts must be >= 1");

    const auto budget = static_cast<std::size_t>(std::llround(cfg.multiplier_k * static_cast<double>(n)));
    if (budget == 0) throw DesignError("tuple budget rounds to zero");
    const std::size_t size = 4;
    const std::size_t pair_demand = budget * choose2(size);
    const bool repeats_forced = pair_demand > choose2(n);

    std::optional<std::vector<Block>> best;
    long best_repeats = std::numeric_limits<long>::max();
    for (int attempt = 0; attempt < cfg.max_repair_attempts; ++attempt) {
        Rng rng(derive_seed(cfg.seed, {0xB175, static_cast<std::uint64_t>(attempt)}));
        auto blocks = greedy_blocks(n, budget, size, rng);
        if (!blocks) continue;
        long repeats = total_repeats(*blocks, n);
        if (repeats > 0) repeats = repair_repeats(*blocks, n, rng, 200 * budget);
        if (repeats < best_repeats) {
            best_repeats = repeats;
            best = std::move(blocks);
        }
        if (best_repeats == 0) break;
        // A forced-repeat design cannot reach zero; one attempt is enough.
        if (repeats_forced) break;
    }
    if (!best) throw DesignError("could not construct a balanced design within max_repair_attempts");

    TupleSet set;
    set.protocol = Protocol::bws;
    set.seed = cfg.seed;
    const auto& ids = corpus.instances;
    set.tuples.reserve(best->size());
    for (const auto& b : *best) {
        std::vector<std::string> t;
        for (auto i : b) t.push_back(ids[i].id);
        set.tuples.push_back(std::move(t));
    }
    set.stats = compute_design_stats(set.tuples, corpus.ids());
    if (set.stats.repeated_pairs > 0) {
        set.warnings.push_back(fmt::format(
            "{} repeated pair occurrence(s) in {} tuples over {} texts (pair demand {} vs {} distinct pairs)",
            set.stats.repeated_pairs, budget, n, pair_demand, choose2(n)));
        spdlog::warn("bws design: {}", set.warnings.back());
    }
    return set;
}

TupleSet design_pc_pairs(const Corpus& corpus, std::optional<std::size_t> subset_size, std::uint64_t seed) {
    const std::size_t n = corpus.size();
    if (subset_size && *subset_size > n)
        throw DesignError(fmt::format("pair subset of {} exceeds corpus size {}", *subset_size, n));
    if (subset_size && *subset_size < 2) throw DesignError("pair subset needs at least 2 texts");
    if (n < 2) throw DesignError("paired comparison needs at least 2 texts");

    Rng rng(derive_seed(seed, {0x9C}));
    std::vector<std::string> ids = corpus.ids();
    if (subset_size) {
        rng.shuffle(std::span(ids));
        ids.resize(*subset_size);
    }
    TupleSet set;
    set.protocol = Protocol::pc;
    set.seed = seed;
    set.tuples.reserve(choose2(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
            if (rng.below(2))
                set.tuples.push_back({ids[j], ids[i]});
            else
                set.tuples.push_back({ids[i], ids[j]});
        }
    set.stats = compute_design_stats(set.tuples, corpus.ids());
    return set;
}

TupleSet design_rs_units(const Corpus& corpus, bool batched, std::uint64_t seed) {
    if (corpus.size() == 0) throw DesignError("corpus is empty");
    TupleSet set;
    set.protocol = batched ? Protocol::rs_t : Protocol::rs;
    set.seed = seed;
    std::vector<std::string> ids = corpus.ids();
    if (!batched) {
        for (auto& id : ids) set.tuples.push_back({std::move(id)});
    } else {
        Rng rng(derive_seed(seed, {0x25}));
        rng.shuffle(std::span(ids));
        for (std::size_t i = 0; i < ids.size(); i += 4) {
            const auto end = std::min(ids.size(), i + 4);
            set.tuples.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                    ids.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    set.stats = compute_design_stats(set.tuples, corpus.ids());
    return set;
}

void write_tuple_set(const TupleSet& set, std::ostream& out) {
    json j = json::object();
    j["protocol"] = std::string(to_string(set.protocol));
    j["seed"] = set.seed;
    j["tuples"] = set.tuples;
    out << j.dump() << '\n';
}

void save_tuple_set(const TupleSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    write_tuple_set(set, out);
}

TupleSet read_tuple_set(std::istream& in, const Corpus& corpus, std::string_view source_name) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    if (line.empty()) throw ParseError(source_name, lineno, "empty design file");
    TupleSet set;
    try {
        auto j = json::parse(line);
        set.protocol = protocol_from_string(j.at("protocol").get<std::string>());
        set.seed = j.at("seed").get<std::uint64_t>();
        set.tuples = j.at("tuples").get<std::vector<std::vector<std::string>>>();
    } catch (const json::exception& e) {
        throw ParseError(source_name, lineno, e.what());
    }
    const auto width = prompt_width(set.protocol);
    for (std::size_t t = 0; t < set.tuples.size(); ++t) {
        const auto& tuple = set.tuples[t];
        const bool short_last = set.protocol == Protocol::rs_t && t + 1 == set.tuples.size() && !tuple.empty();
        if (tuple.size() != width && !(short_last && tuple.size() < width))
            throw ValidationError(fmt::format("tuple {} has {} ids, protocol {} needs {}", t, tuple.size(),
                                              to_string(set.protocol), width));
        for (std::size_t a = 0; a < tuple.size(); ++a)
            for (std::size_t b = a + 1; b < tuple.size(); ++b)
                if (tuple[a] == tuple[b])
                    throw ValidationError(fmt::format("tuple {} repeats id '{}'", t, tuple[a]));
    }
    set.stats = compute_design_stats(set.tuples, corpus.ids());
    return set;
}

TupleSet load_tuple_set(const std::filesystem::path& path, const Corpus& corpus) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open design file {}", path.string()));
    return read_tuple_set(in, corpus, path.string());
}

} // namespace annot
