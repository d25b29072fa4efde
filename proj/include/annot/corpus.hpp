#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace annot {

class ScoreTable;

enum class Split { train, dev, test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct TextInstance {
    std::string id;
    std::string text;
    std::string dimension;
    std::optional<double> gold_score;
};

// Texts annotated for one dimension (e.g. "joy") of one split. Instances keep
// file order; ids are unique.
struct Corpus {
    std::string dimension;
    Split split = Split::train;
    std::vector<TextInstance> instances;

    std::size_t size() const { return instances.size(); }
    std::vector<std::string> ids() const;
    const TextInstance* find(std::string_view id) const;
    bool has_gold() const;

    // Throws ValidationError on an empty corpus, duplicate ids, blank texts,
    // mixed dimensions or gold scores outside [0,1].
    void validate() const;

    // Subset in the order of `ids`; unknown ids throw.
    Corpus subset(const std::vector<std::string>& ids) const;
};

enum class CorpusFormat { ait_tsv, jsonl };
CorpusFormat corpus_format_from_string(std::string_view s);

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format, Split split = Split::train);
Corpus read_corpus(std::istream& in, CorpusFormat format, std::string_view source_name,
                   Split split = Split::train);

// Writes one {id, text, dimension, score} JSON object per line in corpus
// order, using each instance's normalized score. Returns rows written.
std::size_t export_labeled(const Corpus& corpus, const ScoreTable& scores,
                           const std::filesystem::path& path);
std::size_t write_labeled(const Corpus& corpus, const ScoreTable& scores, std::ostream& out);

// Fixed 4-decimal rendering used for every score written to disk.
std::string format_score(double value);

} // namespace annot
