#pragma once

#include "annot/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace testing {

inline const std::filesystem::path test_dir{ANNOT_TEST_DIR};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("annot_" + tag + "_" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

// Corpus of n texts "t000".. with evenly spaced gold scores.
inline annot::Corpus ladder_corpus(std::size_t n, const std::string& dimension = "joy") {
    annot::Corpus c;
    c.dimension = dimension;
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "t%03zu", i);
        c.instances.push_back({id, "text number " + std::to_string(i), dimension,
                               n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5});
    }
    return c;
}

} // namespace testing

namespace testing {

inline void write_ait(const std::filesystem::path& p, const annot::Corpus& c) {
    std::string out = "ID\tTweet\tAffect Dimension\tIntensity Score\n";
    for (const auto& t : c.instances)
        out += t.id + "\t" + t.text + "\t" + c.dimension + "\t" +
               (t.gold_score ? std::to_string(*t.gold_score) : std::string("NONE")) + "\n";
    spit(p, out);
}

inline std::size_t count_lines(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

} // namespace testing
