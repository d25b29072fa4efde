#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <utility>

namespace annot {

// Derives a child seed from a base seed and a list of keys. Used to give every
// (tuple, repeat, attempt, slot) its own stream so results do not depend on
// scheduling order.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

// mt19937_64 with hand-written distributions. The std:: distributions are
// implementation-defined, which would break cross-platform reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, n); n must be > 0.
    std::size_t below(std::size_t n);

    // Uniform double in [0, 1).
    double uniform01();

    double normal(double mean = 0.0, double sigma = 1.0);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(i);
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace annot
