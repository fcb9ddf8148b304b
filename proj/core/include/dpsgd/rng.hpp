#pragma once

#include <cmath>
#include <cstdint>

namespace dpsgd {

// Counter-based pseudorandom streams. Every consumer of randomness derives
// its own stream from (seed, stream id, step, index), so results do not
// depend on scheduling order or worker count, and varying one noise source
// leaves the others untouched.

inline constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class Stream : std::uint64_t {
    init = 1,      // parameter initialization
    sampling = 2,  // Poisson lot selection / epoch shuffles
    dropout = 3,   // per-sample dropout masks
    noise = 4,     // Gaussian mechanism noise
    subset = 5,    // stratified subset selection
};

class CounterRng {
public:
    CounterRng(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0) {
        key_ = mix64(mix64(seed) ^ static_cast<std::uint64_t>(stream));
        key_ = mix64(key_ ^ mix64(a ^ 0x7fb5d329728ea185ULL));
        key_ = mix64(key_ ^ mix64(b ^ 0x2f1fbb3a481f4a2bULL));
    }

    std::uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

    // uniform on [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform on (0, 1]
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller (pairwise, spare cached)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dpsgd
