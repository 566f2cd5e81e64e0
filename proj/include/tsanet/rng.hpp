#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace tsanet {

/// Deterministic, self-contained random generator (splitmix64 core with
/// Box-Muller gaussians). The standard library distributions are
/// implementation-defined, so everything random in the repo flows through
/// this class to keep outputs reproducible across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller, one spare cached.
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 1.0 - uniform01(); // (0, 1]
        double v = uniform01();
        double r = std::sqrt(-2.0 * std::log(u));
        double a = 6.283185307179586476925286766559 * v;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double gauss(double mu, double sigma) { return mu + sigma * gauss(); }

    /// Uniform integer in [0, n). n must be positive.
    int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = below(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    /// Independent child stream; deterministic in (parent seed, stream id).
    Rng fork(uint64_t stream) const {
        Rng child(state_ ^ (0x632be59bd9b4e019ULL * (stream + 1)));
        child.next_u64();
        return child;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Mixes a root seed with a purpose tag so sub-systems get unrelated streams.
inline uint64_t mix_seed(uint64_t root, std::string_view tag) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    Rng m(root ^ h);
    return m.next_u64();
}

} // namespace tsanet
