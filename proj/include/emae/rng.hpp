#ifndef EMAE_RNG_HPP
#define EMAE_RNG_HPP

#include <cmath>
#include <cstdint>

namespace emae {

// Counter-based deterministic generator. Output i is a fixed 64-bit mix of
// (key, i), so streams are splittable by key and bit-identical on every
// platform. All training/eval randomness in this project flows through it.
class CounterRng {
public:
    explicit CounterRng(uint64_t key) : key_(key) {}

    // SplitMix64 finalizer.
    static uint64_t mix(uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    // Key derivation for independent substreams, e.g.
    // derive(seed, image_index, draw_index).
    static uint64_t derive(uint64_t key, uint64_t a) { return mix(mix(key) ^ a); }
    static uint64_t derive(uint64_t key, uint64_t a, uint64_t b) {
        return derive(derive(key, a), b);
    }

    uint64_t next_u64() { return mix(key_ ^ mix(counter_++)); }

    // Uniform double in [0, 1), 53 mantissa bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. Caches the second deviate.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, std) truncated to [-2 std, 2 std] by redraw.
    double next_trunc_normal(double std_dev) {
        double z = next_normal();
        while (z < -2.0 || z > 2.0) z = next_normal();
        return z * std_dev;
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    uint64_t key() const { return key_; }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace emae

#endif  // EMAE_RNG_HPP
