#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace miascope {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

// xoshiro256++ seeded by mixing a master seed with stream tags. Distinct tag
// tuples give independent streams, so parallel cells never share state and
// results do not depend on scheduling order. Gaussian draws use the polar
// method, which keeps the byte-for-byte output independent of the standard
// library in use.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t tag0 = 0, std::uint64_t tag1 = 0,
                 std::uint64_t tag2 = 0) {
        std::uint64_t mix = seed;
        mix = mix * 0x9e3779b97f4a7c15ULL + tag0;
        mix ^= (tag1 + 0x9e3779b97f4a7c15ULL + (mix << 6) + (mix >> 2));
        mix = mix * 0xbf58476d1ce4e5b9ULL + tag2;
        for (auto& word : state_) word = detail::splitmix64(mix);
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform on [0, 1) with 53 significant bits
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer on [0, bound) without modulo bias
    std::uint64_t next_below(std::uint64_t bound) {
        std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_double() - 1.0;
            v = 2.0 * next_double() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double f = std::sqrt(-2.0 * std::log(s) / s);
        cached_ = v * f;
        have_cached_ = true;
        return u * f;
    }

    void fill_normal(double* out, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = next_normal();
    }

    // Fisher-Yates over the whole range
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_[4] = {};
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace miascope
