#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace erl::rng {

// splitmix64. Hand-rolled so that seeded streams are stable across
// platforms and standard-library versions; std::uniform_*_distribution
// gives no such guarantee and would break golden files.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit mantissa.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [lo, hi], inclusive. Lemire multiply-shift with
    // rejection, so the result is exactly uniform.
    std::uint64_t next_range(std::uint64_t lo, std::uint64_t hi) {
        const std::uint64_t span = hi - lo + 1;
        if (span == 0) return next();  // full 64-bit range
        const std::uint64_t reject_below = (0 - span) % span;
        for (;;) {
            const std::uint64_t x = next();
            const auto m = static_cast<unsigned __int128>(x) * span;
            const auto low = static_cast<std::uint64_t>(m);
            if (low >= reject_below) return lo + static_cast<std::uint64_t>(m >> 64);
        }
    }

    int next_int(int lo, int hi) {
        return lo + static_cast<int>(next_range(0, static_cast<std::uint64_t>(hi - lo)));
    }

    double next_real(double lo, double hi) { return lo + (hi - lo) * next_double(); }

private:
    std::uint64_t state_;
};

// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    SplitMix64 s(a ^ (0x9e3779b97f4a7c15ULL + (b << 1)));
    s.next();
    return s.next() ^ b;
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix(mix(a, b), c);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    return mix(mix(a, b, c), d);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

}  // namespace erl::rng
