#pragma once

// Counter-based splittable random stream.  Output i of a stream is a pure
// function of (key, i), so parallel workers can each take their own stream
// derived from (seed, worker index) without sharing state, and replaying a
// path needs only the (seed, stream) pair that produced it.

#include <cstdint>

namespace stocon {

class SplitStream {
public:
    explicit SplitStream(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(derive(seed, stream)) {}

    std::uint64_t next_u64() {
        ++ctr_;
        return finalize(key_ + ctr_ * GOLDEN);
    }

    /// Uniform double in [0, 1).
    double next_unit() { return (next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_unit();
    }

    /// Derive an independent child stream; children with distinct indices are
    /// decorrelated from each other and from the parent's own draws.
    [[nodiscard]] SplitStream fork(std::uint64_t child) const {
        SplitStream s(0, 0);
        s.key_ = finalize(key_ ^ finalize(child + FORK_SALT));
        s.ctr_ = 0;
        return s;
    }

private:
    static constexpr std::uint64_t GOLDEN = 0x9e3779b97f4a7c15ull;
    static constexpr std::uint64_t FORK_SALT = 0x1bd11bdaa9fc1a22ull;

    static std::uint64_t finalize(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        return finalize(finalize(seed + GOLDEN) ^ finalize(stream * GOLDEN + FORK_SALT));
    }

    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
};

} // namespace stocon
