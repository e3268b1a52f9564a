#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

namespace umlab {

/// Counter-based random stream built on Philox4x32-10.
///
/// A stream is identified by a 64-bit key; draws advance a private counter.
/// `substream(ids...)` derives an independent child keyed by the parent key
/// and the ids, which lets work keyed by (seed, epoch, episode, task, ...)
/// draw the same numbers no matter which thread runs it or in what order.
///
/// Distribution helpers are implemented here rather than via <random>
/// distributions so that draws are identical across standard libraries.
class Stream {
public:
    using result_type = std::uint64_t;

    explicit Stream(std::uint64_t seed = 0);

    Stream substream(std::initializer_list<std::uint64_t> ids) const;
    template <typename... Ids>
    Stream substream(Ids... ids) const {
        return substream({static_cast<std::uint64_t>(ids)...});
    }

    std::uint64_t key() const { return key_; }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next_u64(); }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal (Box-Muller).
    double normal();
    /// Unbiased integer in [0, n). n must be positive.
    std::uint64_t index(std::uint64_t n);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// k distinct values from [0, n) in random order (partial Fisher-Yates).
    std::vector<int> choose(int n, int k);

private:
    void refill();

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer; used for key derivation.
std::uint64_t mix64(std::uint64_t x);

/// One Philox4x32 block with 10 rounds.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

}  // namespace umlab
