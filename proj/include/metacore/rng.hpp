#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace metacore {

/// Counter-based generator. Output i of the stream with key k is
/// splitmix64(k + (i + 1) * golden), so a stream is fully determined by its
/// key and any number of streams can be derived without shared state.
/// Satisfies UniformRandomBitGenerator.
class StreamRng {
public:
    using result_type = std::uint64_t;

    explicit StreamRng(std::uint64_t key) : key_(key) {}

    result_type operator()();

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Derives a child stream key from a parent key and a list of tags, e.g.
/// derive_key(seed, {phase, iteration, task, sample}).
std::uint64_t derive_key(std::uint64_t parent, std::initializer_list<std::uint64_t> tags);

}  // namespace metacore
