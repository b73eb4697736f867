#include "metacore/rng.hpp"

namespace metacore {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

StreamRng::result_type StreamRng::operator()() {
    ++counter_;
    return splitmix64(key_ + counter_ * kGolden);
}

std::uint64_t derive_key(std::uint64_t parent, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(parent);
    for (const auto tag : tags) {
        h = splitmix64(h ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
    }
    return h;
}

}  // namespace metacore
