#include "xmodal/rng.hpp"

namespace xmodal {

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, std::string_view tag) {
    return splitmix64(master ^ fnv1a64(tag));
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
    return splitmix64(derive_seed(master, tag) + 0x632be59bd9b4e019ull * (index + 1));
}

}  // namespace xmodal
