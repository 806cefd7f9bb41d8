#include "dit/rng.hpp"

#include <cmath>

#include "dit/errors.hpp"

namespace dit {

namespace {

// splitmix64 finalizer; full-period bijective mixer on 64 bits.
std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t hash_label(std::string_view label) {
    // FNV-1a.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x6a09e667f3bcc908ull)), counter_(0) {}

Rng Rng::split(std::uint64_t label) const {
    return Rng(mix64(key_ ^ mix64(label ^ 0xbb67ae8584caa73bull)), 0);
}

Rng Rng::split(std::string_view label) const {
    return split(hash_label(label));
}

Rng Rng::from_state(std::uint64_t key, std::uint64_t counter) {
    return Rng(key, counter);
}

std::uint64_t Rng::next_u64() {
    return mix64(key_ ^ mix64(counter_++));
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    // u1 in (0, 1] so log() is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw ParameterError("Rng::uniform_int: n must be positive");
    // 53-bit scaling; bias is negligible for the desk-scale ranges used here.
    auto v = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return v < n ? v : n - 1;
}

}  // namespace dit
