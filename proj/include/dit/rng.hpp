#ifndef DIT_RNG_HPP
#define DIT_RNG_HPP

#include <cstdint>
#include <string_view>

namespace dit {

// Counter-based, splittable random number generator.
//
// Every value is a pure function of (key, counter): the key is derived from
// the seed and the chain of split() labels, the counter advances by one per
// draw. split() mixes a label into the key and resets the counter, so child
// streams do not depend on how much of the parent stream was consumed.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(std::uint64_t seed);

    // Child stream for `label`; independent of this stream's counter.
    Rng split(std::uint64_t label) const;
    Rng split(std::string_view label) const;

    std::uint64_t next_u64();

    // Uniform on [0, 1), 53-bit resolution.
    double uniform();

    // Standard normal via Box-Muller; consumes two uniforms per value.
    double normal();

    // Uniform integer in [0, n); n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);

    // Serializable state.
    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    static Rng from_state(std::uint64_t key, std::uint64_t counter);

private:
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace dit

#endif
