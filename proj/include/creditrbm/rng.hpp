#ifndef CREDITRBM_RNG_HPP
#define CREDITRBM_RNG_HPP

#include <cstdint>

namespace creditrbm {

// Identity of a random stream. Identical (seed, stream) pairs reproduce
// identical draw sequences, independent of scheduling or batching.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

// Counter-based generator (Philox4x64-10). State is 40 bytes, so thousands
// of parallel chains are cheap, and every draw is a pure function of
// (seed, stream, substream, counter).
class Rng {
public:
    explicit Rng(RngStream s) : Rng(s.seed, s.stream) {}
    Rng(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();

    // Uniform on [0,1) with 53-bit resolution.
    double uniform01();
    // Uniform on (0,1), never returns an endpoint; safe under quantile maps.
    double uniform_open01();
    bool bernoulli(double p);
    double normal();
    // Beta(1/2,1/2): inverse-CDF transform of the arcsine law.
    double beta_half_half();
    // Uniform integer in [0, k), k >= 1.
    std::uint64_t uniform_below(std::uint64_t k);

    // Independent child stream derived from this stream's identity; nesting
    // is unlimited and the child never depends on how many draws the parent
    // has made.
    Rng substream(std::uint64_t id) const;

    RngStream id() const { return RngStream{key_[0], key_[1]}; }

private:
    std::uint64_t key_[2];
    std::uint64_t ctr_[4];
    std::uint64_t buf_[4];
    int buf_pos_;

    void refill();
};

} // namespace creditrbm

#endif
