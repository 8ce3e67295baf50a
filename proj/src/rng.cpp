#include "creditrbm/rng.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"

#include <cmath>

namespace creditrbm {

namespace {

constexpr std::uint64_t kPhiloxM0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kPhiloxM1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
    unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(p >> 64);
    lo = static_cast<std::uint64_t>(p);
}

inline void philox_round(std::uint64_t x[4], const std::uint64_t k[2]) {
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, x[0], hi0, lo0);
    mulhilo(kPhiloxM1, x[2], hi1, lo1);
    const std::uint64_t y0 = hi1 ^ x[1] ^ k[0];
    const std::uint64_t y1 = lo1;
    const std::uint64_t y2 = hi0 ^ x[3] ^ k[1];
    const std::uint64_t y3 = lo0;
    x[0] = y0;
    x[1] = y1;
    x[2] = y2;
    x[3] = y3;
}

// Ten rounds, key bumped by the Weyl constants between rounds.
inline void philox4x64_10(const std::uint64_t ctr[4], const std::uint64_t key[2],
                          std::uint64_t out[4]) {
    std::uint64_t x[4] = {ctr[0], ctr[1], ctr[2], ctr[3]};
    std::uint64_t k[2] = {key[0], key[1]};
    philox_round(x, k);
    for (int r = 1; r < 10; ++r) {
        k[0] += kWeyl0;
        k[1] += kWeyl1;
        philox_round(x, k);
    }
    out[0] = x[0];
    out[1] = x[1];
    out[2] = x[2];
    out[3] = x[3];
}

} // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_{seed, stream}, ctr_{0, 0, 0, 0}, buf_{0, 0, 0, 0}, buf_pos_(4) {}

void Rng::refill() {
    philox4x64_10(ctr_, key_, buf_);
    // 256-bit block counter, low word first.
    if (++ctr_[0] == 0 && ++ctr_[1] == 0 && ++ctr_[2] == 0) ++ctr_[3];
    buf_pos_ = 0;
}

std::uint64_t Rng::next_u64() {
    if (buf_pos_ >= 4) refill();
    return buf_[buf_pos_++];
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform_open01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

bool Rng::bernoulli(double p) {
    return uniform01() < p;
}

double Rng::normal() {
    return stats::normal_quantile(uniform_open01());
}

double Rng::beta_half_half() {
    const double s = std::sin(1.5707963267948966 * uniform_open01());
    return s * s;
}

std::uint64_t Rng::uniform_below(std::uint64_t k) {
    CRBM_REQUIRE(k >= 1, "uniform_below: k must be >= 1");
    // Rejection sampling on the top range to avoid modulo bias.
    const std::uint64_t limit = k * ((~std::uint64_t{0}) / k);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % k;
}

Rng Rng::substream(std::uint64_t id) const {
    // Child keys are derived by running Philox on the parent key with the id
    // in the counter, under a domain-separation tag so derivations can never
    // collide with the parent's own output blocks. The child depends only on
    // the parent's identity, not on how many draws it has made.
    const std::uint64_t ctr[4] = {id, 0x5355425354524dULL, 0, 0};
    std::uint64_t out[4];
    philox4x64_10(ctr, key_, out);
    return Rng(out[0], out[1]);
}

} // namespace creditrbm
