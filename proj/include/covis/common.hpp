#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace covis {

// User-facing errors: bad inputs, unreadable files, shape mismatches.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatches; message names the offending shapes.
struct dim_error : error {
    using error::error;
};

// Broken internal invariant. The CLI maps this to exit code 2.
struct invariant_error : error {
    using error::error;
};

// Deterministic PRNG. Distributions are hand-rolled on top of mt19937_64 so
// that streams are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64();
    // uniform in [0,1)
    double uniform();
    double uniform(double lo, double hi);
    double normal();  // standard normal, Box-Muller
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Test hook: lets the verification suite demonstrate that a broken numeric
// kernel is actually caught. Never set outside tests / `verify --inject-fault`.
namespace fault {
enum class Kind { none, softmax_norm };
void inject(Kind k);
Kind active();
}  // namespace fault

}  // namespace covis
