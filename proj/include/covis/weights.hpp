#pragma once

#include <string>
#include <utility>
#include <vector>

#include "covis/tape.hpp"

namespace covis {

// Named parameter tensors in registration order.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> params;

    Tensor& add(const std::string& name, Tensor init);
    const Tensor* find(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    std::int64_t total_size() const;
};

// Two files: a structured-text manifest at `path` (names, shapes, byte
// offsets, blob reference) and a flat little-endian float64 blob next to it.
// Round-trips are bit-exact.
void save_weights(const std::string& path, const ParamStore& store);
ParamStore load_weights(const std::string& path);

// Leafs store tensors onto a tape on demand, remembering which Var belongs to
// which parameter so an optimizer can read the gradients back.
struct TapeBinder {
    Tape& tape;
    const ParamStore& store;
    bool train = false;
    std::vector<std::pair<std::string, Var>> bound;

    Var operator()(const std::string& name);
};

}  // namespace covis
