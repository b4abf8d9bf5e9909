#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "covis/common.hpp"

namespace covis {

// The structured-text dialect used for configs, reports and camera bundles:
// one "key = value" per line, '#' starts a comment, order preserved. Doubles
// print as %.17g so a round-trip restores them bit-exactly.
struct Dict {
    std::vector<std::pair<std::string, std::string>> items;

    void set(const std::string& key, const std::string& value);
    void set_f(const std::string& key, double v);
    void set_i(const std::string& key, std::int64_t v);
    void set_list(const std::string& key, const std::vector<double>& vs);

    const std::string* find(const std::string& key) const;
    bool has(const std::string& key) const { return find(key) != nullptr; }

    // throwing getters
    const std::string& get(const std::string& key) const;
    double get_f(const std::string& key) const;
    std::int64_t get_i(const std::string& key) const;
    std::vector<double> get_list(const std::string& key) const;
};

std::string format_g17(double v);
double parse_f(const std::string& s, const std::string& what);

Dict parse_dict(const std::string& text, const std::string& origin);
std::string render_dict(const Dict& d);
Dict load_dict(const std::string& path);
void save_dict(const std::string& path, const Dict& d);

}  // namespace covis
