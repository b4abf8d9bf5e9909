#include "covis/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace covis {

void Dict::set(const std::string& key, const std::string& value) {
    for (auto& kv : items)
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    items.emplace_back(key, value);
}

void Dict::set_f(const std::string& key, double v) { set(key, format_g17(v)); }

void Dict::set_i(const std::string& key, std::int64_t v) { set(key, std::to_string(v)); }

void Dict::set_list(const std::string& key, const std::vector<double>& vs) {
    std::string s;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i) s += " ";
        s += format_g17(vs[i]);
    }
    set(key, s);
}

const std::string* Dict::find(const std::string& key) const {
    for (const auto& kv : items)
        if (kv.first == key) return &kv.second;
    return nullptr;
}

const std::string& Dict::get(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw error("missing key '" + key + "'");
    return *v;
}

double Dict::get_f(const std::string& key) const { return parse_f(get(key), key); }

std::int64_t Dict::get_i(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw error("");
        return v;
    } catch (...) {
        throw error("key '" + key + "': not an integer: '" + s + "'");
    }
}

std::vector<double> Dict::get_list(const std::string& key) const {
    std::istringstream ss(get(key));
    std::vector<double> vs;
    std::string tok;
    while (ss >> tok) vs.push_back(parse_f(tok, key));
    return vs;
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_f(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw error("");
        return v;
    } catch (...) {
        throw error(what + ": not a number: '" + s + "'");
    }
}

namespace {
std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}
}  // namespace

Dict parse_dict(const std::string& text, const std::string& origin) {
    Dict d;
    std::istringstream ss(text);
    std::string line;
    int ln = 0;
    while (std::getline(ss, line)) {
        ++ln;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw error(origin + ":" + std::to_string(ln) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw error(origin + ":" + std::to_string(ln) + ": empty key");
        if (d.has(key))
            throw error(origin + ":" + std::to_string(ln) + ": duplicate key '" + key + "'");
        d.items.emplace_back(key, value);
    }
    return d;
}

std::string render_dict(const Dict& d) {
    std::string out;
    for (const auto& kv : d.items) out += kv.first + " = " + kv.second + "\n";
    return out;
}

Dict load_dict(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_dict(ss.str(), path);
}

void save_dict(const std::string& path, const Dict& d) {
    std::ofstream f(path);
    if (!f) throw error("cannot write " + path);
    f << render_dict(d);
    if (!f) throw error("write failed for " + path);
}

}  // namespace covis
