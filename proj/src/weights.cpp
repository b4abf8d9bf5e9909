#include "covis/weights.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "covis/config.hpp"

namespace covis {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (name.empty() || name[0] == '_') throw error("bad parameter name '" + name + "'");
    if (find(name)) throw error("duplicate parameter '" + name + "'");
    params.emplace_back(name, std::move(init));
    return params.back().second;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& kv : params)
        if (kv.first == name) return &kv.second;
    return nullptr;
}

Tensor& ParamStore::get(const std::string& name) {
    for (auto& kv : params)
        if (kv.first == name) return kv.second;
    throw error("unknown parameter '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw error("unknown parameter '" + name + "'");
    return *t;
}

std::int64_t ParamStore::total_size() const {
    std::int64_t n = 0;
    for (const auto& kv : params) n += kv.second.numel();
    return n;
}

namespace {

std::string dirname_of(const std::string& path) {
    std::size_t s = path.find_last_of('/');
    return s == std::string::npos ? std::string(".") : path.substr(0, s);
}

std::string basename_of(const std::string& path) {
    std::size_t s = path.find_last_of('/');
    return s == std::string::npos ? path : path.substr(s + 1);
}

void put_f64_le(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

void save_weights(const std::string& path, const ParamStore& store) {
    std::string blob_path = path + ".blob";
    Dict manifest;
    manifest.set("_format", "covis-weights-1");
    manifest.set("_blob", basename_of(blob_path));
    std::string blob;
    blob.reserve(static_cast<std::size_t>(store.total_size()) * 8);
    for (const auto& [name, t] : store.params) {
        std::string desc;
        for (auto d : t.shape) desc += std::to_string(d) + " ";
        desc += "@ " + std::to_string(blob.size());
        manifest.set(name, desc);
        for (double v : t.data) put_f64_le(blob, v);
    }
    save_dict(path, manifest);
    std::ofstream f(blob_path, std::ios::binary);
    if (!f) throw error("cannot write " + blob_path);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw error("write failed for " + blob_path);
}

Var TapeBinder::operator()(const std::string& name) {
    Var v = tape.leaf(store.get(name), train);
    bound.emplace_back(name, v);
    return v;
}

ParamStore load_weights(const std::string& path) {
    Dict manifest = load_dict(path);
    if (!manifest.has("_format") || manifest.get("_format") != "covis-weights-1")
        throw error(path + ": not a weights manifest");
    std::string blob_path = dirname_of(path) + "/" + manifest.get("_blob");
    std::ifstream f(blob_path, std::ios::binary);
    if (!f) throw error("cannot open " + blob_path);
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string blob = ss.str();

    ParamStore store;
    for (const auto& [key, value] : manifest.items) {
        if (!key.empty() && key[0] == '_') continue;
        std::istringstream vs(value);
        std::vector<std::int64_t> shape;
        std::string tok;
        std::int64_t offset = -1;
        while (vs >> tok) {
            if (tok == "@") {
                if (!(vs >> offset)) offset = -1;
                break;
            }
            try {
                shape.push_back(std::stoll(tok));
            } catch (...) {
                throw error(path + ": bad shape token '" + tok + "' for '" + key + "'");
            }
        }
        if (offset < 0) throw error(path + ": missing offset for '" + key + "'");
        Tensor t(shape);
        std::size_t need = static_cast<std::size_t>(t.numel()) * 8;
        if (static_cast<std::size_t>(offset) + need > blob.size())
            throw error(blob_path + ": blob too short for '" + key + "'");
        const unsigned char* p =
            reinterpret_cast<const unsigned char*>(blob.data()) + offset;
        for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = get_f64_le(p + 8 * i);
        store.add(key, std::move(t));
    }
    return store;
}

}  // namespace covis
