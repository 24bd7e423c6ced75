#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "liq/hjb.hpp"
#include "liq/model.hpp"

namespace liq {

// Shortest round-trip decimal representation; locale-independent, so
// identical inputs produce byte-identical files.
inline std::string format_number(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& text) { return fnv1a(text.data(), text.size()); }

namespace detail {

struct DigestStream {
    std::uint64_t h = 0xcbf29ce484222325ull;
    void put(double v) { h = fnv1a(&v, sizeof v, h); }
    void put(int v) { h = fnv1a(&v, sizeof v, h); }
    void put(const std::vector<double>& vs) {
        for (double v : vs) put(v);
    }
};

} // namespace detail

// Digest of the numeric content of a model and grid; keys the binary field
// cache. Custom callables cannot be hashed and are recorded as flags.
inline std::uint64_t spec_grid_digest(const ModelSpec& spec, const Grid& grid) {
    detail::DigestStream d;
    d.put(spec.chain.states);
    d.put(spec.chain.generator);
    d.put(spec.chain.initial);
    d.put(spec.jumps.marks);
    d.put(spec.jumps.rates);
    d.put(spec.jumps.impact);
    d.put(spec.jumps.season.lo);
    d.put(spec.jumps.season.hi);
    d.put(spec.jumps.season.factor ? 1 : 0);
    d.put(spec.impact.c_f);
    d.put(spec.impact.exponent);
    d.put(spec.impact.custom ? 1 : 0);
    d.put(static_cast<int>(spec.terminal.form));
    d.put(spec.terminal.saturation);
    d.put(spec.rho);
    d.put(spec.horizon);
    d.put(spec.w0);
    d.put(spec.s0);
    d.put(spec.nu_max);
    d.put(grid.nt);
    d.put(grid.nw);
    d.put(grid.npi);
    d.put(grid.dt_cap);
    return d.h;
}

// Long-format CSV of a solved field: one row per node. Single-regime fields
// leave the pi column empty.
inline void write_field_csv(std::ostream& out, const ValueField& field) {
    out << "t,w,pi,V,nu_star,C\n";
    for (int i = 0; i <= field.nt; ++i)
        for (int j = 0; j <= field.nw; ++j)
            for (int k = 0; k <= field.npi; ++k) {
                const std::size_t q = field.index(i, j, k);
                out << format_number(field.t_node(i)) << ',' << format_number(field.w_node(j)) << ',';
                if (field.npi > 0) out << format_number(field.pi_node(k));
                out << ',' << format_number(field.value[q]) << ',' << format_number(field.rate[q])
                    << ',' << format_number(field.cost[q]) << '\n';
            }
}

// Compact binary cache of a solved field, keyed by the model/grid digest.
inline void write_field_cache(const std::string& path, const ValueField& field, std::uint64_t key) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write field cache: " + path);
    const char magic[8] = {'L', 'I', 'Q', 'F', 'L', 'D', '0', '1'};
    out.write(magic, 8);
    auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); };
    put(&key, sizeof key);
    put(&field.nt, sizeof field.nt);
    put(&field.nw, sizeof field.nw);
    put(&field.npi, sizeof field.npi);
    put(&field.horizon, sizeof field.horizon);
    put(&field.w_max, sizeof field.w_max);
    put(&field.effective_dt, sizeof field.effective_dt);
    put(&field.min_self_weight, sizeof field.min_self_weight);
    for (const auto* arr : {&field.value, &field.rate, &field.cost})
        put(arr->data(), arr->size() * sizeof(double));
    if (!out) throw std::runtime_error("short write to field cache: " + path);
}

struct CachedField {
    ValueField field;
    std::uint64_t key = 0;
};

inline CachedField read_field_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open field cache: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "LIQFLD01", 8) != 0)
        throw std::runtime_error("not a field cache file: " + path);
    CachedField out;
    ValueField& f = out.field;
    auto get = [&](void* p, std::size_t n) { in.read(static_cast<char*>(p), n); };
    get(&out.key, sizeof out.key);
    get(&f.nt, sizeof f.nt);
    get(&f.nw, sizeof f.nw);
    get(&f.npi, sizeof f.npi);
    get(&f.horizon, sizeof f.horizon);
    get(&f.w_max, sizeof f.w_max);
    get(&f.effective_dt, sizeof f.effective_dt);
    get(&f.min_self_weight, sizeof f.min_self_weight);
    if (!in || f.nt < 1 || f.nw < 1 || f.npi < 0)
        throw std::runtime_error("corrupt field cache header: " + path);
    const std::size_t n = static_cast<std::size_t>(f.nt + 1) * (f.nw + 1) * (f.npi + 1);
    for (auto* arr : {&f.value, &f.rate, &f.cost}) {
        arr->resize(n);
        get(arr->data(), n * sizeof(double));
    }
    if (!in) throw std::runtime_error("truncated field cache: " + path);
    return out;
}

// Run manifest: every setting that shaped a CLI run, defaults included, plus
// the list of files written. Plain ordered text so reruns diff cleanly.
class Manifest {
public:
    void set(const std::string& key, const std::string& value) {
        entries_.emplace_back(key, value);
    }
    void set(const std::string& key, double value) { set(key, format_number(value)); }
    void set(const std::string& key, long value) { set(key, std::to_string(value)); }
    void set(const std::string& key, int value) { set(key, std::to_string(value)); }
    void set_hex(const std::string& key, std::uint64_t value) {
        char buf[19];
        auto res = std::to_chars(buf, buf + sizeof buf, value, 16);
        set(key, std::string(buf, res.ptr));
    }
    void add_output(const std::string& path) { outputs_.push_back(path); }

    void write(std::ostream& out) const {
        for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
        for (const auto& o : outputs_) out << "output = " << o << '\n';
    }

    void write_file(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write manifest: " + path);
        write(out);
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::vector<std::string> outputs_;
};

} // namespace liq
