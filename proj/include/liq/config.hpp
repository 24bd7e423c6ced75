#pragma once

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "liq/model.hpp"

namespace liq {

// Parse error carrying the file location that caused it.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// Sectioned plain-text configuration:
//
//   [section]
//   key = value value ...   # comment
//   matrix = a b ; c d      # ';' separates rows
//
// One format carries both the market model and experiment settings.
class Config {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static Config parse(std::istream& in, const std::string& source_name) {
        Config cfg;
        cfg.source_ = source_name;
        std::ostringstream raw;
        std::string line;
        std::string section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            raw << line << '\n';
            std::string text = strip_comment(line);
            text = trim(text);
            if (text.empty()) continue;
            if (text.front() == '[') {
                if (text.back() != ']')
                    throw ConfigError(source_name, line_no, "unterminated section header");
                section = trim(text.substr(1, text.size() - 2));
                if (section.empty())
                    throw ConfigError(source_name, line_no, "empty section name");
                cfg.sections_[section]; // section may stay empty
                continue;
            }
            const auto eq = text.find('=');
            if (eq == std::string::npos)
                throw ConfigError(source_name, line_no, "expected 'key = value'");
            const std::string key = trim(text.substr(0, eq));
            const std::string value = trim(text.substr(eq + 1));
            if (key.empty())
                throw ConfigError(source_name, line_no, "empty key");
            if (section.empty())
                throw ConfigError(source_name, line_no, "entry outside any [section]");
            cfg.sections_[section][key] = Entry{value, line_no};
        }
        cfg.raw_text_ = raw.str();
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        return parse(in, path);
    }

    static Config parse_string(const std::string& text, const std::string& name = "<config>") {
        std::istringstream in(text);
        return parse(in, name);
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = sections_.find(section);
        return s != sections_.end() && s->second.count(key) > 0;
    }

    bool has_section(const std::string& section) const { return sections_.count(section) > 0; }

    std::string text(const std::string& section, const std::string& key) const {
        return entry(section, key).value;
    }

    std::string text_or(const std::string& section, const std::string& key,
                        const std::string& fallback) const {
        return has(section, key) ? text(section, key) : fallback;
    }

    double number(const std::string& section, const std::string& key) const {
        const Entry& e = entry(section, key);
        return parse_number(e.value, e.line, key);
    }

    double number_or(const std::string& section, const std::string& key, double fallback) const {
        return has(section, key) ? number(section, key) : fallback;
    }

    long integer(const std::string& section, const std::string& key) const {
        const double v = number(section, key);
        const long n = static_cast<long>(v);
        if (static_cast<double>(n) != v)
            throw ConfigError(source_, entry(section, key).line, "field '" + key + "' must be an integer");
        return n;
    }

    long integer_or(const std::string& section, const std::string& key, long fallback) const {
        return has(section, key) ? integer(section, key) : fallback;
    }

    bool flag_or(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const Entry& e = entry(section, key);
        const std::string v = e.value;
        if (v == "true" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "no" || v == "0") return false;
        throw ConfigError(source_, e.line, "field '" + key + "' must be a boolean");
    }

    std::vector<double> numbers(const std::string& section, const std::string& key) const {
        const Entry& e = entry(section, key);
        std::vector<double> out;
        std::istringstream in(e.value);
        std::string tok;
        while (in >> tok) out.push_back(parse_number(tok, e.line, key));
        if (out.empty()) throw ConfigError(source_, e.line, "field '" + key + "' has no values");
        return out;
    }

    // ';'-separated rows of whitespace-separated numbers.
    std::vector<std::vector<double>> rows(const std::string& section, const std::string& key) const {
        const Entry& e = entry(section, key);
        std::vector<std::vector<double>> out;
        std::string row_text;
        std::istringstream in(e.value);
        while (std::getline(in, row_text, ';')) {
            std::vector<double> row;
            std::istringstream rin(row_text);
            std::string tok;
            while (rin >> tok) row.push_back(parse_number(tok, e.line, key));
            if (!row.empty()) out.push_back(std::move(row));
        }
        if (out.empty()) throw ConfigError(source_, e.line, "field '" + key + "' has no rows");
        return out;
    }

    const std::string& source() const { return source_; }
    const std::string& raw_text() const { return raw_text_; }
    const std::map<std::string, std::map<std::string, Entry>>& sections() const { return sections_; }

private:
    static std::string strip_comment(const std::string& s) {
        const auto pos = s.find('#');
        return pos == std::string::npos ? s : s.substr(0, pos);
    }

    static std::string trim(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    const Entry& entry(const std::string& section, const std::string& key) const {
        auto s = sections_.find(section);
        if (s == sections_.end())
            throw ConfigError(source_, 0, "missing section [" + section + "]");
        auto k = s->second.find(key);
        if (k == s->second.end())
            throw ConfigError(source_, 0, "missing field '" + key + "' in [" + section + "]");
        return k->second;
    }

    double parse_number(const std::string& tok, int line, const std::string& key) const {
        double v = 0.0;
        const char* b = tok.data();
        const char* e = tok.data() + tok.size();
        auto res = std::from_chars(b, e, v);
        if (res.ec != std::errc() || res.ptr != e)
            throw ConfigError(source_, line, "field '" + key + "': cannot parse number '" + tok + "'");
        return v;
    }

    std::string source_;
    std::string raw_text_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
};

// Builds and validates a ModelSpec from the [chain]/[jumps]/[impact]/
// [terminal]/[scalars] sections.
inline ModelSpec model_from_config(const Config& cfg) {
    ModelSpec spec;
    spec.chain.states = static_cast<int>(cfg.integer("chain", "states"));
    const int K = spec.chain.states;
    spec.chain.generator.clear();
    for (const auto& row : cfg.rows("chain", "generator"))
        spec.chain.generator.insert(spec.chain.generator.end(), row.begin(), row.end());
    spec.chain.initial = cfg.numbers("chain", "initial");

    spec.jumps.marks = cfg.numbers("jumps", "marks");
    spec.jumps.rates.clear();
    for (const auto& row : cfg.rows("jumps", "rates"))
        spec.jumps.rates.insert(spec.jumps.rates.end(), row.begin(), row.end());
    if (cfg.has("jumps", "impact"))
        spec.jumps.impact = cfg.numbers("jumps", "impact");
    else
        spec.jumps.impact.assign(spec.jumps.marks.size(), 0.0);

    spec.impact.c_f = cfg.number_or("impact", "c_f", 0.0);
    spec.impact.exponent = cfg.number_or("impact", "exponent", 0.6);

    const std::string form = cfg.text_or("terminal", "form", "zero");
    if (form == "zero") {
        spec.terminal.form = TerminalSpec::Form::zero;
    } else if (form == "saturating") {
        spec.terminal.form = TerminalSpec::Form::saturating;
        spec.terminal.saturation = cfg.number("terminal", "saturation");
    } else {
        throw std::runtime_error("unknown terminal form '" + form + "' (expected zero|saturating)");
    }

    spec.rho = cfg.number("scalars", "rho");
    spec.horizon = cfg.number("scalars", "horizon");
    spec.w0 = cfg.number("scalars", "w0");
    spec.s0 = cfg.number("scalars", "s0");
    spec.nu_max = cfg.number("scalars", "nu_max");

    if (spec.chain.generator.size() != static_cast<std::size_t>(K) * K)
        throw std::runtime_error("[chain] generator has wrong shape");
    if (spec.jumps.rates.size() != spec.jumps.marks.size() * static_cast<std::size_t>(K))
        throw std::runtime_error("[jumps] rates must have one row per state, one column per mark");
    validate(spec);
    return spec;
}

// Writes the chain + jump sections in config format, directly loadable as a
// ModelSpec fragment. Used to emit calibration results.
inline void write_model_fragment(std::ostream& out, const ChainSpec& chain,
                                 const std::vector<double>& marks,
                                 const std::vector<double>& rates) {
    auto num = [](double v) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    out << "[chain]\n";
    out << "states = " << chain.states << "\n";
    out << "generator =";
    for (int i = 0; i < chain.states; ++i) {
        for (int j = 0; j < chain.states; ++j) out << ' ' << num(chain.q(i, j));
        if (i + 1 < chain.states) out << " ;";
    }
    out << "\ninitial =";
    for (double p : chain.initial) out << ' ' << num(p);
    out << "\n\n[jumps]\nmarks =";
    for (double z : marks) out << ' ' << num(z);
    out << "\nrates =";
    const std::size_t J = marks.size();
    for (int k = 0; k < chain.states; ++k) {
        for (std::size_t j = 0; j < J; ++j) out << ' ' << num(rates[k * J + j]);
        if (k + 1 < chain.states) out << " ;";
    }
    out << "\n";
}

} // namespace liq
