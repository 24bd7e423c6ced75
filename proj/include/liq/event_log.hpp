#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "liq/model.hpp"

namespace liq {

// Observed jump data: event times (days) and the mark of each jump, as an
// index into JumpSpec::marks.
struct EventLog {
    std::vector<double> t;
    std::vector<int> mark;

    std::size_t size() const { return t.size(); }
    bool empty() const { return t.empty(); }
};

inline void check_sorted(const EventLog& log, double horizon) {
    double prev = 0.0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (!(log.t[i] > (i == 0 ? -1.0 : prev)))
            throw std::invalid_argument("event log timestamps must be strictly increasing");
        if (log.t[i] < 0.0 || log.t[i] > horizon)
            throw std::invalid_argument("event log timestamp outside [0, horizon]");
        prev = log.t[i];
    }
}

// CSV columns `t,mark`. The mark column holds either mark indices (all
// values in [0, J)) or, when any value is negative, signed single ticks
// (+1/-1) that are mapped onto the unique positive/negative mark of a
// two-sided model.
inline EventLog read_event_log(std::istream& in, const JumpSpec& jumps, const std::string& source = "<csv>") {
    EventLog log;
    std::vector<long> raw_marks;
    std::string line;
    int line_no = 0;
    bool any_negative = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (line_no == 1 && line.find_first_not_of("tmark, \r") == std::string::npos) continue; // header
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": expected 't,mark'");
        double t = 0.0;
        long m = 0;
        const char* tb = line.data();
        auto r1 = std::from_chars(tb, tb + comma, t);
        if (r1.ec != std::errc())
            throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": bad timestamp");
        const char* mb = line.data() + comma + 1;
        const char* me = line.data() + line.size();
        while (me > mb && (me[-1] == '\r' || me[-1] == ' ')) --me;
        auto r2 = std::from_chars(mb, me, m);
        if (r2.ec != std::errc() || r2.ptr != me)
            throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": bad mark");
        log.t.push_back(t);
        raw_marks.push_back(m);
        if (m < 0) any_negative = true;
    }
    const int J = jumps.n_marks();
    if (any_negative) {
        int up = -1, down = -1;
        for (int j = 0; j < J; ++j) {
            if (jumps.marks[j] > 0.0) up = (up == -1) ? j : -2;
            if (jumps.marks[j] < 0.0) down = (down == -1) ? j : -2;
        }
        if (up < 0 || down < 0)
            throw std::invalid_argument(source + ": signed tick marks need a model with exactly one "
                                        "positive and one negative mark");
        for (long m : raw_marks) {
            if (m != 1 && m != -1)
                throw std::invalid_argument(source + ": signed tick marks must be +1 or -1; "
                                            "split larger moves into single ticks first");
            log.mark.push_back(m > 0 ? up : down);
        }
    } else {
        for (long m : raw_marks) {
            if (m >= J)
                throw std::invalid_argument(source + ": mark index " + std::to_string(m) +
                                            " out of range for " + std::to_string(J) + " marks");
            log.mark.push_back(static_cast<int>(m));
        }
    }
    return log;
}

inline EventLog read_event_log_file(const std::string& path, const JumpSpec& jumps) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open event log: " + path);
    return read_event_log(in, jumps, path);
}

inline void write_event_log(std::ostream& out, const EventLog& log) {
    out << "t,mark\n";
    char buf[40];
    for (std::size_t i = 0; i < log.size(); ++i) {
        auto res = std::to_chars(buf, buf + sizeof buf, log.t[i]);
        out.write(buf, res.ptr - buf);
        out << ',' << log.mark[i] << '\n';
    }
}

} // namespace liq
