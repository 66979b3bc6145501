#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "signal.hpp"

namespace qsr {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& field, std::size_t line) {
    const std::string t = trim(field);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        throw InputError("line " + std::to_string(line) + ": cannot parse number '" + t + "'");
    }
    if (used != t.size())
        throw InputError("line " + std::to_string(line) + ": trailing characters in '" + t + "'");
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

/// CSV with a `t,value` header. Sample spacing must be uniform to a
/// relative tolerance of 1e-6 of the first step.
inline TimeSeries read_signal_csv(std::istream& in, std::optional<std::string> label = std::nullopt) {
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<double> t, v;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string row = detail::trim(line);
        if (row.empty()) continue;
        if (!header) {
            std::string h = row;
            std::erase_if(h, [](unsigned char ch) { return std::isspace(ch) != 0; });
            if (h != "t,value")
                throw InputError("expected CSV header 't,value', got '" + row + "'");
            header = true;
            continue;
        }
        const auto comma = row.find(',');
        if (comma == std::string::npos || row.find(',', comma + 1) != std::string::npos)
            throw InputError("line " + std::to_string(lineno) + ": expected two columns");
        t.push_back(detail::parse_double(row.substr(0, comma), lineno));
        v.push_back(detail::parse_double(row.substr(comma + 1), lineno));
    }
    if (!header) throw InputError("empty CSV input");
    if (t.size() < 2) throw InputError("CSV signal needs at least 2 rows");

    const double dt = t[1] - t[0];
    if (!(dt > 0.0)) throw InputError("time column must be strictly increasing");
    for (std::size_t i = 1; i < t.size(); ++i) {
        const double step = t[i] - t[i - 1];
        if (std::abs(step - dt) > 1e-6 * dt)
            throw InputError("non-uniform sampling: step " + std::to_string(i) + " is " +
                             std::to_string(step) + ", expected " + std::to_string(dt));
    }
    return TimeSeries(std::move(v), dt, std::move(label));
}

inline TimeSeries signal_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("dt") || !j.contains("samples"))
        throw InputError("signal JSON must be an object with 'dt' and 'samples'");
    if (!j["dt"].is_number()) throw InputError("signal 'dt' must be a number");
    if (!j["samples"].is_array()) throw InputError("signal 'samples' must be an array");
    std::vector<double> s;
    s.reserve(j["samples"].size());
    for (const auto& e : j["samples"]) {
        if (!e.is_number()) throw InputError("signal 'samples' must contain only numbers");
        s.push_back(e.get<double>());
    }
    std::optional<std::string> label;
    if (j.contains("label") && !j["label"].is_null()) label = j["label"].get<std::string>();
    return TimeSeries(std::move(s), j["dt"].get<double>(), std::move(label));
}

inline nlohmann::json to_json(const TimeSeries& x) {
    nlohmann::json j;
    j["dt"] = x.dt();
    j["samples"] = std::vector<double>(x.samples().begin(), x.samples().end());
    j["label"] = x.label() ? nlohmann::json(*x.label()) : nlohmann::json(nullptr);
    return j;
}

inline void write_signal_csv(std::ostream& out, const TimeSeries& x) {
    out << "t,value\n";
    out.precision(17);
    for (std::size_t i = 0; i < x.size(); ++i)
        out << static_cast<double>(i) * x.dt() << ',' << x[i] << '\n';
}

/// Dispatches on extension: `.json` is a JSON record, anything else CSV.
inline TimeSeries load_signal(const std::string& path) {
    const std::string text = detail::read_file(path);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError("'" + path + "': " + e.what());
        }
        return signal_from_json(j);
    }
    std::istringstream in(text);
    return read_signal_csv(in);
}

} // namespace qsr
