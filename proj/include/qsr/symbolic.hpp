#pragma once

#include <algorithm>
#include <compare>
#include <initializer_list>
#include <iterator>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "sparse.hpp"

namespace qsr {

/// [a-z_][A-Za-z0-9_]*
inline bool is_identifier(std::string_view s) {
    if (s.empty()) return false;
    const auto head_ok = [](char c) { return (c >= 'a' && c <= 'z') || c == '_'; };
    const auto tail_ok = [&](char c) { return head_ok(c) || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); };
    if (!head_ok(s.front())) return false;
    return std::all_of(s.begin() + 1, s.end(), tail_ok);
}

struct Predicate {
    std::string name;
    std::optional<std::size_t> source_atom;

    Predicate(std::string n, std::optional<std::size_t> src = std::nullopt)
        : name(std::move(n)), source_atom(src) {
        if (!is_identifier(name)) throw ArgumentError("invalid predicate name '" + name + "'");
    }

    auto operator<=>(const Predicate& o) const {
        if (auto c = name <=> o.name; c != 0) return c;
        return source_atom <=> o.source_atom;
    }
    bool operator==(const Predicate&) const = default;
};

/// Set of predicates keyed by (name, source). Name-level queries ignore the
/// source index.
class SymbolSet {
public:
    SymbolSet() = default;
    SymbolSet(std::initializer_list<std::string> names) {
        for (const auto& n : names) insert(Predicate(n));
    }

    static SymbolSet from_names(const std::vector<std::string>& names) {
        SymbolSet s;
        for (const auto& n : names) s.insert(Predicate(n));
        return s;
    }

    void insert(Predicate p) { preds_.insert(std::move(p)); }
    void insert(const std::string& name) { preds_.insert(Predicate(name)); }

    bool contains(std::string_view name) const {
        return std::any_of(preds_.begin(), preds_.end(), [&](const Predicate& p) { return p.name == name; });
    }

    /// Distinct names, sorted.
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& p : preds_)
            if (out.empty() || out.back() != p.name) out.push_back(p.name);
        return out;
    }

    const std::set<Predicate>& predicates() const noexcept { return preds_; }
    std::size_t size() const noexcept { return preds_.size(); }
    bool empty() const noexcept { return preds_.empty(); }

    bool operator==(const SymbolSet& o) const { return names() == o.names(); }

private:
    std::set<Predicate> preds_;
};

/// Ascending edges with one label each; interval i is [edges[i], edges[i+1])
/// and the last one is open above.
struct AxisBins {
    std::vector<double> edges;
    std::vector<std::string> labels;

    void validate(std::string_view axis) const {
        if (edges.empty() || edges.size() != labels.size())
            throw ConfigError(std::string(axis) + " bins need one label per edge");
        for (std::size_t i = 1; i < edges.size(); ++i)
            if (!(edges[i] > edges[i - 1]))
                throw ConfigError(std::string(axis) + " bin edges must be strictly ascending");
        std::set<std::string> seen;
        for (const auto& l : labels) {
            if (!seen.insert(l).second) throw ConfigError(std::string(axis) + " bin label '" + l + "' repeats");
            if (!is_identifier(std::string(axis) + "_" + l))
                throw ConfigError(std::string(axis) + " bin label '" + l + "' is not a valid identifier part");
        }
    }

    /// Index of the interval holding v, or nullopt below the first edge.
    std::optional<std::size_t> locate(double v) const {
        const auto it = std::upper_bound(edges.begin(), edges.end(), v);
        if (it == edges.begin()) return std::nullopt;
        return static_cast<std::size_t>(it - edges.begin()) - 1;
    }
};

struct BinningConfig {
    AxisBins omega_bins;
    AxisBins gamma_bins;
    AxisBins amp_bins;
    double negligible_eps = 1e-6;

    void validate() const {
        omega_bins.validate("resonance");
        gamma_bins.validate("width");
        amp_bins.validate("amplitude");
        if (!(negligible_eps > 0.0)) throw ConfigError("negligible_eps must be positive");
    }
};

namespace detail {

inline std::string bin_name(const AxisBins& bins, std::string_view axis, double v) {
    const auto idx = bins.locate(v);
    return std::string(axis) + "_" + (idx ? bins.labels[*idx] : std::string("underflow"));
}

} // namespace detail

/// One predicate per axis per atom (`resonance_*`, `width_*`,
/// `amplitude_*`); an atom with amp < negligible_eps yields only
/// `negligible`. Values under the lowest edge map to `<axis>_underflow`.
inline SymbolSet project(const SparseSpectrum& sp, const BinningConfig& cfg) {
    cfg.validate();
    SymbolSet out;
    for (std::size_t k = 0; k < sp.atoms.size(); ++k) {
        const auto& a = sp.atoms[k];
        if (a.amp < cfg.negligible_eps) {
            out.insert(Predicate("negligible", k));
            continue;
        }
        out.insert(Predicate(detail::bin_name(cfg.omega_bins, "resonance", a.omega), k));
        out.insert(Predicate(detail::bin_name(cfg.gamma_bins, "width", a.gamma), k));
        out.insert(Predicate(detail::bin_name(cfg.amp_bins, "amplitude", a.amp), k));
    }
    return out;
}

/// |names(a) ∩ names(b)|
inline std::size_t kernel(const SymbolSet& a, const SymbolSet& b) {
    const auto na = a.names();
    const auto nb = b.names();
    std::vector<std::string> both;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(both));
    return both.size();
}

inline void to_json(nlohmann::json& j, const SymbolSet& s) { j = s.names(); }

inline void from_json(const nlohmann::json& j, SymbolSet& s) {
    if (!j.is_array()) throw InputError("predicate set JSON must be an array of names");
    s = SymbolSet::from_names(j.get<std::vector<std::string>>());
}

inline void to_json(nlohmann::json& j, const AxisBins& b) {
    j = nlohmann::json{{"edges", b.edges}, {"labels", b.labels}};
}

inline void from_json(const nlohmann::json& j, AxisBins& b) {
    b.edges = j.at("edges").get<std::vector<double>>();
    b.labels = j.at("labels").get<std::vector<std::string>>();
}

inline void to_json(nlohmann::json& j, const BinningConfig& c) {
    j = nlohmann::json{{"omega", c.omega_bins},
                       {"gamma", c.gamma_bins},
                       {"amp", c.amp_bins},
                       {"negligible_eps", c.negligible_eps}};
}

inline void from_json(const nlohmann::json& j, BinningConfig& c) {
    c.omega_bins = j.at("omega").get<AxisBins>();
    c.gamma_bins = j.at("gamma").get<AxisBins>();
    c.amp_bins = j.at("amp").get<AxisBins>();
    c.negligible_eps = j.value("negligible_eps", 1e-6);
    c.validate();
}

} // namespace qsr
