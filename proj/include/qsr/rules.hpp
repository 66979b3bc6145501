#pragma once

#include <algorithm>
#include <cstddef>
#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "symbolic.hpp"

namespace qsr {

struct Literal {
    std::string name;
    bool negated = false;

    bool operator==(const Literal&) const = default;
};

struct HornRule {
    std::vector<Literal> body;
    std::string head;
    std::string id;

    bool operator==(const HornRule&) const = default;

    std::vector<std::string> positive() const {
        std::vector<std::string> out;
        for (const auto& l : body)
            if (!l.negated) out.push_back(l.name);
        return out;
    }
    std::vector<std::string> negative() const {
        std::vector<std::string> out;
        for (const auto& l : body)
            if (l.negated) out.push_back(l.name);
        return out;
    }
};

/// Propositional Horn rules with stratified negation. Construction fails
/// with StratificationError when some predicate depends on its own negation.
class RuleSet {
public:
    RuleSet() = default;

    explicit RuleSet(std::vector<HornRule> rules) : rules_(std::move(rules)) {
        std::set<std::string> ids;
        for (const auto& r : rules_) {
            if (r.body.empty()) throw ArgumentError("rule '" + r.id + "' has an empty body");
            if (!is_identifier(r.head)) throw ArgumentError("invalid rule head '" + r.head + "'");
            if (!is_identifier(r.id)) throw ArgumentError("invalid rule id '" + r.id + "'");
            if (!ids.insert(r.id).second) throw ArgumentError("duplicate rule id '" + r.id + "'");
            for (std::size_t i = 0; i < r.body.size(); ++i) {
                if (!is_identifier(r.body[i].name))
                    throw ArgumentError("invalid literal '" + r.body[i].name + "' in rule '" + r.id + "'");
                for (std::size_t j = 0; j < i; ++j)
                    if (r.body[j] == r.body[i])
                        throw ArgumentError("duplicate literal '" + r.body[i].name + "' in rule '" + r.id + "'");
            }
        }
        stratify();
    }

    const std::vector<HornRule>& rules() const noexcept { return rules_; }
    /// Stratum of each rule, parallel to rules().
    const std::vector<std::size_t>& strata() const noexcept { return strata_; }
    std::size_t stratum_count() const noexcept {
        return strata_.empty() ? 0 : *std::max_element(strata_.begin(), strata_.end()) + 1;
    }
    std::size_t size() const noexcept { return rules_.size(); }
    bool empty() const noexcept { return rules_.empty(); }

    const HornRule* find(std::string_view id) const {
        for (const auto& r : rules_)
            if (r.id == id) return &r;
        return nullptr;
    }

    /// Every predicate name mentioned in a head or body.
    std::set<std::string> predicates() const {
        std::set<std::string> out;
        for (const auto& r : rules_) {
            out.insert(r.head);
            for (const auto& l : r.body) out.insert(l.name);
        }
        return out;
    }

    bool operator==(const RuleSet& o) const { return rules_ == o.rules_; }

private:
    struct Edge {
        std::size_t to;
        bool negative;
    };

    // Dependency graph head -> body predicate; strongly connected components
    // (Tarjan) come out dependencies first, so strata fill in one pass.
    void stratify() {
        std::map<std::string, std::size_t> index;
        std::vector<std::string> names;
        const auto id_of = [&](const std::string& n) {
            auto [it, fresh] = index.emplace(n, names.size());
            if (fresh) names.push_back(n);
            return it->second;
        };
        std::vector<std::vector<Edge>> adj;
        for (const auto& r : rules_) {
            const std::size_t h = id_of(r.head);
            for (const auto& l : r.body) id_of(l.name);
            adj.resize(names.size());
            for (const auto& l : r.body) adj[h].push_back({index[l.name], l.negated});
        }
        adj.resize(names.size());

        const std::size_t n = names.size();
        std::vector<std::size_t> comp(n, SIZE_MAX), low(n, 0), order(n, SIZE_MAX);
        std::vector<std::size_t> stack;
        std::vector<bool> on_stack(n, false);
        std::size_t counter = 0, ncomp = 0;
        std::function<void(std::size_t)> visit = [&](std::size_t v) {
            order[v] = low[v] = counter++;
            stack.push_back(v);
            on_stack[v] = true;
            for (const auto& e : adj[v]) {
                if (order[e.to] == SIZE_MAX) {
                    visit(e.to);
                    low[v] = std::min(low[v], low[e.to]);
                } else if (on_stack[e.to]) {
                    low[v] = std::min(low[v], order[e.to]);
                }
            }
            if (low[v] == order[v]) {
                std::size_t w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = false;
                    comp[w] = ncomp;
                } while (w != v);
                ++ncomp;
            }
        };
        for (std::size_t v = 0; v < n; ++v)
            if (order[v] == SIZE_MAX) visit(v);

        for (std::size_t v = 0; v < n; ++v)
            for (const auto& e : adj[v])
                if (e.negative && comp[e.to] == comp[v])
                    throw StratificationError(describe_cycle(v, e.to, adj, comp, names));

        // Components are numbered dependencies first.
        std::vector<std::size_t> comp_stratum(ncomp, 0);
        std::vector<std::vector<std::size_t>> members(ncomp);
        for (std::size_t v = 0; v < n; ++v) members[comp[v]].push_back(v);
        for (std::size_t c = 0; c < ncomp; ++c)
            for (std::size_t v : members[c])
                for (const auto& e : adj[v])
                    if (comp[e.to] != c)
                        comp_stratum[c] = std::max(comp_stratum[c], comp_stratum[comp[e.to]] + (e.negative ? 1 : 0));

        strata_.clear();
        for (const auto& r : rules_) strata_.push_back(comp_stratum[comp[index[r.head]]]);
    }

    static std::string describe_cycle(std::size_t head, std::size_t neg, const std::vector<std::vector<Edge>>& adj,
                                      const std::vector<std::size_t>& comp, const std::vector<std::string>& names) {
        // Shortest path neg -> ... -> head inside the component.
        std::vector<std::size_t> prev(adj.size(), SIZE_MAX);
        std::vector<bool> seen(adj.size(), false);
        std::queue<std::size_t> q;
        q.push(neg);
        seen[neg] = true;
        while (!q.empty() && !seen[head]) {
            const std::size_t v = q.front();
            q.pop();
            for (const auto& e : adj[v])
                if (!seen[e.to] && comp[e.to] == comp[head]) {
                    seen[e.to] = true;
                    prev[e.to] = v;
                    q.push(e.to);
                }
        }
        std::vector<std::size_t> path;
        for (std::size_t v = head; v != neg; v = prev[v]) path.push_back(v);
        std::string out = names[head] + " -!-> " + names[neg];
        for (auto it = path.rbegin(); it != path.rend(); ++it) out += " -> " + names[*it];
        return out;
    }

    std::vector<HornRule> rules_;
    std::vector<std::size_t> strata_;
};

// ---------------------------------------------------------------------------
// Rule text.
//
//   rule := lit { "&" lit } "=>" IDENT [ "@" IDENT ]
//   lit  := [ "!" ] IDENT
//
// One rule per line; `#` starts a comment. Unnamed rules get id r<k> where
// k is the 1-based rule position.

namespace detail {

class RuleLineParser {
public:
    RuleLineParser(std::string_view text, std::size_t line) : text_(text), line_(line) {}

    HornRule parse() {
        HornRule r;
        r.body.push_back(literal());
        skip_ws();
        while (peek() == '&') {
            ++pos_;
            r.body.push_back(literal());
            skip_ws();
        }
        expect("=>");
        r.head = ident("rule head");
        skip_ws();
        if (peek() == '@') {
            ++pos_;
            r.id = ident("rule id");
            skip_ws();
        }
        if (pos_ < text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
        return r;
    }

private:
    char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
    }

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, pos_ + 1, msg); }

    void expect(std::string_view tok) {
        skip_ws();
        if (text_.substr(pos_, tok.size()) != tok) fail("expected '" + std::string(tok) + "'");
        pos_ += tok.size();
    }

    std::string ident(const char* what) {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        const std::string id(text_.substr(start, pos_ - start));
        if (!is_identifier(id)) {
            pos_ = start;
            fail(std::string("expected ") + what);
        }
        return id;
    }

    Literal literal() {
        skip_ws();
        Literal l;
        if (peek() == '!') {
            l.negated = true;
            ++pos_;
        }
        l.name = ident("predicate name");
        return l;
    }

    std::string_view text_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline RuleSet parse_rules(std::string_view text) {
    std::vector<HornRule> rules;
    std::vector<std::size_t> lines;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find('\n', start), text.size());
        std::string_view line = text.substr(start, end - start);
        ++lineno;
        start = end + 1;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        rules.push_back(detail::RuleLineParser(line, lineno).parse());
        lines.push_back(lineno);
    }

    std::set<std::string> named;
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (rules[i].id.empty()) continue;
        if (!named.insert(rules[i].id).second) throw ParseError(lines[i], 1, "duplicate rule id '" + rules[i].id + "'");
    }
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (!rules[i].id.empty()) continue;
        rules[i].id = "r" + std::to_string(i + 1);
        if (!named.insert(rules[i].id).second)
            throw ParseError(lines[i], 1, "automatic id '" + rules[i].id + "' collides with a named rule");
    }
    for (std::size_t i = 0; i < rules.size(); ++i)
        for (std::size_t a = 0; a < rules[i].body.size(); ++a)
            for (std::size_t b = 0; b < a; ++b)
                if (rules[i].body[a] == rules[i].body[b])
                    throw ParseError(lines[i], 1, "duplicate literal '" + rules[i].body[a].name + "'");
    return RuleSet(std::move(rules));
}

inline std::string to_string(const HornRule& r) {
    std::string out;
    for (std::size_t i = 0; i < r.body.size(); ++i) {
        if (i) out += " & ";
        if (r.body[i].negated) out += "!";
        out += r.body[i].name;
    }
    return out + " => " + r.head + " @" + r.id;
}

inline std::string to_string(const RuleSet& rs) {
    std::string out;
    for (const auto& r : rs.rules()) out += to_string(r) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Inference.

struct Firing {
    std::string rule_id;
    std::string head;
    std::vector<std::string> body_pos;
    std::vector<std::string> body_neg_checked;

    bool operator==(const Firing&) const = default;
};

struct ProofTrace {
    std::vector<Firing> firings;

    bool operator==(const ProofTrace&) const = default;
};

struct Inference {
    SymbolSet derived;
    ProofTrace trace;
};

/// Semi-naive forward chaining, one stratum at a time. Within an iteration
/// rules are tried in file order against the facts known at its start; a
/// rule is revisited only when one of its positive literals was derived in
/// the previous iteration. Negated literals are checked against lower
/// strata, which are complete by then. Each head is derived at most once.
inline Inference infer(const RuleSet& rs, const SymbolSet& facts) {
    Inference out;
    out.derived = facts;
    const auto initial = facts.names();
    std::set<std::string> known(initial.begin(), initial.end());

    const auto& rules = rs.rules();
    for (std::size_t s = 0; s < rs.stratum_count(); ++s) {
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < rules.size(); ++i)
            if (rs.strata()[i] == s) active.push_back(i);

        std::set<std::string> delta;
        bool first = true;
        while (true) {
            std::vector<std::size_t> fired;
            std::set<std::string> fresh;
            for (std::size_t i : active) {
                const auto& r = rules[i];
                if (known.count(r.head) || fresh.count(r.head)) continue;
                if (!first) {
                    const bool touched = std::any_of(r.body.begin(), r.body.end(), [&](const Literal& l) {
                        return !l.negated && delta.count(l.name);
                    });
                    if (!touched) continue;
                }
                const bool ok = std::all_of(r.body.begin(), r.body.end(), [&](const Literal& l) {
                    return l.negated ? !known.count(l.name) : known.count(l.name) > 0;
                });
                if (!ok) continue;
                fired.push_back(i);
                fresh.insert(r.head);
            }
            if (fired.empty()) break;
            for (std::size_t i : fired) {
                const auto& r = rules[i];
                out.trace.firings.push_back({r.id, r.head, r.positive(), r.negative()});
                out.derived.insert(r.head);
                known.insert(r.head);
            }
            delta = std::move(fresh);
            first = false;
        }
    }
    return out;
}

/// Re-derives the trace step by step from `facts`. Every firing must name a
/// rule of `rs` with matching body, its positive literals must already hold,
/// its negated ones must stay false through the end, and the final set must
/// equal what infer produces.
inline bool replay(const ProofTrace& trace, const SymbolSet& facts, const RuleSet& rs) {
    const auto initial = facts.names();
    std::set<std::string> known(initial.begin(), initial.end());
    for (const auto& f : trace.firings) {
        const HornRule* r = rs.find(f.rule_id);
        if (!r || r->head != f.head || r->positive() != f.body_pos || r->negative() != f.body_neg_checked)
            return false;
        if (known.count(f.head)) return false;
        for (const auto& p : f.body_pos)
            if (!known.count(p)) return false;
        for (const auto& n : f.body_neg_checked)
            if (known.count(n)) return false;
        known.insert(f.head);
    }
    for (const auto& f : trace.firings)
        for (const auto& n : f.body_neg_checked)
            if (known.count(n)) return false;

    const auto expected = infer(rs, facts).derived.names();
    return std::vector<std::string>(known.begin(), known.end()) == expected;
}

inline void to_json(nlohmann::json& j, const Firing& f) {
    j = nlohmann::json{{"rule_id", f.rule_id},
                       {"head", f.head},
                       {"body_pos", f.body_pos},
                       {"body_neg_checked", f.body_neg_checked}};
}

inline void from_json(const nlohmann::json& j, Firing& f) {
    f.rule_id = j.at("rule_id").get<std::string>();
    f.head = j.at("head").get<std::string>();
    f.body_pos = j.at("body_pos").get<std::vector<std::string>>();
    f.body_neg_checked = j.at("body_neg_checked").get<std::vector<std::string>>();
}

inline void to_json(nlohmann::json& j, const ProofTrace& t) { j = t.firings; }

inline void from_json(const nlohmann::json& j, ProofTrace& t) { t.firings = j.get<std::vector<Firing>>(); }

} // namespace qsr
