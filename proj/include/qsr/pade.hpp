#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "error.hpp"

namespace qsr {

using cplx = std::complex<double>;

/// P_m(s) / Q_n(s) with Q_n(s) = 1 + b_1 s + ... + b_n s^n.
/// `b` stores b_1..b_n; b_0 = 1 is implicit.
struct RationalApprox {
    std::size_t m = 0;
    std::size_t n = 0;
    std::vector<double> a;
    std::vector<double> b;
    bool rank_deficient = false;

    bool operator==(const RationalApprox& o) const {
        return m == o.m && n == o.n && a == o.a && b == o.b;
    }
};

struct PoleSet {
    std::vector<cplx> poles;
    std::vector<cplx> residues;
    bool multiple_pole = false;
};

namespace detail {

template <class Coeffs, class T>
T horner(const Coeffs& c, T s) {
    T acc{0};
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * s + T(*it);
    return acc;
}

// 1, b_1, ..., b_n
inline std::vector<double> denominator_coeffs(const RationalApprox& r) {
    std::vector<double> q;
    q.reserve(r.b.size() + 1);
    q.push_back(1.0);
    q.insert(q.end(), r.b.begin(), r.b.end());
    return q;
}

inline std::vector<double> derivative(const std::vector<double>& p) {
    std::vector<double> d;
    for (std::size_t k = 1; k < p.size(); ++k) d.push_back(static_cast<double>(k) * p[k]);
    return d;
}

// Strip leading coefficients that are negligible next to the rest; a least
// squares denominator can carry a 1e-17 in place of an exact zero.
inline std::vector<double> trimmed(std::vector<double> p) {
    double scale = 1.0;
    for (double v : p) scale = std::max(scale, std::abs(v));
    while (p.size() > 1 && std::abs(p.back()) <= 1e-14 * scale) p.pop_back();
    return p;
}

} // namespace detail

/// Roots of a real polynomial p_0 + p_1 s + ... + p_d s^d as eigenvalues of
/// its companion matrix, each polished by a Newton step when that helps.
inline std::vector<cplx> polynomial_roots(const std::vector<double>& coeffs) {
    const auto p = detail::trimmed(coeffs);
    const std::size_t d = p.size() - 1;
    if (d == 0) return {};

    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                                 static_cast<Eigen::Index>(d));
    for (std::size_t i = 1; i < d; ++i)
        comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = 1.0;
    for (std::size_t i = 0; i < d; ++i)
        comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d - 1)) = -p[i] / p[d];

    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    if (es.info() != Eigen::Success) throw ConvergenceError("companion eigenvalue iteration failed");

    const auto dp = detail::derivative(p);
    std::vector<cplx> roots;
    roots.reserve(d);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        cplx z = es.eigenvalues()(i);
        for (int it = 0; it < 2; ++it) {
            const cplx f = detail::horner(p, z);
            const cplx df = detail::horner(dp, z);
            if (df == cplx(0.0)) break;
            const cplx cand = z - f / df;
            if (std::abs(detail::horner(p, cand)) < std::abs(f)) z = cand;
            else break;
        }
        roots.push_back(z);
    }
    return roots;
}

/// Denominator by the n x n Toeplitz moment system
///   sum_{j=1..n} b_j c_{m+i-j} = -c_{m+i},  i = 1..n,
/// solved in the minimum-norm least-squares sense, then numerator by
///   a_k = sum_{j=0..min(k,n)} b_j c_{k-j}.
inline RationalApprox fit_pade(std::span<const double> c, std::size_t m, std::size_t n) {
    if (c.size() < m + n + 1)
        throw ArgumentError("Pade [" + std::to_string(m) + "/" + std::to_string(n) + "] needs " +
                            std::to_string(m + n + 1) + " coefficients, got " +
                            std::to_string(c.size()));
    for (std::size_t k = 0; k <= m + n; ++k)
        if (!std::isfinite(c[k])) throw InputError("non-finite series coefficient at index " + std::to_string(k));

    const auto coef = [&](std::ptrdiff_t k) { return k < 0 ? 0.0 : c[static_cast<std::size_t>(k)]; };

    RationalApprox r;
    r.m = m;
    r.n = n;
    r.b.assign(n, 0.0);
    if (n > 0) {
        const auto N = static_cast<Eigen::Index>(n);
        Eigen::MatrixXd M(N, N);
        Eigen::VectorXd rhs(N);
        for (Eigen::Index i = 0; i < N; ++i) {
            for (Eigen::Index j = 0; j < N; ++j)
                M(i, j) = coef(static_cast<std::ptrdiff_t>(m) + i - j);
            rhs(i) = -coef(static_cast<std::ptrdiff_t>(m) + i + 1);
        }
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(M);
        Eigen::VectorXd sol = cod.solve(rhs);
        sol += cod.solve(rhs - M * sol);  // one refinement step
        r.rank_deficient = cod.rank() < N;

        double cnorm = 0.0;
        for (std::size_t k = 0; k <= m + n; ++k) cnorm += c[k] * c[k];
        cnorm = std::sqrt(cnorm);
        const double residual = (M * sol - rhs).norm();
        if (residual > 1e-6 * cnorm)
            throw IllConditionedError("Pade moment system has no acceptable least-squares solution",
                                      residual);
        for (Eigen::Index j = 0; j < N; ++j) r.b[static_cast<std::size_t>(j)] = sol(j);
    }

    r.a.assign(m + 1, 0.0);
    for (std::size_t k = 0; k <= m; ++k) {
        double acc = c[k];
        for (std::size_t j = 1; j <= std::min(k, n); ++j) acc += r.b[j - 1] * c[k - j];
        r.a[k] = acc;
    }
    return r;
}

/// First `count` Taylor coefficients of a/b, by the recurrence
///   t_k = a_k - sum_{j=1..min(k,n)} b_j t_{k-j}.
inline std::vector<double> taylor_coefficients(const RationalApprox& r, std::size_t count) {
    std::vector<double> t(count, 0.0);
    for (std::size_t k = 0; k < count; ++k) {
        double acc = k <= r.m ? r.a[k] : 0.0;
        for (std::size_t j = 1; j <= std::min(k, r.n); ++j) acc -= r.b[j - 1] * t[k - j];
        t[k] = acc;
    }
    return t;
}

inline std::vector<cplx> denominator_roots(const RationalApprox& r) {
    return polynomial_roots(detail::denominator_coeffs(r));
}

inline cplx eval_rational(const RationalApprox& r, cplx s) {
    for (const cplx& root : denominator_roots(r))
        if (std::abs(s - root) < 1e-12) throw PoleProximityError(root);
    return detail::horner(r.a, s) / detail::horner(detail::denominator_coeffs(r), s);
}

/// Poles of Q_n with residues P_m(s_k) / Q_n'(s_k), ordered by real part and
/// then imaginary part. Two roots closer than 1e-8 set `multiple_pole`.
inline PoleSet extract_poles(const RationalApprox& r) {
    PoleSet ps;
    if (r.n == 0) return ps;

    const auto q = detail::denominator_coeffs(r);
    const auto dq = detail::derivative(q);
    ps.poles = polynomial_roots(q);
    std::sort(ps.poles.begin(), ps.poles.end(), [](const cplx& x, const cplx& y) {
        if (x.real() != y.real()) return x.real() < y.real();
        return x.imag() < y.imag();
    });
    ps.residues.reserve(ps.poles.size());
    for (const cplx& s : ps.poles)
        ps.residues.push_back(detail::horner(r.a, s) / detail::horner(dq, s));
    for (std::size_t i = 0; i < ps.poles.size(); ++i)
        for (std::size_t j = i + 1; j < ps.poles.size(); ++j)
            if (std::abs(ps.poles[i] - ps.poles[j]) < 1e-8) ps.multiple_pole = true;
    return ps;
}

inline void to_json(nlohmann::json& j, const RationalApprox& r) {
    j = nlohmann::json{{"m", r.m}, {"n", r.n}, {"a", r.a}, {"b", r.b}};
}

inline void from_json(const nlohmann::json& j, RationalApprox& r) {
    r.m = j.at("m").get<std::size_t>();
    r.n = j.at("n").get<std::size_t>();
    r.a = j.at("a").get<std::vector<double>>();
    r.b = j.at("b").get<std::vector<double>>();
    if (r.a.size() != r.m + 1 || r.b.size() != r.n)
        throw InputError("rational approximant JSON: coefficient counts do not match orders");
}

} // namespace qsr
