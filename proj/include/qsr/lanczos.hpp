#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "error.hpp"
#include "signal_io.hpp"

namespace qsr {

/// Anything that can apply a real symmetric matrix to a vector.
template <class Op>
concept HermitianOperator = requires(const Op& op, const Eigen::VectorXd& v) {
    { op.dim() } -> std::convertible_to<std::size_t>;
    { op.apply(v) } -> std::convertible_to<Eigen::VectorXd>;
};

/// Dense realization of a symmetric operator. Symmetry is checked on
/// construction: max |H_ij - H_ji| <= 1e-12 max |H|.
class DenseSymmetricOp {
public:
    explicit DenseSymmetricOp(Eigen::MatrixXd h) : h_(std::move(h)) {
        if (h_.rows() != h_.cols() || h_.rows() == 0)
            throw ArgumentError("operator matrix must be square and non-empty");
        if (!h_.allFinite()) throw InputError("operator matrix has non-finite entries");
        const double scale = h_.cwiseAbs().maxCoeff();
        const double asym = (h_ - h_.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-12 * scale)
            throw InputError("operator matrix is not symmetric (max asymmetry " +
                             std::to_string(asym) + ")");
    }

    std::size_t dim() const noexcept { return static_cast<std::size_t>(h_.rows()); }
    Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return h_ * v; }
    const Eigen::MatrixXd& matrix() const noexcept { return h_; }

private:
    Eigen::MatrixXd h_;
};

static_assert(HermitianOperator<DenseSymmetricOp>);

/// Lanczos coefficients: T_k has diagonal `alpha` and off-diagonal `beta`.
struct TridiagResult {
    std::vector<double> alpha;
    std::vector<double> beta;
    std::size_t k = 0;
    bool breakdown = false;
    double residual_norm = 0.0; ///< norm of the residual left after step k
    std::optional<Eigen::MatrixXd> basis;
};

/// Leading k x k block of an existing tridiagonalization.
inline TridiagResult leading_block(const TridiagResult& t, std::size_t k) {
    if (k == 0 || k > t.k) throw ArgumentError("leading block size out of range");
    TridiagResult out;
    out.alpha.assign(t.alpha.begin(), t.alpha.begin() + static_cast<std::ptrdiff_t>(k));
    out.beta.assign(t.beta.begin(), t.beta.begin() + static_cast<std::ptrdiff_t>(k - 1));
    out.k = k;
    out.residual_norm = k < t.k ? t.beta[k - 1] : t.residual_norm;
    return out;
}

/// Three-term Lanczos recurrence from q1. With `reorthogonalize` the new
/// residual is projected off every stored basis vector (two Gram-Schmidt
/// passes). The run ends early, with breakdown = true, once a residual
/// norm drops to 1e-12 ||H q1||: the Krylov space is then invariant and
/// the returned T is exact on it.
template <HermitianOperator Op>
TridiagResult lanczos_tridiag(const Op& op, const Eigen::VectorXd& q1, std::size_t k,
                              bool reorthogonalize = true, bool keep_basis = false) {
    const std::size_t dim = op.dim();
    if (static_cast<std::size_t>(q1.size()) != dim)
        throw ArgumentError("start vector length does not match operator dimension");
    if (k < 1 || k > dim)
        throw ArgumentError("Lanczos steps must satisfy 1 <= k <= " + std::to_string(dim));
    const double qnorm = q1.norm();
    if (!(qnorm > 0.0) || !std::isfinite(qnorm)) throw ArgumentError("start vector must be non-zero");

    const bool store = reorthogonalize || keep_basis;
    Eigen::MatrixXd Q;
    if (store) Q.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(k));

    TridiagResult t;
    Eigen::VectorXd q = q1 / qnorm;
    Eigen::VectorXd q_prev = Eigen::VectorXd::Zero(q.size());
    double tol = 0.0;

    for (std::size_t j = 0; j < k; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        if (store) Q.col(jj) = q;
        Eigen::VectorXd w = op.apply(q);
        if (j == 0) tol = 1e-12 * w.norm();

        const double alpha = q.dot(w);
        t.alpha.push_back(alpha);
        w -= alpha * q;
        if (j > 0) w -= t.beta.back() * q_prev;
        if (reorthogonalize) {
            for (int pass = 0; pass < 2; ++pass) {
                const auto basis = Q.leftCols(jj + 1);
                w -= basis * (basis.transpose() * w);
            }
        }

        const double b = w.norm();
        t.k = j + 1;
        if (b <= tol) {
            t.breakdown = true;
            t.residual_norm = b;
            break;
        }
        if (j + 1 == k) {
            t.residual_norm = b;
            break;
        }
        t.beta.push_back(b);
        q_prev = q;
        q = w / b;
    }
    if (keep_basis) t.basis = Q.leftCols(static_cast<Eigen::Index>(t.k));
    return t;
}

/// Ritz values (ascending) and weights w_j = (e_1^T v_j)^2.
struct RitzSpectrum {
    std::vector<double> lambdas;
    std::vector<double> weights;
};

/// Implicit-shift QL on the symmetric tridiagonal T. Only the first row of
/// the accumulated rotation is tracked since that is all the weights need.
inline RitzSpectrum tridiag_eigen(const TridiagResult& t, std::size_t max_sweeps = 100000) {
    const std::size_t n = t.alpha.size();
    if (n == 0) throw ArgumentError("empty tridiagonal matrix");
    if (t.beta.size() + 1 != n) throw ArgumentError("tridiagonal off-diagonal has wrong length");

    std::vector<double> d = t.alpha;
    std::vector<double> e(n, 0.0);
    std::copy(t.beta.begin(), t.beta.end(), e.begin());
    std::vector<double> z(n, 0.0);
    z[0] = 1.0;

    const double eps = std::numeric_limits<double>::epsilon();
    std::size_t sweeps = 0;
    for (std::size_t l = 0; l < n; ++l) {
        std::size_t m = l;
        do {
            for (m = l; m + 1 < n; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= eps * dd) break;
            }
            if (m == l) break;
            if (++sweeps > max_sweeps)
                throw ConvergenceError("tridiagonal QL iteration did not converge");

            double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            double r = std::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
            double s = 1.0, c = 1.0, p = 0.0;
            bool underflow = false;
            for (std::size_t ii = m; ii-- > l;) {
                const double f = s * e[ii];
                const double b = c * e[ii];
                r = std::hypot(f, g);
                e[ii + 1] = r;
                if (r == 0.0) {
                    d[ii + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[ii + 1] - p;
                r = (d[ii] - g) * s + 2.0 * c * b;
                p = s * r;
                d[ii + 1] = g + p;
                g = c * r - b;
                const double zf = z[ii + 1];
                z[ii + 1] = s * z[ii] + c * zf;
                z[ii] = c * z[ii] - s * zf;
            }
            if (underflow) continue;
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        } while (true);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    RitzSpectrum out;
    out.lambdas.reserve(n);
    out.weights.reserve(n);
    for (std::size_t i : order) {
        out.lambdas.push_back(d[i]);
        out.weights.push_back(z[i] * z[i]);
    }
    return out;
}

/// Deltas broadened into unit-area Lorentzians of half-width eta:
///   S(w) = sum_j w_j (eta/pi) / ((w - lambda_j)^2 + eta^2)
inline std::vector<double> spectral_density(const RitzSpectrum& spec, std::span<const double> grid,
                                            double eta) {
    if (!(eta > 0.0)) throw ArgumentError("broadening eta must be positive");
    std::vector<double> s(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < spec.lambdas.size(); ++j) {
            const double dw = grid[i] - spec.lambdas[j];
            acc += spec.weights[j] * (eta / std::numbers::pi) / (dw * dw + eta * eta);
        }
        s[i] = acc;
    }
    return s;
}

inline void to_json(nlohmann::json& j, const RitzSpectrum& r) {
    j = nlohmann::json{{"lambdas", r.lambdas}, {"weights", r.weights}};
}

inline void from_json(const nlohmann::json& j, RitzSpectrum& r) {
    r.lambdas = j.at("lambdas").get<std::vector<double>>();
    r.weights = j.at("weights").get<std::vector<double>>();
    if (r.lambdas.size() != r.weights.size())
        throw InputError("Ritz spectrum JSON: lambdas and weights differ in length");
}

/// Square matrix from a JSON array of rows.
inline DenseSymmetricOp operator_from_json(const nlohmann::json& j) {
    const nlohmann::json& rows = j.is_object() && j.contains("matrix") ? j["matrix"] : j;
    if (!rows.is_array() || rows.empty()) throw InputError("operator JSON must be an array of rows");
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd h(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
            throw InputError("operator JSON row " + std::to_string(i) + " has wrong length");
        for (Eigen::Index c = 0; c < n; ++c) {
            if (!row[static_cast<std::size_t>(c)].is_number())
                throw InputError("operator JSON entries must be numbers");
            h(i, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
    }
    return DenseSymmetricOp(std::move(h));
}

/// Headerless comma-separated square matrix.
inline DenseSymmetricOp operator_from_csv(std::istream& in) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(detail::parse_double(cell, lineno));
        rows.push_back(std::move(row));
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    if (n == 0) throw InputError("empty operator CSV");
    Eigen::MatrixXd h(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != n)
            throw InputError("operator CSV is not square");
        for (Eigen::Index c = 0; c < n; ++c) h(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
    return DenseSymmetricOp(std::move(h));
}

inline DenseSymmetricOp load_operator(const std::string& path) {
    const std::string text = detail::read_file(path);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        try {
            return operator_from_json(nlohmann::json::parse(text));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("'" + path + "': " + e.what());
        }
    }
    std::istringstream in(text);
    return operator_from_csv(in);
}

} // namespace qsr
