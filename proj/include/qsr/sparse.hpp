#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "error.hpp"
#include "pade.hpp"
#include "signal.hpp"

namespace qsr {

struct LorentzianAtom {
    double omega = 0.0; ///< resonance frequency, rad/s
    double gamma = 1.0; ///< half-width, 1/s
    double amp = 1.0;   ///< peak height

    bool operator==(const LorentzianAtom&) const = default;
};

/// A gamma^2 / ((w - omega)^2 + gamma^2)
inline double lorentzian(const LorentzianAtom& a, double w) {
    const double dw = w - a.omega;
    const double g2 = a.gamma * a.gamma;
    return a.amp * g2 / (dw * dw + g2);
}

struct FitDiagnostics {
    std::size_t model_order = 0;          ///< poles kept by the pencil
    std::size_t discarded_unstable = 0;   ///< |z| >= 1 or z = 0
    std::size_t discarded_negative = 0;   ///< non-positive amplitude
    std::size_t iterations = 0;
    bool converged = true;
    std::vector<double> residual_history; ///< refine_nls only
};

struct SparseSpectrum {
    std::vector<LorentzianAtom> atoms;
    double residual_norm = 0.0;
    FitDiagnostics diag;
};

/// Sorts by omega (then gamma) and folds atoms that coincide to within
/// 1e-9 in both omega and gamma into one by summing amplitudes.
inline void normalize_atoms(std::vector<LorentzianAtom>& atoms) {
    std::sort(atoms.begin(), atoms.end(), [](const LorentzianAtom& x, const LorentzianAtom& y) {
        if (x.omega != y.omega) return x.omega < y.omega;
        return x.gamma < y.gamma;
    });
    std::vector<LorentzianAtom> out;
    for (const auto& a : atoms) {
        bool merged = false;
        for (auto& o : out) {
            if (std::abs(o.omega - a.omega) < 1e-9 && std::abs(o.gamma - a.gamma) < 1e-9) {
                o.amp += a.amp;
                merged = true;
                break;
            }
        }
        if (!merged) out.push_back(a);
    }
    atoms = std::move(out);
}

inline double eval_spectrum(const SparseSpectrum& sp, double omega) {
    double acc = 0.0;
    for (const auto& a : sp.atoms) acc += lorentzian(a, omega);
    return acc;
}

inline std::vector<double> eval_spectrum(const SparseSpectrum& sp, std::span<const double> grid) {
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = eval_spectrum(sp, grid[i]);
    return out;
}

/// Maps discrete modes x[n] = sum_k r_k z_k^n to atoms:
///   omega = |arg z| / dt,  gamma = -ln|z| / dt.
/// A conjugate pair becomes one atom with amp = 2|r| / gamma; a real pole
/// keeps its signed residue, amp = r / gamma, and is dropped when that is
/// not positive. Poles on or outside the unit circle are dropped.
inline SparseSpectrum atoms_from_poles(const PoleSet& modes, double dt) {
    if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
    if (modes.poles.size() != modes.residues.size())
        throw ArgumentError("pole and residue counts differ");

    SparseSpectrum sp;
    const auto& z = modes.poles;
    const auto has_partner = [&](std::size_t i) {
        const cplx target = std::conj(z[i]);
        for (std::size_t j = 0; j < z.size(); ++j)
            if (j != i && std::abs(z[j] - target) <= 1e-8 * std::max(1.0, std::abs(target))) return true;
        return false;
    };

    for (std::size_t i = 0; i < z.size(); ++i) {
        const double mag = std::abs(z[i]);
        const bool real = std::abs(z[i].imag()) <= 1e-12 * mag;
        const bool paired = !real && has_partner(i);
        if (paired && z[i].imag() < 0.0) continue;
        if (!(mag < 1.0) || mag == 0.0) {
            ++sp.diag.discarded_unstable;
            continue;
        }
        LorentzianAtom a;
        a.gamma = -std::log(mag) / dt;
        a.omega = real ? (z[i].real() < 0.0 ? std::numbers::pi / dt : 0.0) : std::abs(std::arg(z[i])) / dt;
        const cplx r = modes.residues[i];
        if (real) a.amp = r.real() / a.gamma;
        else a.amp = (paired ? 2.0 : 1.0) * std::abs(r) / a.gamma;
        if (!(a.amp > 0.0) || !std::isfinite(a.amp)) {
            ++sp.diag.discarded_negative;
            continue;
        }
        sp.atoms.push_back(a);
    }
    normalize_atoms(sp.atoms);
    return sp;
}

/// Matrix pencil on the Hankel matrix of x with pencil parameter L = N/2.
/// `max_modes` caps the number of complex exponentials (a damped cosine
/// uses two). The order is the count of singular values above
/// sv_tol * sigma_1 and above the absolute `sv_floor` (a noise floor; zero
/// disables it), and amplitudes come from a least-squares Vandermonde
/// fit over all samples.
inline SparseSpectrum fit_matrix_pencil(const TimeSeries& x, std::size_t max_modes, double sv_tol = 1e-8,
                                        double sv_floor = 0.0) {
    const std::size_t n = x.size();
    if (max_modes < 1) throw ArgumentError("max_modes must be at least 1");
    if (n < 2 * max_modes + 2)
        throw ArgumentError("matrix pencil with " + std::to_string(max_modes) + " modes needs at least " +
                            std::to_string(2 * max_modes + 2) + " samples, got " + std::to_string(n));

    const auto s = x.samples();
    const auto L = static_cast<Eigen::Index>(n / 2);
    const auto rows = static_cast<Eigen::Index>(n) - L;
    Eigen::MatrixXd Y(rows, L + 1);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j <= L; ++j) Y(i, j) = s[static_cast<std::size_t>(i + j)];

    Eigen::BDCSVD<Eigen::MatrixXd> svd(Y, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    SparseSpectrum sp;
    if (sv.size() == 0 || sv(0) == 0.0) return sp;

    Eigen::Index order = 0;
    while (order < sv.size() && sv(order) > sv_tol * sv(0) && sv(order) > sv_floor) ++order;
    order = std::min<Eigen::Index>({order, static_cast<Eigen::Index>(max_modes), L});
    sp.diag.model_order = static_cast<std::size_t>(order);
    if (order == 0) {
        sp.residual_norm = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(n)).norm();
        return sp;
    }

    const Eigen::MatrixXd Vm = svd.matrixV().leftCols(order);
    const Eigen::MatrixXd V1 = Vm.topRows(L);
    const Eigen::MatrixXd V2 = Vm.bottomRows(L);
    const Eigen::MatrixXd phi = V1.completeOrthogonalDecomposition().solve(V2);
    Eigen::EigenSolver<Eigen::MatrixXd> es(phi, false);
    if (es.info() != Eigen::Success) throw ConvergenceError("matrix pencil eigenvalue iteration failed");

    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXcd Z(N, order);
    for (Eigen::Index k = 0; k < order; ++k) {
        cplx p(1.0, 0.0);
        const cplx zk = es.eigenvalues()(k);
        for (Eigen::Index i = 0; i < N; ++i) {
            Z(i, k) = p;
            p *= zk;
        }
    }
    Eigen::VectorXcd rhs(N);
    for (Eigen::Index i = 0; i < N; ++i) rhs(i) = s[static_cast<std::size_t>(i)];
    const Eigen::VectorXcd amps = Z.colPivHouseholderQr().solve(rhs);
    const double residual = (Z * amps - rhs).real().norm();

    PoleSet modes;
    for (Eigen::Index k = 0; k < order; ++k) {
        modes.poles.push_back(es.eigenvalues()(k));
        modes.residues.push_back(amps(k));
    }
    auto out = atoms_from_poles(modes, x.dt());
    out.residual_norm = residual;
    out.diag.model_order = sp.diag.model_order;
    return out;
}

// ---------------------------------------------------------------------------
// Greedy pursuit over a Lorentzian dictionary.

struct DictionaryConfig {
    double omega_min = 0.0;
    double omega_max = 10.0;
    std::size_t n_omega = 101;
    double gamma_min = 0.01;
    double gamma_max = 1.0;
    std::size_t n_gamma = 8;
};

struct DictionaryEntry {
    double omega;
    double gamma;
};

/// Linear omega grid crossed with a log-spaced gamma grid.
inline std::vector<DictionaryEntry> make_dictionary(const DictionaryConfig& cfg) {
    if (cfg.n_omega == 0 || cfg.n_gamma == 0 || !(cfg.gamma_min > 0.0) || cfg.gamma_max < cfg.gamma_min ||
        cfg.omega_max < cfg.omega_min)
        throw ArgumentError("invalid dictionary configuration");
    std::vector<DictionaryEntry> dict;
    dict.reserve(cfg.n_omega * cfg.n_gamma);
    for (std::size_t i = 0; i < cfg.n_omega; ++i) {
        const double w = cfg.n_omega == 1 ? cfg.omega_min
                                          : cfg.omega_min + (cfg.omega_max - cfg.omega_min) *
                                                                static_cast<double>(i) /
                                                                static_cast<double>(cfg.n_omega - 1);
        for (std::size_t j = 0; j < cfg.n_gamma; ++j) {
            const double g = cfg.n_gamma == 1
                                 ? cfg.gamma_min
                                 : cfg.gamma_min * std::pow(cfg.gamma_max / cfg.gamma_min,
                                                            static_cast<double>(j) /
                                                                static_cast<double>(cfg.n_gamma - 1));
            dict.push_back({w, g});
        }
    }
    return dict;
}

/// Lawson-Hanson active set NNLS: min ||A x - b|| subject to x >= 0.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, std::size_t max_iter = 0) {
    const Eigen::Index n = A.cols();
    if (max_iter == 0) max_iter = static_cast<std::size_t>(3 * n + 10);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff() * b.cwiseAbs().maxCoeff() *
                                                 static_cast<double>(A.rows()));

    const auto solve_passive = [&]() {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j)
            if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
        Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) Ap.col(static_cast<Eigen::Index>(c)) = A.col(idx[c]);
        const Eigen::VectorXd sp = Ap.completeOrthogonalDecomposition().solve(b);
        Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
        for (std::size_t c = 0; c < idx.size(); ++c) z(idx[c]) = sp(static_cast<Eigen::Index>(c));
        return z;
    };

    for (std::size_t outer = 0; outer < max_iter; ++outer) {
        const Eigen::VectorXd w = A.transpose() * (b - A * x);
        Eigen::Index best = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w(j) > wmax) {
                wmax = w(j);
                best = j;
            }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = true;

        for (std::size_t inner = 0; inner < max_iter; ++inner) {
            const Eigen::VectorXd z = solve_passive();
            bool feasible = true;
            double alpha = 1.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && z(j) <= 0.0) {
                    feasible = false;
                    alpha = std::min(alpha, x(j) / (x(j) - z(j)));
                }
            }
            if (feasible) {
                x = z;
                break;
            }
            x += alpha * (z - x);
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && x(j) <= 1e-15) {
                    passive[static_cast<std::size_t>(j)] = false;
                    x(j) = 0.0;
                }
        }
    }
    return x;
}

/// Orthogonal matching pursuit with nonnegative amplitudes. Each pass picks
/// the unselected entry whose normalized profile correlates most positively
/// with the residual, then re-solves all selected amplitudes by NNLS. Stops at
/// k_max atoms or once ||r|| <= tol ||target||.
inline SparseSpectrum fit_omp(std::span<const double> grid, std::span<const double> target,
                              std::span<const DictionaryEntry> dictionary, std::size_t k_max, double tol) {
    if (grid.empty() || dictionary.empty()) throw ArgumentError("grid and dictionary must be non-empty");
    if (grid.size() != target.size()) throw ArgumentError("target and grid sizes differ");
    if (k_max < 1) throw ArgumentError("k_max must be at least 1");

    const auto G = static_cast<Eigen::Index>(grid.size());
    const auto D = static_cast<Eigen::Index>(dictionary.size());
    Eigen::Map<const Eigen::VectorXd> y(target.data(), G);
    Eigen::MatrixXd dict(G, D);
    Eigen::VectorXd norms(D);
    for (Eigen::Index j = 0; j < D; ++j) {
        const LorentzianAtom unit{dictionary[static_cast<std::size_t>(j)].omega,
                                  dictionary[static_cast<std::size_t>(j)].gamma, 1.0};
        for (Eigen::Index i = 0; i < G; ++i) dict(i, j) = lorentzian(unit, grid[static_cast<std::size_t>(i)]);
        norms(j) = dict.col(j).norm();
    }

    SparseSpectrum sp;
    const double ynorm = y.norm();
    Eigen::VectorXd r = y;
    std::vector<Eigen::Index> selected;
    Eigen::VectorXd amps;
    while (selected.size() < k_max) {
        if (r.norm() <= tol * ynorm) break;
        // amplitudes are nonnegative, so only positive correlation can help
        Eigen::VectorXd corr = (dict.transpose() * r).cwiseQuotient(norms);
        for (const auto j : selected) corr(j) = -1.0;
        Eigen::Index best = 0;
        corr.maxCoeff(&best);
        if (!(corr(best) > 0.0)) break;
        selected.push_back(best);

        Eigen::MatrixXd sub(G, static_cast<Eigen::Index>(selected.size()));
        for (std::size_t c = 0; c < selected.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = dict.col(selected[c]);
        amps = nnls(sub, y);
        r = y - sub * amps;
        ++sp.diag.iterations;
    }
    for (std::size_t c = 0; c < selected.size(); ++c) {
        const double a = amps(static_cast<Eigen::Index>(c));
        if (a > 0.0) {
            const auto& e = dictionary[static_cast<std::size_t>(selected[c])];
            sp.atoms.push_back({e.omega, e.gamma, a});
        }
    }
    normalize_atoms(sp.atoms);
    sp.residual_norm = r.norm();
    return sp;
}

// ---------------------------------------------------------------------------
// Nonlinear refinement.

/// d model / d (omega_k, gamma_k, amp_k), columns in that order per atom.
inline Eigen::MatrixXd lorentzian_jacobian(std::span<const LorentzianAtom> atoms, std::span<const double> grid) {
    Eigen::MatrixXd J(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(3 * atoms.size()));
    for (std::size_t k = 0; k < atoms.size(); ++k) {
        const auto& a = atoms[k];
        const double g2 = a.gamma * a.gamma;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double dw = grid[i] - a.omega;
            const double den = dw * dw + g2;
            const auto row = static_cast<Eigen::Index>(i);
            const auto col = static_cast<Eigen::Index>(3 * k);
            J(row, col) = 2.0 * a.amp * g2 * dw / (den * den);
            J(row, col + 1) = 2.0 * a.amp * a.gamma * dw * dw / (den * den);
            J(row, col + 2) = g2 / den;
        }
    }
    return J;
}

/// Damped Gauss-Newton on (omega, ln gamma, ln amp) for every atom jointly.
/// A step is halved up to 20 times until the residual decreases; if none
/// does, the current iterate is returned. `converged` reports whether the
/// gradient fell to 1e-10 max(1, ||target||^2).
inline SparseSpectrum refine_nls(const SparseSpectrum& sp, std::span<const double> grid,
                                 std::span<const double> target, std::size_t max_iter) {
    if (sp.atoms.empty()) throw ArgumentError("refine_nls needs at least one atom");
    if (grid.size() != target.size()) throw ArgumentError("target and grid sizes differ");
    for (const auto& a : sp.atoms)
        if (!(a.gamma > 0.0) || !(a.amp > 0.0)) throw ArgumentError("atoms must have positive gamma and amp");

    const std::size_t K = sp.atoms.size();
    const auto G = static_cast<Eigen::Index>(grid.size());
    Eigen::Map<const Eigen::VectorXd> y(target.data(), G);

    const auto unpack = [&](const Eigen::VectorXd& th) {
        std::vector<LorentzianAtom> atoms(K);
        for (std::size_t k = 0; k < K; ++k) {
            const auto i = static_cast<Eigen::Index>(3 * k);
            atoms[k] = {th(i), std::exp(th(i + 1)), std::exp(th(i + 2))};
        }
        return atoms;
    };
    const auto residual = [&](const std::vector<LorentzianAtom>& atoms) {
        Eigen::VectorXd f(G);
        for (Eigen::Index i = 0; i < G; ++i) {
            double m = 0.0;
            for (const auto& a : atoms) m += lorentzian(a, grid[static_cast<std::size_t>(i)]);
            f(i) = m - y(i);
        }
        return f;
    };

    Eigen::VectorXd theta(static_cast<Eigen::Index>(3 * K));
    for (std::size_t k = 0; k < K; ++k) {
        const auto i = static_cast<Eigen::Index>(3 * k);
        theta(i) = sp.atoms[k].omega;
        theta(i + 1) = std::log(sp.atoms[k].gamma);
        theta(i + 2) = std::log(sp.atoms[k].amp);
    }

    const double gtol = 1e-10 * std::max(1.0, y.squaredNorm());
    const double span = grid.back() - grid.front();
    auto atoms = unpack(theta);
    Eigen::VectorXd f = residual(atoms);
    double cost = f.squaredNorm();

    SparseSpectrum out;
    out.diag.residual_history.push_back(std::sqrt(cost));
    out.diag.converged = false;
    for (std::size_t iter = 0;; ++iter) {
        Eigen::MatrixXd J = lorentzian_jacobian(atoms, grid);
        for (std::size_t k = 0; k < K; ++k) {
            const auto c = static_cast<Eigen::Index>(3 * k);
            J.col(c + 1) *= atoms[k].gamma;
            J.col(c + 2) *= atoms[k].amp;
        }
        if ((J.transpose() * f).cwiseAbs().maxCoeff() <= gtol) {
            out.diag.converged = true;
            break;
        }
        if (iter >= max_iter) break;

        const Eigen::VectorXd step = -J.completeOrthogonalDecomposition().solve(f);
        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h <= 20; ++h, t *= 0.5) {
            const Eigen::VectorXd cand = theta + t * step;
            if (!cand.allFinite()) continue;
            const auto cand_atoms = unpack(cand);
            // stay on the grid; an atom wider than the grid is a background, not a peak
            if (std::any_of(cand_atoms.begin(), cand_atoms.end(), [&](const LorentzianAtom& a) {
                    return a.omega < grid.front() || a.omega > grid.back() || a.gamma > span;
                }))
                continue;
            const Eigen::VectorXd cf = residual(cand_atoms);
            const double c = cf.squaredNorm();
            if (c < cost) {
                theta = cand;
                atoms = cand_atoms;
                f = cf;
                cost = c;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        ++out.diag.iterations;
        out.diag.residual_history.push_back(std::sqrt(cost));
    }

    out.atoms = atoms;
    normalize_atoms(out.atoms);
    out.residual_norm = std::sqrt(cost);
    return out;
}

// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const LorentzianAtom& a) {
    j = nlohmann::json{{"omega", a.omega}, {"gamma", a.gamma}, {"amp", a.amp}};
}

inline void from_json(const nlohmann::json& j, LorentzianAtom& a) {
    a.omega = j.at("omega").get<double>();
    a.gamma = j.at("gamma").get<double>();
    a.amp = j.at("amp").get<double>();
    if (!std::isfinite(a.omega) || !(a.gamma > 0.0) || !(a.amp > 0.0))
        throw InputError("atom needs finite omega and positive gamma and amp");
}

inline void to_json(nlohmann::json& j, const FitDiagnostics& d) {
    j = nlohmann::json{{"model_order", d.model_order},
                       {"discarded_unstable", d.discarded_unstable},
                       {"discarded_negative", d.discarded_negative},
                       {"iterations", d.iterations},
                       {"converged", d.converged},
                       {"residual_history", d.residual_history}};
}

inline void to_json(nlohmann::json& j, const SparseSpectrum& sp) {
    j = nlohmann::json{{"atoms", sp.atoms}, {"residual_norm", sp.residual_norm}, {"diagnostics", sp.diag}};
}

inline void from_json(const nlohmann::json& j, SparseSpectrum& sp) {
    sp.atoms = j.at("atoms").get<std::vector<LorentzianAtom>>();
    sp.residual_norm = j.value("residual_norm", 0.0);
    normalize_atoms(sp.atoms);
}

/// `omega,S` rows for plotting.
inline void write_spectrum_csv(std::ostream& out, const SparseSpectrum& sp, std::span<const double> grid) {
    out << "omega,S\n";
    out.precision(17);
    for (double w : grid) out << w << ',' << eval_spectrum(sp, w) << '\n';
}

} // namespace qsr
