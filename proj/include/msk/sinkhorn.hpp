#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "msk/matrix.hpp"

namespace msk {

struct SolverConfig {
    double epsilon = 0.05;    // entropic regularization, > 0
    std::size_t max_iters = 1000;
    double tol = 1e-6;        // max marginal violation at convergence
    double mu = 0.25;         // damping factor for the non-selected channels
    std::size_t k_prime = 1;  // anchors selected per sample

    void validate(std::size_t k_total) const {
        if (epsilon <= 0.0) throw std::invalid_argument("SolverConfig: epsilon must be > 0");
        if (mu <= 0.0 || mu >= 1.0) throw std::invalid_argument("SolverConfig: mu must be in (0,1)");
        if (tol <= 0.0) throw std::invalid_argument("SolverConfig: tol must be > 0");
        if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
        if (k_prime < 1 || k_prime > k_total) {
            throw std::invalid_argument("SolverConfig: k_prime must be in [1, K]");
        }
    }
};

struct SolveReport {
    std::size_t iterations_used = 0;
    double final_violation = 0.0;
    bool converged = false;
};

namespace detail {

inline double log_sum_exp(const double* x, std::size_t n, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        mx = std::max(mx, x[i * stride]);
    }
    if (!std::isfinite(mx)) {
        return mx;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += std::exp(x[i * stride] - mx);
    }
    return mx + std::log(s);
}

}  // namespace detail

// Vanilla Sinkhorn-Knopp: scale exp(S/eps) so that row sums match
// row_marginals and column sums match col_marginals.
inline std::pair<DenseMatrix, SolveReport> vanilla_sinkhorn(const DenseMatrix& S,
                                                            const std::vector<double>& row_marginals,
                                                            const std::vector<double>& col_marginals,
                                                            const SolverConfig& cfg,
                                                            std::vector<double>* residuals = nullptr) {
    const std::size_t n = S.rows();
    const std::size_t k = S.cols();
    cfg.validate(k);
    if (row_marginals.size() != n || col_marginals.size() != k) {
        throw std::invalid_argument("vanilla_sinkhorn: marginal length mismatch");
    }
    double rsum = 0.0, csum = 0.0;
    for (double r : row_marginals) {
        if (r <= 0.0) throw std::invalid_argument("vanilla_sinkhorn: non-positive row marginal");
        rsum += r;
    }
    for (double c : col_marginals) {
        if (c <= 0.0) throw std::invalid_argument("vanilla_sinkhorn: non-positive column marginal");
        csum += c;
    }
    if (std::abs(rsum - csum) > 1e-9 * std::max(1.0, std::abs(rsum))) {
        throw std::invalid_argument("vanilla_sinkhorn: marginal sums differ");
    }

    // Gibbs kernel with max-shift for stability; the shift is absorbed by the
    // scaling factors.
    double smax = *std::max_element(S.data().begin(), S.data().end());
    DenseMatrix K(n, k);
    for (std::size_t idx = 0; idx < S.size(); ++idx) {
        K.data()[idx] = std::exp((S.data()[idx] - smax) / cfg.epsilon);
    }

    std::vector<double> u(n, 1.0), v(k, 1.0);
    SolveReport report;
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += K(i, j) * v[j];
            u[i] = row_marginals[i] / s;
        }
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += K(i, j) * u[i];
            v[j] = col_marginals[j] / s;
        }
        report.iterations_used = it + 1;

        // residual on the scaled matrix (columns exact after the v update,
        // rows carry the violation)
        double viol = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += u[i] * K(i, j) * v[j];
            viol = std::max(viol, std::abs(s - row_marginals[i]));
        }
        report.final_violation = viol;
        if (residuals) residuals->push_back(viol);
        if (viol <= cfg.tol) {
            report.converged = true;
            break;
        }
    }

    DenseMatrix Q(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            Q(i, j) = u[i] * K(i, j) * v[j];
        }
    }
    return {std::move(Q), report};
}

// 2D baseline with modified constraints: row sums K', column sums N*K'/K.
// Entries are not bounded by 1, which is the deficiency Multi-SK removes.
inline std::pair<DenseMatrix, SolveReport> modified_sinkhorn(const DenseMatrix& S,
                                                             const SolverConfig& cfg) {
    const std::size_t n = S.rows();
    const std::size_t k = S.cols();
    cfg.validate(k);
    std::vector<double> rm(n, static_cast<double>(cfg.k_prime));
    std::vector<double> cm(k, static_cast<double>(n) * static_cast<double>(cfg.k_prime) /
                                  static_cast<double>(k));
    return vanilla_sinkhorn(S, rm, cm, cfg);
}

// Channel-stacked similarity tensor: first K' channels are S, the remaining
// K-K' channels are mu*S. The channel order itself encodes the anchor ranking.
inline DenseTensor3 build_similarity_tensor(const DenseMatrix& S, const SolverConfig& cfg) {
    const std::size_t n = S.rows();
    const std::size_t k = S.cols();
    cfg.validate(k);
    DenseTensor3 t(k, n, k);
    for (std::size_t c = 0; c < k; ++c) {
        double scale = c < cfg.k_prime ? 1.0 : cfg.mu;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                t(c, i, j) = scale * S(i, j);
            }
        }
    }
    return t;
}

// Depth-wise sum over the first k_prime channels; sums are clamped to [0,1]
// only to absorb numerical dust.
inline DenseMatrix extract_assignment(const DenseTensor3& Qp, std::size_t k_prime) {
    if (k_prime < 1 || k_prime > Qp.channels()) {
        throw std::invalid_argument("extract_assignment: k_prime out of range");
    }
    DenseMatrix Q(Qp.rows(), Qp.cols());
    for (std::size_t c = 0; c < k_prime; ++c) {
        for (std::size_t i = 0; i < Qp.rows(); ++i) {
            for (std::size_t j = 0; j < Qp.cols(); ++j) {
                Q(i, j) += Qp(c, i, j);
            }
        }
    }
    for (double& v : Q.data()) {
        if (v > 1.0 && v < 1.0 + 1e-9) v = 1.0;
        if (v < 0.0 && v > -1e-9) v = 0.0;
    }
    return Q;
}

struct MultiSkResult {
    DenseTensor3 q_tensor;  // K x N x K, satisfies row/column/depth constraints
    DenseMatrix q;          // N x K, depth-wise sum of the first K' channels
    SolveReport report;
};

namespace detail {

// Max violation of the three Multi-SK constraint families on Q'.
inline double multi_sk_violation(const DenseTensor3& Qp) {
    const std::size_t kc = Qp.channels();
    const std::size_t n = Qp.rows();
    const std::size_t k = Qp.cols();
    const double col_target = static_cast<double>(n) / static_cast<double>(k);
    double viol = 0.0;
    for (std::size_t c = 0; c < kc; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += Qp(c, i, j);
            viol = std::max(viol, std::abs(s - 1.0));
        }
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += Qp(c, i, j);
            viol = std::max(viol, std::abs(s - col_target));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < kc; ++c) s += Qp(c, i, j);
            viol = std::max(viol, std::abs(s - 1.0));
        }
    }
    return viol;
}

// One sweep of the three factor updates (rows -> columns per channel, then
// depth fibers) in log domain. x = [la | lb | lc] with la[i*k+c], lb[j*k+c],
// lc[i*k+j], applied to logK = S'/eps (max-shifted).
inline void multi_sk_sweep(const std::vector<double>& logK, std::size_t n, std::size_t k,
                           std::vector<double>& x) {
    double* la = x.data();
    double* lb = x.data() + n * k;
    double* lc = x.data() + n * k + k * k;
    auto lk = [&](std::size_t c, std::size_t i, std::size_t j) {
        return logK[(c * n + i) * k + j];
    };
    const double log_col_target = std::log(static_cast<double>(n) / static_cast<double>(k));
    std::vector<double> scratch(std::max(n, k));
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                scratch[j] = lb[j * k + c] + lc[i * k + j] + lk(c, i, j);
            }
            la[i * k + c] = -log_sum_exp(scratch.data(), k, 1);
        }
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t i = 0; i < n; ++i) {
                scratch[i] = la[i * k + c] + lc[i * k + j] + lk(c, i, j);
            }
            lb[j * k + c] = log_col_target - log_sum_exp(scratch.data(), n, 1);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t c = 0; c < k; ++c) {
                scratch[c] = la[i * k + c] + lb[j * k + c] + lk(c, i, j);
            }
            lc[i * k + j] = -log_sum_exp(scratch.data(), k, 1);
        }
    }
}

inline void multi_sk_fill_tensor(const std::vector<double>& logK, std::size_t n, std::size_t k,
                                 const std::vector<double>& x, DenseTensor3& Qp) {
    const double* la = x.data();
    const double* lb = x.data() + n * k;
    const double* lc = x.data() + n * k + k * k;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                Qp(c, i, j) = std::exp(la[i * k + c] + lb[j * k + c] + lc[i * k + j] +
                                       logK[(c * n + i) * k + j]);
            }
        }
    }
}

// Solve min_gamma || f - dF gamma ||_2 by regularized normal equations with
// partial pivoting. m is small (Anderson memory), so this is cheap.
inline std::vector<double> anderson_coefficients(const std::vector<std::vector<double>>& dF,
                                                 const std::vector<double>& f) {
    const std::size_t m = dF.size();
    const std::size_t dim = f.size();
    std::vector<double> A(m * m, 0.0), rhs(m, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) s += dF[a][i] * dF[b][i];
            A[a * m + b] = A[b * m + a] = s;
        }
        double s = 0.0;
        for (std::size_t i = 0; i < dim; ++i) s += dF[a][i] * f[i];
        rhs[a] = s;
    }
    for (std::size_t a = 0; a < m; ++a) A[a * m + a] += 1e-10 * (A[a * m + a] + 1e-30);

    std::vector<double> g = rhs;
    for (std::size_t col = 0; col < m; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < m; ++r) {
            if (std::abs(A[r * m + col]) > std::abs(A[piv * m + col])) piv = r;
        }
        for (std::size_t c = 0; c < m; ++c) std::swap(A[col * m + c], A[piv * m + c]);
        std::swap(g[col], g[piv]);
        if (std::abs(A[col * m + col]) < 1e-300) A[col * m + col] = 1e-300;
        for (std::size_t r = col + 1; r < m; ++r) {
            double fac = A[r * m + col] / A[col * m + col];
            for (std::size_t c = col; c < m; ++c) A[r * m + c] -= fac * A[col * m + c];
            g[r] -= fac * g[col];
        }
    }
    std::vector<double> gamma(m);
    for (std::size_t col = m; col-- > 0;) {
        double s = g[col];
        for (std::size_t c = col + 1; c < m; ++c) s -= A[col * m + c] * gamma[c];
        gamma[col] = s / A[col * m + col];
    }
    return gamma;
}

// Log-domain solve with Anderson acceleration on the fixed point of the sweep
// map. Plain coordinate sweeps have a slow geometric tail on some instances
// (rate approaching 1 as epsilon shrinks); extrapolating over the last few
// residual differences cuts the worst cases from thousands of sweeps to a few
// hundred. A non-finite extrapolated point falls back to the plain step, so
// the iteration never leaves the feasible log-factor space.
inline MultiSkResult multi_sinkhorn_log(const std::vector<double>& logK, std::size_t n,
                                        std::size_t k, const SolverConfig& cfg,
                                        std::vector<double>* residuals = nullptr) {
    constexpr std::size_t kAndersonMemory = 5;
    const std::size_t dim = n * k + k * k + n * k;
    std::vector<double> x(dim, 0.0);
    std::vector<std::vector<double>> dX, dF;
    std::vector<double> x_prev, f_prev;

    MultiSkResult res;
    res.q_tensor = DenseTensor3(k, n, k);

    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        std::vector<double> gx = x;
        multi_sk_sweep(logK, n, k, gx);
        std::vector<double> f(dim);
        for (std::size_t i = 0; i < dim; ++i) f[i] = gx[i] - x[i];

        if (!x_prev.empty()) {
            std::vector<double> dx(dim), df(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                dx[i] = x[i] - x_prev[i];
                df[i] = f[i] - f_prev[i];
            }
            dX.push_back(std::move(dx));
            dF.push_back(std::move(df));
            if (dX.size() > kAndersonMemory) {
                dX.erase(dX.begin());
                dF.erase(dF.begin());
            }
        }
        x_prev = x;
        f_prev = f;

        if (dX.empty()) {
            x = std::move(gx);
        } else {
            std::vector<double> gamma = anderson_coefficients(dF, f);
            std::vector<double> xn(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                double corr = 0.0;
                for (std::size_t a = 0; a < gamma.size(); ++a) {
                    corr += gamma[a] * (dX[a][i] + dF[a][i]);
                }
                xn[i] = x[i] + f[i] - corr;
            }
            bool finite = true;
            for (double v : xn) {
                if (!std::isfinite(v)) {
                    finite = false;
                    break;
                }
            }
            x = finite ? std::move(xn) : std::move(gx);
        }

        res.report.iterations_used = it + 1;
        multi_sk_fill_tensor(logK, n, k, x, res.q_tensor);
        res.report.final_violation = multi_sk_violation(res.q_tensor);
        if (residuals) residuals->push_back(res.report.final_violation);
        if (res.report.final_violation <= cfg.tol) {
            res.report.converged = true;
            break;
        }
    }
    res.q = extract_assignment(res.q_tensor, cfg.k_prime);
    return res;
}

}  // namespace detail

// Multi-Assignment Sinkhorn-Knopp. Scales exp(S'/eps) with three factor
// families (row i x channel, column j x channel, row i x column j) so that
// per-channel rows sum to 1, per-channel columns sum to N/K and depth fibers
// sum to 1. Q is the depth-wise sum of the first K' channels.
inline MultiSkResult multi_sinkhorn(const DenseMatrix& S, const SolverConfig& cfg,
                                    std::vector<double>* residuals = nullptr) {
    const std::size_t n = S.rows();
    const std::size_t k = S.cols();
    cfg.validate(k);

    if (cfg.k_prime == k) {
        // Every channel is selected: the depth constraint alone forces Q to be
        // the all-ones matrix, and the uniform tensor satisfies all three
        // families exactly.
        MultiSkResult res;
        res.q_tensor = DenseTensor3(k, n, k, 1.0 / static_cast<double>(k));
        res.q = DenseMatrix(n, k, 1.0);
        res.report.converged = true;
        return res;
    }

    DenseTensor3 Sp = build_similarity_tensor(S, cfg);
    double smax = *std::max_element(Sp.data().begin(), Sp.data().end());
    std::vector<double> logK(Sp.size());
    for (std::size_t idx = 0; idx < Sp.size(); ++idx) {
        logK[idx] = (Sp.data()[idx] - smax) / cfg.epsilon;
    }

    return detail::multi_sinkhorn_log(logK, n, k, cfg, residuals);
}

}  // namespace msk
