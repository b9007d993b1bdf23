#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "msk/matrix.hpp"
#include "msk/sinkhorn.hpp"

namespace msk {

enum class Modality { text = 0, video = 1, audio = 2 };
enum class Space { input = 0, joint = 1 };

struct AnchorSet {
    DenseMatrix vectors;  // K x d
    Modality modality = Modality::text;
    Space space = Space::input;
};

struct EmbeddingBatch {
    DenseMatrix vectors;  // N x d
    Modality modality = Modality::text;
    Space space = Space::input;
};

struct LossConfig {
    double tau = 0.1;    // cosine similarity temperature
    double kappa = 0.1;  // NCE temperature
    double alpha = 1.0;  // weight of the input->joint consistency direction
    double beta = 1.0;   // weight of the joint->input consistency direction
    double lambda_tv = 1.0;
    double lambda_ta = 0.1;
    double lambda_va = 0.1;
    double lambda_sspc = 1.0;
    double lambda_nce = 1.0;
    // pair_weights[m][n] weights the consistency term between input modality m
    // and joint modality n; text-video pairs default to 1.0, the rest to 0.1
    std::array<std::array<double, 3>, 3> pair_weights = {{{0.1, 1.0, 0.1},
                                                          {1.0, 0.1, 0.1},
                                                          {0.1, 0.1, 0.1}}};

    void validate() const {
        if (tau <= 0.0 || kappa <= 0.0) {
            throw std::invalid_argument("LossConfig: temperatures must be > 0");
        }
        if (alpha < 0.0 || beta < 0.0 || lambda_tv < 0.0 || lambda_ta < 0.0 || lambda_va < 0.0 ||
            lambda_sspc < 0.0 || lambda_nce < 0.0) {
            throw std::invalid_argument("LossConfig: weights must be >= 0");
        }
        for (const auto& row : pair_weights) {
            for (double w : row) {
                if (w < 0.0) throw std::invalid_argument("LossConfig: pair weight < 0");
            }
        }
    }
};

namespace detail {

inline double row_norm(const DenseMatrix& m, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * m(i, j);
    double n = std::sqrt(s);
    if (n == 0.0) {
        throw std::invalid_argument("zero-norm vector: cosine similarity undefined");
    }
    return n;
}

}  // namespace detail

// Pre-exponential scaled cosine: a.b / (tau |a| |b|).
inline double scaled_cosine(const std::vector<double>& a, const std::vector<double>& b,
                            double tau) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("scaled_cosine: dimension mismatch");
    }
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        throw std::invalid_argument("scaled_cosine: zero-norm vector");
    }
    return ab / (tau * std::sqrt(aa) * std::sqrt(bb));
}

inline double exp_sim(const std::vector<double>& a, const std::vector<double>& b, double tau) {
    return std::exp(scaled_cosine(a, b, tau));
}

// N x K matrix of scaled cosines between batch rows and anchor rows.
inline DenseMatrix cosine_logits(const DenseMatrix& batch, const DenseMatrix& anchors, double tau) {
    if (batch.cols() != anchors.cols()) {
        throw std::invalid_argument("cosine_logits: dimension mismatch");
    }
    const std::size_t n = batch.rows();
    const std::size_t k = anchors.rows();
    std::vector<double> bn(n), an(k);
    for (std::size_t i = 0; i < n; ++i) bn[i] = detail::row_norm(batch, i);
    for (std::size_t j = 0; j < k; ++j) an[j] = detail::row_norm(anchors, j);
    DenseMatrix L(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < batch.cols(); ++c) d += batch(i, c) * anchors(j, c);
            L(i, j) = d / (tau * bn[i] * an[j]);
        }
    }
    return L;
}

// Mean elementwise binary cross entropy with logits, in the overflow-safe
// max(x,0) - x*t + log1p(exp(-|x|)) form.
inline double bce_with_logits(const DenseMatrix& logits, const DenseMatrix& targets) {
    if (!logits.same_shape(targets)) {
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t idx = 0; idx < logits.size(); ++idx) {
        double x = logits.data()[idx];
        double t = targets.data()[idx];
        if (t < 0.0 || t > 1.0) {
            throw std::invalid_argument("bce_with_logits: target outside [0,1]");
        }
        s += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    return s / static_cast<double>(logits.size());
}

// d(mean BCE)/d(logits) = (sigmoid(x) - t) / count.
inline DenseMatrix bce_with_logits_grad(const DenseMatrix& logits, const DenseMatrix& targets) {
    if (!logits.same_shape(targets)) {
        throw std::invalid_argument("bce_with_logits_grad: shape mismatch");
    }
    DenseMatrix g(logits.rows(), logits.cols());
    const double inv = 1.0 / static_cast<double>(logits.size());
    for (std::size_t idx = 0; idx < logits.size(); ++idx) {
        double x = logits.data()[idx];
        double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        g.data()[idx] = (sig - targets.data()[idx]) * inv;
    }
    return g;
}

// Multi-SK soft targets for a logits matrix. The solver expects a similarity
// matrix, which it exponentiates internally through its Gibbs kernel.
inline DenseMatrix sspc_targets(const DenseMatrix& logits, const SolverConfig& solver) {
    // exp(L) is the positive similarity the assignment is defined on; the
    // solver's kernel exp(S'/eps) makes S = exp(L) the matrix to hand over.
    DenseMatrix s(logits.rows(), logits.cols());
    for (std::size_t idx = 0; idx < logits.size(); ++idx) {
        s.data()[idx] = std::exp(logits.data()[idx]);
    }
    return multi_sinkhorn(s, solver).q;
}

// One SSPC pair term (Eq. form: alpha * g(L_src, M(sim_dst)) +
// beta * g(L_dst, M(sim_src))); Multi-SK targets are constants.
inline double sspc_pair_loss(const EmbeddingBatch& src, const EmbeddingBatch& dst,
                             const AnchorSet& z_src, const AnchorSet& z_dst,
                             const SolverConfig& solver, const LossConfig& cfg) {
    cfg.validate();
    if (src.vectors.rows() != dst.vectors.rows()) {
        throw std::invalid_argument("sspc_pair_loss: batch size mismatch");
    }
    if (z_src.vectors.rows() != z_dst.vectors.rows()) {
        throw std::invalid_argument("sspc_pair_loss: anchor count mismatch");
    }
    DenseMatrix l_src = cosine_logits(src.vectors, z_src.vectors, cfg.tau);
    DenseMatrix l_dst = cosine_logits(dst.vectors, z_dst.vectors, cfg.tau);
    DenseMatrix t_src = sspc_targets(l_dst, solver);
    DenseMatrix t_dst = sspc_targets(l_src, solver);
    return cfg.alpha * bce_with_logits(l_src, t_src) + cfg.beta * bce_with_logits(l_dst, t_dst);
}

// Symmetric InfoNCE over raw dot products: average of the x->y and y->x
// softmax cross entropies with in-batch negatives.
inline double nce_loss(const DenseMatrix& x, const DenseMatrix& y, double kappa) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
        throw std::invalid_argument("nce_loss: batch mismatch");
    }
    if (kappa <= 0.0) {
        throw std::invalid_argument("nce_loss: kappa must be > 0");
    }
    const std::size_t n = x.rows();
    if (n == 0) {
        throw std::invalid_argument("nce_loss: empty batch");
    }
    DenseMatrix A(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < x.cols(); ++c) d += x(i, c) * y(j, c);
            A(i, j) = d / kappa;
        }
    }
    auto direction = [&](bool transpose) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                mx = std::max(mx, transpose ? A(j, i) : A(i, j));
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                denom += std::exp((transpose ? A(j, i) : A(i, j)) - mx);
            }
            total += -(A(i, i) - mx) + std::log(denom);
        }
        return total / static_cast<double>(n);
    };
    return 0.5 * (direction(false) + direction(true));
}

inline double nce_loss(const EmbeddingBatch& x, const EmbeddingBatch& y, double kappa) {
    return nce_loss(x.vectors, y.vectors, kappa);
}

struct MultiModalState {
    // index order: text, video, audio
    std::array<DenseMatrix, 3> input;         // t, v, a
    std::array<DenseMatrix, 3> joint;         // t^, v^, a^
    std::array<DenseMatrix, 3> anchors_input; // z_t, z_v, z_a
    std::array<DenseMatrix, 3> anchors_joint; // z^_t, z^_v, z^_a
};

struct LossBreakdown {
    double total = 0.0;
    double sspc = 0.0;
    double nce = 0.0;
};

struct LossGradients {
    LossBreakdown value;
    std::array<DenseMatrix, 3> d_joint;
    std::array<DenseMatrix, 3> d_anchors_input;
    std::array<DenseMatrix, 3> d_anchors_joint;
};

namespace detail {

// Backprop a gradient G on cosine_logits(X, Z, tau) into dX and/or dZ.
inline void cosine_logits_backward(const DenseMatrix& X, const DenseMatrix& Z, double tau,
                                   const DenseMatrix& G, DenseMatrix* dX, DenseMatrix* dZ) {
    const std::size_t n = X.rows();
    const std::size_t k = Z.rows();
    const std::size_t d = X.cols();
    std::vector<double> xn(n), zn(k);
    for (std::size_t i = 0; i < n; ++i) xn[i] = row_norm(X, i);
    for (std::size_t j = 0; j < k; ++j) zn[j] = row_norm(Z, j);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double g = G(i, j);
            if (g == 0.0) continue;
            double dotxz = 0.0;
            for (std::size_t c = 0; c < d; ++c) dotxz += X(i, c) * Z(j, c);
            double cos = dotxz / (xn[i] * zn[j]);
            // dL/dx = (z_hat - cos * x_hat) / (tau |x|), same with roles swapped
            if (dX) {
                for (std::size_t c = 0; c < d; ++c) {
                    double xh = X(i, c) / xn[i];
                    double zh = Z(j, c) / zn[j];
                    (*dX)(i, c) += g * (zh - cos * xh) / (tau * xn[i]);
                }
            }
            if (dZ) {
                for (std::size_t c = 0; c < d; ++c) {
                    double xh = X(i, c) / xn[i];
                    double zh = Z(j, c) / zn[j];
                    (*dZ)(j, c) += g * (xh - cos * zh) / (tau * zn[j]);
                }
            }
        }
    }
}

// Symmetric InfoNCE with gradients w.r.t. both batches (scaled by `weight`).
inline double nce_with_grad(const DenseMatrix& x, const DenseMatrix& y, double kappa,
                            double weight, DenseMatrix* dx, DenseMatrix* dy) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    DenseMatrix A(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += x(i, c) * y(j, c);
            A(i, j) = s / kappa;
        }
    }
    double loss = 0.0;
    DenseMatrix dA(n, n);
    // x -> y direction: rows of A
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, A(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(A(i, j) - mx);
        loss += 0.5 / n * (-(A(i, i) - mx) + std::log(denom));
        for (std::size_t j = 0; j < n; ++j) {
            double p = std::exp(A(i, j) - mx) / denom;
            dA(i, j) += 0.5 / n * (p - (i == j ? 1.0 : 0.0));
        }
    }
    // y -> x direction: columns of A
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, A(j, i));
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(A(j, i) - mx);
        loss += 0.5 / n * (-(A(i, i) - mx) + std::log(denom));
        for (std::size_t j = 0; j < n; ++j) {
            double p = std::exp(A(j, i) - mx) / denom;
            dA(j, i) += 0.5 / n * (p - (i == j ? 1.0 : 0.0));
        }
    }
    if (dx || dy) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double g = weight * dA(i, j) / kappa;
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    if (dx) (*dx)(i, c) += g * y(j, c);
                    if (dy) (*dy)(j, c) += g * x(i, c);
                }
            }
        }
    }
    return loss;
}

}  // namespace detail

// Multi-SK soft targets for every active SSPC term. input_side[m] is the
// target derived from the input-space logits of modality m; joint_side[m][n]
// the one derived from joint modality n scored against the joint anchors of
// modality m. Only entries with a nonzero pair weight are populated.
struct SspcTargets {
    std::array<DenseMatrix, 3> input_side;
    std::array<std::array<DenseMatrix, 3>, 3> joint_side;
};

inline SspcTargets compute_sspc_targets(const MultiModalState& state, const SolverConfig& solver,
                                        const LossConfig& cfg) {
    SspcTargets t;
    for (std::size_t m = 0; m < 3; ++m) {
        bool any = false;
        for (std::size_t n = 0; n < 3; ++n) any = any || cfg.pair_weights[m][n] > 0.0;
        if (any) {
            t.input_side[m] = sspc_targets(
                cosine_logits(state.input[m], state.anchors_input[m], cfg.tau), solver);
        }
        for (std::size_t n = 0; n < 3; ++n) {
            if (cfg.pair_weights[m][n] > 0.0) {
                t.joint_side[m][n] = sspc_targets(
                    cosine_logits(state.joint[n], state.anchors_joint[m], cfg.tau), solver);
            }
        }
    }
    return t;
}

// Objective and gradients with the SSPC targets held fixed. This is the
// stop-gradient semantics: the same function under finite differences
// reproduces the analytic gradients.
inline LossGradients loss_eval_fixed_targets(const MultiModalState& state,
                                             const SspcTargets& targets, const LossConfig& cfg,
                                             bool want_grads = true) {
    cfg.validate();
    LossGradients out;
    for (std::size_t m = 0; m < 3; ++m) {
        out.d_joint[m] = DenseMatrix(state.joint[m].rows(), state.joint[m].cols());
        out.d_anchors_input[m] =
            DenseMatrix(state.anchors_input[m].rows(), state.anchors_input[m].cols());
        out.d_anchors_joint[m] =
            DenseMatrix(state.anchors_joint[m].rows(), state.anchors_joint[m].cols());
    }

    // SSPC: sum over input modality m and joint modality n of
    //   alpha * g(L_m, M(exp L_{n,m})) + beta * g(L_{n,m}, M(exp L_m))
    // where L_m = cos(input_m, z_m)/tau and L_{n,m} = cos(joint_n, z^_m)/tau.
    if (cfg.lambda_sspc > 0.0) {
        std::array<DenseMatrix, 3> l_input;
        for (std::size_t m = 0; m < 3; ++m) {
            l_input[m] = cosine_logits(state.input[m], state.anchors_input[m], cfg.tau);
        }
        for (std::size_t m = 0; m < 3; ++m) {
            for (std::size_t n = 0; n < 3; ++n) {
                double w = cfg.pair_weights[m][n];
                if (w == 0.0) continue;
                DenseMatrix l_joint = cosine_logits(state.joint[n], state.anchors_joint[m], cfg.tau);
                const DenseMatrix& t_joint = targets.joint_side[m][n];
                const DenseMatrix& t_input = targets.input_side[m];
                double term = cfg.alpha * bce_with_logits(l_input[m], t_joint) +
                              cfg.beta * bce_with_logits(l_joint, t_input);
                out.value.sspc += w * term;
                if (want_grads) {
                    DenseMatrix g1 = bce_with_logits_grad(l_input[m], t_joint);
                    for (double& v : g1.data()) v *= cfg.lambda_sspc * w * cfg.alpha;
                    detail::cosine_logits_backward(state.input[m], state.anchors_input[m], cfg.tau,
                                                   g1, nullptr, &out.d_anchors_input[m]);
                    DenseMatrix g2 = bce_with_logits_grad(l_joint, t_input);
                    for (double& v : g2.data()) v *= cfg.lambda_sspc * w * cfg.beta;
                    detail::cosine_logits_backward(state.joint[n], state.anchors_joint[m], cfg.tau,
                                                   g2, &out.d_joint[n], &out.d_anchors_joint[m]);
                }
            }
        }
    }

    // NCE over joint-space pairs (t,v), (t,a), (v,a).
    if (cfg.lambda_nce > 0.0) {
        struct Pair {
            std::size_t a, b;
            double lambda;
        };
        const std::array<Pair, 3> pairs = {{{0, 1, cfg.lambda_tv},
                                            {0, 2, cfg.lambda_ta},
                                            {1, 2, cfg.lambda_va}}};
        for (const auto& p : pairs) {
            if (p.lambda == 0.0) continue;
            double weight = cfg.lambda_nce * p.lambda;
            double l = detail::nce_with_grad(state.joint[p.a], state.joint[p.b], cfg.kappa,
                                             want_grads ? weight : 0.0,
                                             want_grads ? &out.d_joint[p.a] : nullptr,
                                             want_grads ? &out.d_joint[p.b] : nullptr);
            out.value.nce += p.lambda * l;
        }
    }

    out.value.total = cfg.lambda_sspc * out.value.sspc + cfg.lambda_nce * out.value.nce;
    return out;
}

// Full objective with analytic gradients w.r.t. the joint-space embeddings and
// every anchor set. Multi-SK targets are constants (stop-gradient); input-space
// embeddings are frozen backbone features and receive no gradient.
inline LossGradients loss_gradients(const MultiModalState& state, const SolverConfig& solver,
                                    const LossConfig& cfg, bool want_grads = true) {
    cfg.validate();
    SspcTargets targets;
    if (cfg.lambda_sspc > 0.0) {
        targets = compute_sspc_targets(state, solver, cfg);
    }
    return loss_eval_fixed_targets(state, targets, cfg, want_grads);
}

// Weighted 9-term cross-modal SSPC sum (value only).
inline double sspc_total(const MultiModalState& state, const SolverConfig& solver,
                         const LossConfig& cfg) {
    // the 9-term sum itself is not scaled by lambda_sspc, so force it on to
    // keep the loop from short-circuiting
    LossConfig c = cfg;
    c.lambda_sspc = 1.0;
    return loss_gradients(state, solver, c, false).value.sspc;
}

inline double total_loss(const MultiModalState& state, const SolverConfig& solver,
                         const LossConfig& cfg) {
    return loss_gradients(state, solver, cfg, false).value.total;
}

}  // namespace msk
