#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "msk/losses.hpp"
#include "msk/matrix.hpp"
#include "msk/sinkhorn.hpp"

namespace msk {

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticDatasetSpec {
    std::size_t n_samples = 2048;
    std::array<std::size_t, 3> d_input = {16, 16, 16};  // text, video, audio
    std::size_t n_shared_concepts = 8;
    std::size_t n_private_concepts = 4;  // per modality
    double private_scale = 0.5;          // strength of the private offset
    double noise_sigma = 0.25;
    double misalignment_rate = 0.15;  // fraction with perturbed cross-modal pairing
    std::uint64_t seed = 0;

    void validate() const {
        if (n_shared_concepts < 1) {
            throw std::invalid_argument("SyntheticDatasetSpec: n_shared_concepts must be >= 1");
        }
        if (misalignment_rate < 0.0 || misalignment_rate >= 1.0) {
            throw std::invalid_argument("SyntheticDatasetSpec: misalignment_rate must be in [0,1)");
        }
    }
};

struct SyntheticDataset {
    std::array<DenseMatrix, 3> features;  // N x d_m, unit rows
    std::vector<std::size_t> labels;      // shared concept id per sample (text view)
    std::vector<bool> misaligned;
};

namespace detail {

inline void normalize_row(DenseMatrix& m, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * m(i, j);
    double n = std::sqrt(s);
    if (n > 0.0) {
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) /= n;
    }
}

}  // namespace detail

// Each sample mixes a shared concept prototype (common to all modalities), a
// modality-private concept offset and Gaussian noise. Misaligned samples get
// their video/audio concept resampled so the cross-modal pairing is wrong.
inline SyntheticDataset generate_synthetic(const SyntheticDatasetSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // concept prototypes per modality: shared concepts map to per-modality
    // prototype vectors so modalities live in their own feature spaces
    std::array<std::vector<std::vector<double>>, 3> shared_proto;
    std::array<std::vector<std::vector<double>>, 3> private_proto;
    for (std::size_t m = 0; m < 3; ++m) {
        shared_proto[m].resize(spec.n_shared_concepts, std::vector<double>(spec.d_input[m]));
        for (auto& p : shared_proto[m]) {
            for (double& v : p) v = gauss(rng);
        }
        private_proto[m].resize(std::max<std::size_t>(spec.n_private_concepts, 1),
                                std::vector<double>(spec.d_input[m], 0.0));
        if (spec.n_private_concepts > 0) {
            for (auto& p : private_proto[m]) {
                for (double& v : p) v = gauss(rng);
            }
        }
    }

    SyntheticDataset data;
    data.labels.resize(spec.n_samples);
    data.misaligned.assign(spec.n_samples, false);
    for (std::size_t m = 0; m < 3; ++m) {
        data.features[m] = DenseMatrix(spec.n_samples, spec.d_input[m]);
    }
    std::uniform_int_distribution<std::size_t> pick_concept(0, spec.n_shared_concepts - 1);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        std::size_t concept_id = pick_concept(rng);
        data.labels[i] = concept_id;
        bool mis = unif(rng) < spec.misalignment_rate;
        data.misaligned[i] = mis;
        for (std::size_t m = 0; m < 3; ++m) {
            std::size_t cid = concept_id;
            if (mis && m > 0) {
                cid = pick_concept(rng);  // wrong partner for video/audio
            }
            std::size_t pid = 0;
            if (spec.n_private_concepts > 0) {
                pid = std::uniform_int_distribution<std::size_t>(
                    0, spec.n_private_concepts - 1)(rng);
            }
            for (std::size_t j = 0; j < spec.d_input[m]; ++j) {
                double v = shared_proto[m][cid][j];
                if (spec.n_private_concepts > 0) {
                    v += spec.private_scale * private_proto[m][pid][j];
                }
                v += spec.noise_sigma * gauss(rng);
                data.features[m](i, j) = v;
            }
            detail::normalize_row(data.features[m], i);
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Projection head: gated linear unit followed by unit normalization
// ---------------------------------------------------------------------------

struct ProjectionHead {
    DenseMatrix w1;           // d_in x d_out
    std::vector<double> b1;   // d_out
    DenseMatrix w2;           // d_out x d_out (gate)
    std::vector<double> b2;   // d_out

    static ProjectionHead init(std::size_t d_in, std::size_t d_out, std::mt19937_64& rng) {
        ProjectionHead h;
        h.w1 = DenseMatrix(d_in, d_out);
        h.w2 = DenseMatrix(d_out, d_out);
        h.b1.assign(d_out, 0.0);
        h.b2.assign(d_out, 0.0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        double s1 = 1.0 / std::sqrt(static_cast<double>(d_in));
        double s2 = 1.0 / std::sqrt(static_cast<double>(d_out));
        for (double& v : h.w1.data()) v = s1 * gauss(rng);
        for (double& v : h.w2.data()) v = s2 * gauss(rng);
        return h;
    }

    struct Cache {
        DenseMatrix h;       // pre-gate linear output
        DenseMatrix g;       // gate activations
        DenseMatrix o;       // h * g before normalization
        std::vector<double> o_norm;
        DenseMatrix y;       // unit-normalized output
    };

    Cache forward(const DenseMatrix& x) const {
        const std::size_t n = x.rows();
        const std::size_t din = w1.rows();
        const std::size_t dout = w1.cols();
        if (x.cols() != din) {
            throw std::invalid_argument("ProjectionHead: input dimension mismatch");
        }
        Cache c;
        c.h = DenseMatrix(n, dout);
        c.g = DenseMatrix(n, dout);
        c.o = DenseMatrix(n, dout);
        c.y = DenseMatrix(n, dout);
        c.o_norm.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < dout; ++j) {
                double s = b1[j];
                for (std::size_t k = 0; k < din; ++k) s += x(i, k) * w1(k, j);
                c.h(i, j) = s;
            }
            for (std::size_t j = 0; j < dout; ++j) {
                double u = b2[j];
                for (std::size_t k = 0; k < dout; ++k) u += c.h(i, k) * w2(k, j);
                c.g(i, j) = 1.0 / (1.0 + std::exp(-u));
                c.o(i, j) = c.h(i, j) * c.g(i, j);
            }
            double nr = 0.0;
            for (std::size_t j = 0; j < dout; ++j) nr += c.o(i, j) * c.o(i, j);
            nr = std::sqrt(nr);
            if (nr == 0.0) nr = 1e-12;
            c.o_norm[i] = nr;
            for (std::size_t j = 0; j < dout; ++j) c.y(i, j) = c.o(i, j) / nr;
        }
        return c;
    }

    struct Grads {
        DenseMatrix w1;
        std::vector<double> b1;
        DenseMatrix w2;
        std::vector<double> b2;
    };

    // Backprop dL/dy into parameter gradients.
    Grads backward(const DenseMatrix& x, const Cache& c, const DenseMatrix& dy) const {
        const std::size_t n = x.rows();
        const std::size_t din = w1.rows();
        const std::size_t dout = w1.cols();
        Grads g;
        g.w1 = DenseMatrix(din, dout);
        g.w2 = DenseMatrix(dout, dout);
        g.b1.assign(dout, 0.0);
        g.b2.assign(dout, 0.0);
        std::vector<double> d_o(dout), d_h(dout), d_u(dout);
        for (std::size_t i = 0; i < n; ++i) {
            // through normalization: d_o = (dy - (dy . y) y) / |o|
            double proj = 0.0;
            for (std::size_t j = 0; j < dout; ++j) proj += dy(i, j) * c.y(i, j);
            for (std::size_t j = 0; j < dout; ++j) {
                d_o[j] = (dy(i, j) - proj * c.y(i, j)) / c.o_norm[i];
            }
            // through the gate
            for (std::size_t j = 0; j < dout; ++j) {
                double gj = c.g(i, j);
                d_h[j] = d_o[j] * gj;
                d_u[j] = d_o[j] * c.h(i, j) * gj * (1.0 - gj);
            }
            for (std::size_t k = 0; k < dout; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < dout; ++j) {
                    g.w2(k, j) += c.h(i, k) * d_u[j];
                    acc += w2(k, j) * d_u[j];
                }
                d_h[k] += acc;
            }
            for (std::size_t j = 0; j < dout; ++j) {
                g.b2[j] += d_u[j];
                g.b1[j] += d_h[j];
            }
            for (std::size_t k = 0; k < din; ++k) {
                for (std::size_t j = 0; j < dout; ++j) {
                    g.w1(k, j) += x(i, k) * d_h[j];
                }
            }
        }
        return g;
    }

    void apply(const Grads& g, double lr) {
        for (std::size_t idx = 0; idx < w1.size(); ++idx) w1.data()[idx] -= lr * g.w1.data()[idx];
        for (std::size_t idx = 0; idx < w2.size(); ++idx) w2.data()[idx] -= lr * g.w2.data()[idx];
        for (std::size_t j = 0; j < b1.size(); ++j) b1[j] -= lr * g.b1[j];
        for (std::size_t j = 0; j < b2.size(); ++j) b2[j] -= lr * g.b2[j];
    }
};

// ---------------------------------------------------------------------------
// Memory bank
// ---------------------------------------------------------------------------

// FIFO ring of recent embeddings, per modality, for both spaces.
class MemoryBank {
public:
    explicit MemoryBank(std::size_t capacity = 5500) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    std::size_t size(std::size_t modality) const { return joint_[modality].size(); }

    void push(std::size_t modality, const std::vector<double>& input_row,
              const std::vector<double>& joint_row) {
        input_[modality].push_back(input_row);
        joint_[modality].push_back(joint_row);
        while (input_[modality].size() > capacity_) {
            input_[modality].pop_front();
            joint_[modality].pop_front();
        }
    }

    // Bank rows stacked on top of the batch rows; batch occupies the tail.
    DenseMatrix extended(std::size_t modality, Space space, const DenseMatrix& batch) const {
        const auto& store = space == Space::input ? input_[modality] : joint_[modality];
        DenseMatrix out(store.size() + batch.rows(), batch.cols());
        std::size_t r = 0;
        for (const auto& row : store) {
            if (row.size() != batch.cols()) {
                throw std::invalid_argument("MemoryBank: stored row dimension mismatch");
            }
            for (std::size_t j = 0; j < batch.cols(); ++j) out(r, j) = row[j];
            ++r;
        }
        for (std::size_t i = 0; i < batch.rows(); ++i, ++r) {
            for (std::size_t j = 0; j < batch.cols(); ++j) out(r, j) = batch(i, j);
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::array<std::deque<std::vector<double>>, 3> input_;
    std::array<std::deque<std::vector<double>>, 3> joint_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct RetrievalMetrics {
    double r_at_1 = 0.0;
    double r_at_5 = 0.0;
    double r_at_10 = 0.0;
    double med_r = 0.0;
    double mean_r = 0.0;
};

// Rank of the index-aligned gallery item for each query, by descending dot
// product; ties resolve by ascending gallery index.
inline std::vector<std::size_t> retrieval_ranks(const DenseMatrix& query,
                                                const DenseMatrix& gallery) {
    if (query.rows() != gallery.rows() || query.cols() != gallery.cols()) {
        throw std::invalid_argument("retrieval_ranks: batch mismatch");
    }
    const std::size_t n = query.rows();
    if (n == 0) {
        throw std::invalid_argument("retrieval_ranks: empty batch");
    }
    std::vector<std::size_t> ranks(n);
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < query.cols(); ++c) s += query(i, c) * gallery(j, c);
            score[j] = s;
        }
        std::size_t rank = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (score[j] > score[i] || (score[j] == score[i] && j < i)) ++rank;
        }
        ranks[i] = rank;
    }
    return ranks;
}

inline RetrievalMetrics metrics_from_ranks(std::vector<std::size_t> ranks) {
    RetrievalMetrics m;
    const std::size_t n = ranks.size();
    double sum = 0.0;
    for (std::size_t r : ranks) {
        if (r <= 1) m.r_at_1 += 1.0;
        if (r <= 5) m.r_at_5 += 1.0;
        if (r <= 10) m.r_at_10 += 1.0;
        sum += static_cast<double>(r);
    }
    m.r_at_1 /= static_cast<double>(n);
    m.r_at_5 /= static_cast<double>(n);
    m.r_at_10 /= static_cast<double>(n);
    m.mean_r = sum / static_cast<double>(n);
    std::sort(ranks.begin(), ranks.end());
    if (n % 2 == 1) {
        m.med_r = static_cast<double>(ranks[n / 2]);
    } else {
        m.med_r = 0.5 * static_cast<double>(ranks[n / 2 - 1] + ranks[n / 2]);
    }
    return m;
}

inline RetrievalMetrics retrieval_eval(const DenseMatrix& query, const DenseMatrix& gallery) {
    return metrics_from_ranks(retrieval_ranks(query, gallery));
}

// Caption-averaged full-video retrieval: per caption the video score is the
// max over that video's clips; a video query averages its captions' score
// vectors and ranks videos by the result.
inline RetrievalMetrics full_video_retrieval_eval(const DenseMatrix& clip_similarities,
                                                  const std::vector<std::size_t>& clip_to_video,
                                                  const std::vector<std::size_t>& caption_to_video) {
    const std::size_t n_captions = clip_similarities.rows();
    const std::size_t n_clips = clip_similarities.cols();
    if (clip_to_video.size() != n_clips || caption_to_video.size() != n_captions) {
        throw std::invalid_argument("full_video_retrieval_eval: map size mismatch");
    }
    std::size_t n_videos = 0;
    for (std::size_t v : clip_to_video) n_videos = std::max(n_videos, v + 1);
    for (std::size_t v : caption_to_video) {
        if (v >= n_videos) {
            throw std::invalid_argument("full_video_retrieval_eval: caption maps to unknown video");
        }
    }
    std::vector<std::size_t> clips_per_video(n_videos, 0);
    for (std::size_t v : clip_to_video) ++clips_per_video[v];
    for (std::size_t v = 0; v < n_videos; ++v) {
        if (clips_per_video[v] == 0) {
            throw std::invalid_argument("full_video_retrieval_eval: video without clips");
        }
    }
    // caption x video score: max over the video's clips
    DenseMatrix cap_video(n_captions, n_videos, std::numeric_limits<double>::lowest());
    for (std::size_t c = 0; c < n_captions; ++c) {
        for (std::size_t j = 0; j < n_clips; ++j) {
            std::size_t v = clip_to_video[j];
            cap_video(c, v) = std::max(cap_video(c, v), clip_similarities(c, j));
        }
    }
    // average caption vectors per query video, then rank
    std::vector<std::size_t> ranks;
    for (std::size_t v = 0; v < n_videos; ++v) {
        std::vector<double> avg(n_videos, 0.0);
        std::size_t count = 0;
        for (std::size_t c = 0; c < n_captions; ++c) {
            if (caption_to_video[c] != v) continue;
            for (std::size_t w = 0; w < n_videos; ++w) avg[w] += cap_video(c, w);
            ++count;
        }
        if (count == 0) continue;  // video with no captions is not a query
        for (double& x : avg) x /= static_cast<double>(count);
        std::size_t rank = 1;
        for (std::size_t w = 0; w < n_videos; ++w) {
            if (w == v) continue;
            if (avg[w] > avg[v] || (avg[w] == avg[v] && w < v)) ++rank;
        }
        ranks.push_back(rank);
    }
    if (ranks.empty()) {
        throw std::invalid_argument("full_video_retrieval_eval: no video has captions");
    }
    return metrics_from_ranks(std::move(ranks));
}

// Pearson correlation between the upper-triangular pairwise-cosine entries of
// the two batches. 1.0 whenever the joint batch is a scaled rotation of the
// input batch.
inline double structure_preservation_score(const DenseMatrix& input_batch,
                                           const DenseMatrix& joint_batch) {
    if (input_batch.rows() != joint_batch.rows()) {
        throw std::invalid_argument("structure_preservation_score: batch size mismatch");
    }
    const std::size_t n = input_batch.rows();
    if (n < 3) {
        throw std::invalid_argument("structure_preservation_score: need at least 3 samples");
    }
    auto upper_cosines = [](const DenseMatrix& m) {
        const std::size_t n = m.rows();
        std::vector<double> norms(n);
        for (std::size_t i = 0; i < n; ++i) norms[i] = detail::row_norm(m, i);
        std::vector<double> out;
        out.reserve(n * (n - 1) / 2);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double d = 0.0;
                for (std::size_t c = 0; c < m.cols(); ++c) d += m(i, c) * m(j, c);
                out.push_back(d / (norms[i] * norms[j]));
            }
        }
        return out;
    };
    std::vector<double> a = upper_cosines(input_batch);
    std::vector<double> b = upper_cosines(joint_batch);
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        cov += (a[i] - ma) * (b[i] - mb);
    }
    // treat pure rounding residue on a constant similarity matrix as zero
    const double eps_var = 1e-20 * static_cast<double>(a.size());
    if (va <= eps_var || vb <= eps_var) {
        throw std::domain_error("structure_preservation_score: constant similarity matrix");
    }
    return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Ablation { full, no_sspc, no_cm_sspc, modified_sk };

inline const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_sspc: return "no_sspc";
        case Ablation::no_cm_sspc: return "no_cm_sspc";
        case Ablation::modified_sk: return "modified_sk";
    }
    return "?";
}

namespace detail {

// Desk-scale loss defaults. tau follows the similarity scale the desk-scale
// solver epsilon is tuned against: exp(cos/tau) at tau=0.1 spans [e^-10, e^10]
// and pushes every solve into the slow sublinear log-domain regime, so the
// training loop runs at tau=1.0 where the scaling iteration converges
// geometrically. The LossConfig type itself keeps tau=0.1 as its default.
// lambda_sspc is raised so the consistency term can hold its own against the
// contrastive gradient at the desk-scale learning rate.
inline LossConfig desk_scale_loss() {
    LossConfig l;
    l.tau = 1.0;
    l.lambda_sspc = 3.0;
    return l;
}

}  // namespace detail

struct TrainConfig {
    // Desk-scale dataset: private concepts carry most of the within-modality
    // similarity variance (private_scale 1.5 vs unit shared prototypes), so a
    // contrastive-only run visibly discards structure and the consistency term
    // has something to preserve.
    SyntheticDatasetSpec dataset = {.n_samples = 640,
                                    .private_scale = 1.5,
                                    .noise_sigma = 0.1,
                                    .misalignment_rate = 0.1};
    std::size_t batch_size = 32;
    std::size_t epochs = 12;
    double learning_rate = 2.0;  // SGD step on unit-normalized embeddings
    double lr_decay = 1.0;       // exponential, per epoch
    std::size_t k = 16;          // anchors
    std::size_t k_prime = 8;     // selected anchors
    std::size_t d_joint = 8;     // compressive: the heads must choose what to keep
    std::size_t bank_capacity = 64;
    std::uint64_t seed = 0;
    SolverConfig solver = {0.15, 200, 1e-6, 0.25, 8};
    LossConfig loss = detail::desk_scale_loss();

    void validate() const {
        dataset.validate();
        if (batch_size == 0 || epochs == 0 || learning_rate < 0.0 || lr_decay <= 0.0) {
            throw std::invalid_argument("TrainConfig: invalid scalar");
        }
        if (k_prime > k || k_prime == 0) {
            throw std::invalid_argument("TrainConfig: require 1 <= k_prime <= k");
        }
        if (batch_size > dataset.n_samples) {
            throw std::invalid_argument("TrainConfig: batch_size exceeds n_samples");
        }
    }
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss_total = 0.0;
    double loss_sspc = 0.0;
    double loss_nce = 0.0;
    double structure_score = 0.0;
    double r_at_1 = 0.0;
    double r_at_5 = 0.0;
    double med_r = 0.0;
    double mean_r = 0.0;
};

struct TrainResult {
    std::array<ProjectionHead, 3> heads;
    std::array<DenseMatrix, 3> anchors_input;
    std::array<DenseMatrix, 3> anchors_joint;
    std::vector<EpochMetrics> log;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> held_out_idx;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline DenseMatrix take_rows(const DenseMatrix& m, const std::vector<std::size_t>& idx) {
    DenseMatrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < m.cols(); ++j) out(r, j) = m(idx[r], j);
    }
    return out;
}

inline DenseMatrix tail_rows(const DenseMatrix& m, std::size_t count) {
    DenseMatrix out(count, m.cols());
    std::size_t start = m.rows() - count;
    for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t j = 0; j < m.cols(); ++j) out(r, j) = m(start + r, j);
    }
    return out;
}

inline DenseMatrix random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = gauss(rng);
    for (std::size_t i = 0; i < rows; ++i) normalize_row(m, i);
    return m;
}

// Targets for the training path: Multi-SK (or the modified 2D baseline) over
// the bank-extended similarity, sliced back to the current batch rows. The
// modified baseline does not bound cells by 1, so its targets are clamped
// before entering BCE.
inline DenseMatrix training_targets(const DenseMatrix& extended_logits, std::size_t batch_rows,
                                    const SolverConfig& solver, bool use_modified) {
    DenseMatrix s(extended_logits.rows(), extended_logits.cols());
    for (std::size_t idx = 0; idx < s.size(); ++idx) {
        s.data()[idx] = std::exp(extended_logits.data()[idx]);
    }
    DenseMatrix q = use_modified ? modified_sinkhorn(s, solver).first : multi_sinkhorn(s, solver).q;
    DenseMatrix out = tail_rows(q, batch_rows);
    if (use_modified) {
        for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

}  // namespace detail

// Single-threaded deterministic training loop. Anchor assignments are
// computed over memory bank + current batch; the loss only touches the
// current batch rows. Gradients flow into the projection heads and all six
// anchor sets; Multi-SK targets are constants.
inline TrainResult train(const SyntheticDataset& data, const TrainConfig& cfg, Ablation ablation) {
    cfg.validate();
    const std::size_t n_total = data.features[0].rows();
    std::mt19937_64 rng(cfg.seed);

    // 80/20 split, fixed by seed
    std::vector<std::size_t> perm(n_total);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::size_t n_held = n_total / 5;
    std::size_t n_train = n_total - n_held;

    TrainResult res;
    res.train_idx.assign(perm.begin(), perm.begin() + n_train);
    res.held_out_idx.assign(perm.begin() + n_train, perm.end());

    for (std::size_t m = 0; m < 3; ++m) {
        res.heads[m] = ProjectionHead::init(data.features[m].cols(), cfg.d_joint, rng);
        res.anchors_input[m] = detail::random_unit_rows(cfg.k, data.features[m].cols(), rng);
        res.anchors_joint[m] = detail::random_unit_rows(cfg.k, cfg.d_joint, rng);
    }

    LossConfig loss_cfg = cfg.loss;
    if (ablation == Ablation::no_sspc) {
        loss_cfg.lambda_sspc = 0.0;
    } else if (ablation == Ablation::no_cm_sspc) {
        for (std::size_t m = 0; m < 3; ++m) {
            for (std::size_t n = 0; n < 3; ++n) {
                if (m != n) loss_cfg.pair_weights[m][n] = 0.0;
            }
        }
    }
    const bool use_modified_sk = ablation == Ablation::modified_sk;
    SolverConfig solver = cfg.solver;
    solver.k_prime = cfg.k_prime;

    MemoryBank bank(cfg.bank_capacity);
    std::array<DenseMatrix, 3> held_input, train_input;
    for (std::size_t m = 0; m < 3; ++m) {
        held_input[m] = detail::take_rows(data.features[m], res.held_out_idx);
        train_input[m] = detail::take_rows(data.features[m], res.train_idx);
    }

    const std::size_t n_batches = n_train / cfg.batch_size;
    if (n_batches == 0) {
        throw std::invalid_argument("train: batch_size larger than the training split");
    }

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
        double ep_total = 0.0, ep_sspc = 0.0, ep_nce = 0.0;

        std::vector<std::size_t> order(n_train);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        for (std::size_t b = 0; b < n_batches; ++b) {
            std::vector<std::size_t> batch_idx(order.begin() + b * cfg.batch_size,
                                               order.begin() + (b + 1) * cfg.batch_size);
            std::array<DenseMatrix, 3> x, y;
            std::array<ProjectionHead::Cache, 3> cache;
            for (std::size_t m = 0; m < 3; ++m) {
                x[m] = detail::take_rows(train_input[m], batch_idx);
                cache[m] = res.heads[m].forward(x[m]);
                y[m] = cache[m].y;
            }

            std::array<DenseMatrix, 3> d_joint;
            std::array<DenseMatrix, 3> d_anchor_in, d_anchor_joint;
            for (std::size_t m = 0; m < 3; ++m) {
                d_joint[m] = DenseMatrix(cfg.batch_size, cfg.d_joint);
                d_anchor_in[m] = DenseMatrix(cfg.k, res.anchors_input[m].cols());
                d_anchor_joint[m] = DenseMatrix(cfg.k, cfg.d_joint);
            }

            double loss_sspc = 0.0, loss_nce = 0.0;

            if (loss_cfg.lambda_sspc > 0.0) {
                // input-side logits and bank-extended targets, one per modality
                std::array<DenseMatrix, 3> l_input, t_from_input;
                for (std::size_t m = 0; m < 3; ++m) {
                    l_input[m] =
                        cosine_logits(x[m], res.anchors_input[m], loss_cfg.tau);
                    DenseMatrix ext = bank.extended(m, Space::input, x[m]);
                    DenseMatrix l_ext = cosine_logits(ext, res.anchors_input[m], loss_cfg.tau);
                    t_from_input[m] = detail::training_targets(l_ext, cfg.batch_size, solver,
                                                               use_modified_sk);
                }
                for (std::size_t m = 0; m < 3; ++m) {
                    for (std::size_t n = 0; n < 3; ++n) {
                        double w = loss_cfg.pair_weights[m][n];
                        if (w == 0.0) continue;
                        DenseMatrix l_joint =
                            cosine_logits(y[n], res.anchors_joint[m], loss_cfg.tau);
                        DenseMatrix ext = bank.extended(n, Space::joint, y[n]);
                        DenseMatrix l_ext =
                            cosine_logits(ext, res.anchors_joint[m], loss_cfg.tau);
                        DenseMatrix t_joint = detail::training_targets(l_ext, cfg.batch_size,
                                                                       solver, use_modified_sk);
                        loss_sspc += w * (loss_cfg.alpha * bce_with_logits(l_input[m], t_joint) +
                                          loss_cfg.beta * bce_with_logits(l_joint,
                                                                          t_from_input[m]));
                        DenseMatrix g1 = bce_with_logits_grad(l_input[m], t_joint);
                        for (double& v : g1.data()) v *= loss_cfg.lambda_sspc * w * loss_cfg.alpha;
                        detail::cosine_logits_backward(x[m], res.anchors_input[m], loss_cfg.tau,
                                                       g1, nullptr, &d_anchor_in[m]);
                        DenseMatrix g2 = bce_with_logits_grad(l_joint, t_from_input[m]);
                        for (double& v : g2.data()) v *= loss_cfg.lambda_sspc * w * loss_cfg.beta;
                        detail::cosine_logits_backward(y[n], res.anchors_joint[m], loss_cfg.tau,
                                                       g2, &d_joint[n], &d_anchor_joint[m]);
                    }
                }
            }

            if (loss_cfg.lambda_nce > 0.0) {
                struct Pair {
                    std::size_t a, b;
                    double lambda;
                };
                const std::array<Pair, 3> pairs = {{{0, 1, loss_cfg.lambda_tv},
                                                    {0, 2, loss_cfg.lambda_ta},
                                                    {1, 2, loss_cfg.lambda_va}}};
                for (const auto& p : pairs) {
                    if (p.lambda == 0.0) continue;
                    double weight = loss_cfg.lambda_nce * p.lambda;
                    loss_nce += p.lambda * detail::nce_with_grad(y[p.a], y[p.b], loss_cfg.kappa,
                                                                 weight, &d_joint[p.a],
                                                                 &d_joint[p.b]);
                }
            }

            double loss_total =
                loss_cfg.lambda_sspc * loss_sspc + loss_cfg.lambda_nce * loss_nce;
            if (!std::isfinite(loss_total)) {
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      " batch " + std::to_string(b));
            }
            ep_total += loss_total;
            ep_sspc += loss_sspc;
            ep_nce += loss_nce;

            // SGD step
            for (std::size_t m = 0; m < 3; ++m) {
                auto hg = res.heads[m].backward(x[m], cache[m], d_joint[m]);
                res.heads[m].apply(hg, lr);
                for (std::size_t idx = 0; idx < res.anchors_input[m].size(); ++idx) {
                    res.anchors_input[m].data()[idx] -= lr * d_anchor_in[m].data()[idx];
                }
                for (std::size_t idx = 0; idx < res.anchors_joint[m].size(); ++idx) {
                    res.anchors_joint[m].data()[idx] -= lr * d_anchor_joint[m].data()[idx];
                }
            }

            // bank gets the embeddings used in this step
            for (std::size_t m = 0; m < 3; ++m) {
                for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                    std::vector<double> in_row(x[m].cols()), j_row(cfg.d_joint);
                    for (std::size_t c = 0; c < x[m].cols(); ++c) in_row[c] = x[m](i, c);
                    for (std::size_t c = 0; c < cfg.d_joint; ++c) j_row[c] = y[m](i, c);
                    bank.push(m, in_row, j_row);
                }
            }
        }

        // held-out evaluation
        EpochMetrics em;
        em.epoch = epoch;
        em.loss_total = ep_total / static_cast<double>(n_batches);
        em.loss_sspc = ep_sspc / static_cast<double>(n_batches);
        em.loss_nce = ep_nce / static_cast<double>(n_batches);
        std::array<DenseMatrix, 3> held_joint;
        double score = 0.0;
        for (std::size_t m = 0; m < 3; ++m) {
            held_joint[m] = res.heads[m].forward(held_input[m]).y;
            score += structure_preservation_score(held_input[m], held_joint[m]);
        }
        em.structure_score = score / 3.0;
        RetrievalMetrics rm = retrieval_eval(held_joint[0], held_joint[1]);  // text -> video
        em.r_at_1 = rm.r_at_1;
        em.r_at_5 = rm.r_at_5;
        em.med_r = rm.med_r;
        em.mean_r = rm.mean_r;
        res.log.push_back(em);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Ablation suite
// ---------------------------------------------------------------------------

struct AblationEntry {
    Ablation mode = Ablation::full;
    double structure_score = 0.0;
    RetrievalMetrics retrieval;
    std::vector<EpochMetrics> log;
};

struct AblationReport {
    double data_checksum = 0.0;  // sum of all generated features
    std::vector<AblationEntry> entries;
};

// Trains all four variants on the identical dataset and scores them on the
// shared held-out split.
inline AblationReport ablation_suite(const TrainConfig& cfg) {
    cfg.validate();
    SyntheticDataset data = generate_synthetic(cfg.dataset);
    AblationReport report;
    for (std::size_t m = 0; m < 3; ++m) {
        report.data_checksum += std::accumulate(data.features[m].data().begin(),
                                                data.features[m].data().end(), 0.0);
    }
    const std::array<Ablation, 4> modes = {Ablation::full, Ablation::no_sspc,
                                           Ablation::no_cm_sspc, Ablation::modified_sk};
    for (Ablation mode : modes) {
        TrainResult r = train(data, cfg, mode);
        AblationEntry e;
        e.mode = mode;
        const EpochMetrics& last = r.log.back();
        e.structure_score = last.structure_score;
        e.retrieval.r_at_1 = last.r_at_1;
        e.retrieval.r_at_5 = last.r_at_5;
        e.retrieval.med_r = last.med_r;
        e.retrieval.mean_r = last.mean_r;
        e.log = r.log;
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace msk
