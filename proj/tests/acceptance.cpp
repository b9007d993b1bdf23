// Acceptance harness: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria 9 and 11 exercise the CLI binary named by the
// MSK_CLI environment variable.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "msk/exact_oracle.hpp"
#include "msk/losses.hpp"
#include "msk/matrix_io.hpp"
#include "msk/sinkhorn.hpp"
#include "msk/trainer.hpp"

namespace fs = std::filesystem;
using namespace msk;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %2d: %s  (%s)\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

double tensor_violation(const DenseTensor3& q) {
    return detail::multi_sk_violation(q);
}

DenseMatrix random_uniform(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DenseMatrix m(n, k);
    for (double& v : m.data()) v = u(rng);
    return m;
}

struct CliRun {
    int exit_code = -1;
    std::string out;
};

CliRun run_cli(const std::string& args) {
    CliRun r;
    const char* cli = std::getenv("MSK_CLI");
    if (!cli) {
        r.out = "MSK_CLI not set";
        return r;
    }
    std::string cmd = std::string(cli) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) {
        r.out.append(buf, n);
    }
    int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// crude but sufficient: extract a numeric field from a one-line JSON summary
double json_number(const std::string& text, const std::string& key) {
    auto pos = text.rfind("\"" + key + "\":");
    if (pos == std::string::npos) return std::nan("");
    return std::strtod(text.c_str() + pos + key.size() + 3, nullptr);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --------------------------------------------------------------------------

void criterion_1_constraints() {
    auto t0 = clock_type::now();
    std::mt19937_64 rng(101);
    std::size_t failed = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 4 + rng() % 61;   // 4..64
        std::size_t k = 2 + rng() % 15;   // 2..16
        SolverConfig cfg;
        cfg.epsilon = 0.05;
        cfg.k_prime = 1 + rng() % k;
        cfg.max_iters = 1000;
        cfg.tol = 1e-6;
        DenseMatrix s = random_uniform(n, k, rng);
        MultiSkResult res = multi_sinkhorn(s, cfg);
        double viol = tensor_violation(res.q_tensor);
        worst = std::max(worst, viol);
        if (!res.report.converged || viol > 1e-6) ++failed;
    }
    double secs = seconds_since(t0);
    char d[160];
    std::snprintf(d, sizeof(d), "200 instances, %zu failed, worst violation %.2e, %.1fs", failed,
                  worst, secs);
    report(1, failed == 0 && secs < 30.0, d);
}

void criterion_2_oracle() {
    auto t0 = clock_type::now();
    std::mt19937_64 rng(202);
    int good = 0;
    double worst_ratio = 1.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = (trial % 2 == 0) ? 4 : 6;
        SolverConfig cfg;
        cfg.epsilon = 0.005;
        cfg.k_prime = 2;
        cfg.max_iters = 3000;
        cfg.tol = 1e-8;
        DenseMatrix s = random_uniform(n, 4, rng);
        MultiSkResult res = multi_sinkhorn(s, cfg);
        OracleResult oracle = solve_exact(s, 2);
        double ratio = dot(res.q, s) / oracle.objective;
        worst_ratio = std::min(worst_ratio, ratio);
        if (ratio >= 0.98) ++good;
    }
    double secs = seconds_since(t0);
    char d[160];
    std::snprintf(d, sizeof(d), "%d/50 within 2%% of the optimum, worst ratio %.4f, %.1fs", good,
                  worst_ratio, secs);
    report(2, good >= 48 && secs < 60.0, d);  // >= 95%
}

void criterion_3_trivial() {
    std::mt19937_64 rng(303);
    bool ok = true;
    for (int trial = 0; trial < 5; ++trial) {
        std::size_t n = 3 + rng() % 10;
        std::size_t k = 2 + rng() % 6;
        DenseMatrix s = random_uniform(n, k, rng);
        for (double& v : s.data()) v += 0.05;  // strictly positive
        SolverConfig cfg;
        cfg.k_prime = k;
        MultiSkResult all = multi_sinkhorn(s, cfg);
        for (double v : all.q.data()) ok = ok && std::abs(v - 1.0) <= 1e-9;

        cfg.k_prime = 1 + rng() % k;
        DenseMatrix uniform(n, k, 0.7);
        MultiSkResult u = multi_sinkhorn(uniform, cfg);
        double expect = static_cast<double>(cfg.k_prime) / static_cast<double>(k);
        for (double v : u.q.data()) ok = ok && std::abs(v - expect) <= 1e-9;
    }
    report(3, ok, "K'=K all-ones and uniform-S cases within 1e-9");
}

void criterion_4_invariances() {
    std::mt19937_64 rng(404);
    double worst_shift = 0.0, worst_scale = 0.0, worst_perm = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 4 + rng() % 9;
        std::size_t k = 2 + rng() % 5;
        SolverConfig cfg;
        cfg.k_prime = 1 + rng() % k;
        cfg.tol = 1e-10;
        cfg.max_iters = 20000;
        DenseMatrix s = random_uniform(n, k, rng);
        MultiSkResult base = multi_sinkhorn(s, cfg);

        DenseMatrix shifted = s;
        for (double& v : shifted.data()) v += 2.7;
        MultiSkResult sh = multi_sinkhorn(shifted, cfg);
        for (std::size_t i = 0; i < base.q.size(); ++i) {
            worst_shift = std::max(worst_shift, std::abs(sh.q.data()[i] - base.q.data()[i]));
        }

        DenseMatrix scaled = s;
        for (double& v : scaled.data()) v *= 2.5;
        SolverConfig cs = cfg;
        cs.epsilon = cfg.epsilon * 2.5;
        MultiSkResult sc = multi_sinkhorn(scaled, cs);
        for (std::size_t i = 0; i < base.q.size(); ++i) {
            worst_scale = std::max(worst_scale, std::abs(sc.q.data()[i] - base.q.data()[i]));
        }

        std::vector<std::size_t> rp(n), cp(k);
        for (std::size_t i = 0; i < n; ++i) rp[i] = i;
        for (std::size_t j = 0; j < k; ++j) cp[j] = j;
        std::shuffle(rp.begin(), rp.end(), rng);
        std::shuffle(cp.begin(), cp.end(), rng);
        DenseMatrix sp(n, k);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) sp(i, j) = s(rp[i], cp[j]);
        }
        MultiSkResult pe = multi_sinkhorn(sp, cfg);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                worst_perm = std::max(worst_perm,
                                      std::abs(pe.q(i, j) - base.q(rp[i], cp[j])));
            }
        }
    }
    char d[160];
    std::snprintf(d, sizeof(d), "worst: shift %.1e, scale %.1e, permutation %.1e", worst_shift,
                  worst_scale, worst_perm);
    report(4, worst_shift <= 1e-8 && worst_scale <= 1e-8 && worst_perm <= 1e-12, d);
}

void criterion_5_vanilla() {
    std::mt19937_64 rng(505);
    bool ok = true;
    std::size_t worst_iters = 0;
    for (int trial = 0; trial < 20; ++trial) {
        DenseMatrix s = random_uniform(32, 32, rng);
        SolverConfig cfg;
        cfg.tol = 1e-8;
        cfg.max_iters = 500;
        auto [q, rep] = vanilla_sinkhorn(s, std::vector<double>(32, 1.0),
                                         std::vector<double>(32, 1.0), cfg);
        worst_iters = std::max(worst_iters, rep.iterations_used);
        ok = ok && rep.converged && rep.final_violation <= 1e-8;
    }
    char d[96];
    std::snprintf(d, sizeof(d), "20 matrices, max %zu sweeps to 1e-8", worst_iters);
    report(5, ok, d);
}

MultiModalState gradient_fixture(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    MultiModalState st;
    for (std::size_t m = 0; m < 3; ++m) {
        st.input[m] = DenseMatrix(4, 3);
        st.joint[m] = DenseMatrix(4, 3);
        st.anchors_input[m] = DenseMatrix(2, 3);
        st.anchors_joint[m] = DenseMatrix(2, 3);
        for (double& v : st.input[m].data()) v = u(rng);
        for (double& v : st.joint[m].data()) v = u(rng);
        for (double& v : st.anchors_input[m].data()) v = u(rng);
        for (double& v : st.anchors_joint[m].data()) v = u(rng);
    }
    return st;
}

// max relative FD error over 10 random coordinates of the fixed-target loss
double fd_check(MultiModalState state, const LossConfig& cfg, const SolverConfig& solver,
                std::mt19937_64& rng) {
    SspcTargets targets = compute_sspc_targets(state, solver, cfg);
    LossGradients g = loss_eval_fixed_targets(state, targets, cfg, true);
    const double h = 1e-5;
    double worst = 0.0;
    for (int p = 0; p < 10; ++p) {
        std::size_t group = rng() % 3;
        std::size_t m = rng() % 3;
        DenseMatrix* mat = group == 0 ? &state.joint[m]
                           : group == 1 ? &state.anchors_input[m]
                                        : &state.anchors_joint[m];
        const DenseMatrix& grad = group == 0 ? g.d_joint[m]
                                  : group == 1 ? g.d_anchors_input[m]
                                               : g.d_anchors_joint[m];
        std::size_t idx = rng() % mat->size();
        double keep = mat->data()[idx];
        mat->data()[idx] = keep + h;
        double up = loss_eval_fixed_targets(state, targets, cfg, false).value.total;
        mat->data()[idx] = keep - h;
        double dn = loss_eval_fixed_targets(state, targets, cfg, false).value.total;
        mat->data()[idx] = keep;
        double fd = (up - dn) / (2.0 * h);
        double denom = std::max({std::abs(fd), std::abs(grad.data()[idx]), 1e-8});
        worst = std::max(worst, std::abs(fd - grad.data()[idx]) / denom);
    }
    return worst;
}

void criterion_6_gradients() {
    std::mt19937_64 rng(606);
    const double h = 1e-5;
    double worst = 0.0;

    // bce_with_logits
    {
        std::uniform_real_distribution<double> ul(-3.0, 3.0), ut(0.0, 1.0);
        DenseMatrix l(3, 4), t(3, 4);
        for (double& v : l.data()) v = ul(rng);
        for (double& v : t.data()) v = ut(rng);
        DenseMatrix g = bce_with_logits_grad(l, t);
        for (int p = 0; p < 10; ++p) {
            std::size_t idx = rng() % l.size();
            DenseMatrix lp = l, lm = l;
            lp.data()[idx] += h;
            lm.data()[idx] -= h;
            double fd = (bce_with_logits(lp, t) - bce_with_logits(lm, t)) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(g.data()[idx]), 1e-8});
            worst = std::max(worst, std::abs(fd - g.data()[idx]) / denom);
        }
    }

    // nce_loss
    {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        DenseMatrix x(4, 3), y(4, 3);
        for (double& v : x.data()) v = u(rng);
        for (double& v : y.data()) v = u(rng);
        DenseMatrix dx(4, 3), dy(4, 3);
        detail::nce_with_grad(x, y, 0.3, 1.0, &dx, &dy);
        for (int p = 0; p < 10; ++p) {
            bool on_x = rng() % 2 == 0;
            DenseMatrix& target = on_x ? x : y;
            const DenseMatrix& grad = on_x ? dx : dy;
            std::size_t idx = rng() % target.size();
            double keep = target.data()[idx];
            target.data()[idx] = keep + h;
            double up = nce_loss(x, y, 0.3);
            target.data()[idx] = keep - h;
            double dn = nce_loss(x, y, 0.3);
            target.data()[idx] = keep;
            double fd = (up - dn) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(grad.data()[idx]), 1e-8});
            worst = std::max(worst, std::abs(fd - grad.data()[idx]) / denom);
        }
    }

    SolverConfig solver;
    solver.epsilon = 0.5;
    solver.k_prime = 1;
    solver.tol = 1e-12;
    solver.max_iters = 20000;

    // sspc_pair_loss: only the text-video pair active, no NCE
    {
        LossConfig cfg;
        cfg.tau = 1.0;
        cfg.lambda_nce = 0.0;
        for (auto& row : cfg.pair_weights) row = {0.0, 0.0, 0.0};
        cfg.pair_weights[0][1] = 1.0;
        worst = std::max(worst, fd_check(gradient_fixture(rng), cfg, solver, rng));
    }

    // total_loss: everything active
    {
        LossConfig cfg;
        cfg.tau = 1.0;
        worst = std::max(worst, fd_check(gradient_fixture(rng), cfg, solver, rng));
    }

    char d[96];
    std::snprintf(d, sizeof(d), "max relative error %.2e at h=1e-5", worst);
    report(6, worst < 1e-4, d);
}

void criterion_7_unit_values() {
    DenseMatrix zeros(2, 2, 0.0), halves(2, 2, 0.5);
    double bce = bce_with_logits(zeros, halves);
    DenseMatrix same(4, 3, 0.5);
    double nce4 = nce_loss(same, same, 0.1);
    DenseMatrix one(1, 2, {1.0, -0.5});
    double nce1 = nce_loss(one, one, 0.1);
    bool ok = std::abs(bce - std::log(2.0)) <= 1e-9 &&
              std::abs(nce4 - std::log(4.0)) <= 1e-9 && nce1 == 0.0;
    char d[128];
    std::snprintf(d, sizeof(d), "bce %.9f, nce(N=4) %.9f, nce(N=1) %g", bce, nce4, nce1);
    report(7, ok, d);
}

void criterion_8_ablation() {
    auto t0 = clock_type::now();
    TrainConfig cfg;  // desk-scale defaults
    AblationReport rep = ablation_suite(cfg);
    double full_score = 0.0, no_sspc_score = 0.0, full_r5 = 0.0, modified_r5 = 0.0;
    for (const auto& e : rep.entries) {
        if (e.mode == Ablation::full) {
            full_score = e.structure_score;
            full_r5 = e.retrieval.r_at_5;
        }
        if (e.mode == Ablation::no_sspc) no_sspc_score = e.structure_score;
        if (e.mode == Ablation::modified_sk) modified_r5 = e.retrieval.r_at_5;
    }
    double secs = seconds_since(t0);
    double margin = full_score - no_sspc_score;
    bool ok = margin >= 0.05 && full_r5 >= modified_r5 && secs < 600.0;
    char d[200];
    std::snprintf(d, sizeof(d),
                  "structure margin %.3f (full %.3f vs no_sspc %.3f), R@5 full %.3f vs "
                  "modified_sk %.3f, %.0fs",
                  margin, full_score, no_sspc_score, full_r5, modified_r5, secs);
    report(8, ok, d);
}

void criterion_9_determinism(const fs::path& tmp) {
    std::string cfg_path = (tmp / "cfg.json").string();
    std::ofstream(cfg_path) << R"({
  "dataset": {"n_samples": 200, "d_input": [8, 8, 8], "n_shared_concepts": 4,
              "n_private_concepts": 2},
  "batch_size": 40, "epochs": 2, "learning_rate": 0.05, "k": 4, "k_prime": 2,
  "d_joint": 8, "bank_capacity": 80
})";
    CliRun a = run_cli("train --config " + cfg_path + " --out-dir " + (tmp / "a").string());
    CliRun b = run_cli("train --config " + cfg_path + " --out-dir " + (tmp / "b").string());
    std::string ma = read_file((tmp / "a" / "metrics.jsonl").string());
    std::string mb = read_file((tmp / "b" / "metrics.jsonl").string());
    bool ok = a.exit_code == 0 && b.exit_code == 0 && !ma.empty() && ma == mb;
    char d[96];
    std::snprintf(d, sizeof(d), "two train runs, %zu bytes of metrics, byte-identical: %s",
                  ma.size(), ma == mb ? "yes" : "no");
    report(9, ok, d);
}

void criterion_10_retrieval() {
    std::mt19937_64 rng(1010);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 2 + rng() % 40;
        std::size_t d = 1 + rng() % 8;
        DenseMatrix q(n, d), g(n, d);
        for (double& v : q.data()) v = u(rng);
        for (double& v : g.data()) v = u(rng);
        std::vector<std::size_t> got = retrieval_ranks(q, g);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::pair<double, std::size_t>> scored;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += q(i, c) * g(j, c);
                scored.push_back({-s, j});
            }
            std::sort(scored.begin(), scored.end());
            std::size_t rank = 0;
            for (std::size_t pos = 0; pos < n; ++pos) {
                if (scored[pos].second == i) rank = pos + 1;
            }
            if (got[i] != rank) ++mismatches;
        }
    }
    char d[96];
    std::snprintf(d, sizeof(d), "100 instances, %zu rank mismatches vs brute force", mismatches);
    report(10, mismatches == 0, d);
}

void criterion_11_cli(const fs::path& tmp) {
    std::string s_path = (tmp / "s.csv").string();
    std::ofstream(s_path) << "2,1\n1,2\n";
    std::string q_path = (tmp / "q.csv").string();

    // exit 0 + round trip
    CliRun ok_run = run_cli("solve --input " + s_path + " --k-prime 1 --tol 1e-8 --out " + q_path);
    bool round_trip = false;
    if (ok_run.exit_code == 0) {
        DenseMatrix q = read_matrix_csv(q_path);
        round_trip = true;
        for (std::size_t i = 0; i < q.rows(); ++i) {
            double rs = 0.0;
            for (std::size_t j = 0; j < q.cols(); ++j) rs += q(i, j);
            round_trip = round_trip && std::abs(rs - 1.0) <= 1e-8;
        }
        for (double v : q.data()) round_trip = round_trip && v >= 0.0 && v <= 1.0;
    }

    // exit 1: usage error
    CliRun usage = run_cli("solve --input " + s_path + " --k-prime 0 --out " + q_path);
    // exit 2: non-convergence at tiny epsilon on the boundary optimum
    CliRun numerical = run_cli("solve --input " + s_path +
                               " --k-prime 1 --epsilon 0.0005 --max-iters 5 --out " + q_path);
    // exit 3: missing input
    CliRun io = run_cli("solve --input " + (tmp / "nope.csv").string() + " --k-prime 1 --out " +
                        q_path);
    // summary JSON sanity: objective present on the successful run
    bool has_objective = std::isfinite(json_number(ok_run.out, "objective"));

    bool ok = ok_run.exit_code == 0 && round_trip && usage.exit_code == 1 &&
              numerical.exit_code == 2 && io.exit_code == 3 && has_objective;
    char d[160];
    std::snprintf(d, sizeof(d),
                  "exit codes 0/1/2/3 = %d/%d/%d/%d, round trip %s, summary JSON %s",
                  ok_run.exit_code, usage.exit_code, numerical.exit_code, io.exit_code,
                  round_trip ? "ok" : "bad", has_objective ? "ok" : "bad");
    report(11, ok, d);
}

}  // namespace

int main() {
    fs::path tmp = fs::temp_directory_path() /
                   ("msk_accept_" + std::to_string(std::random_device{}()));
    fs::create_directories(tmp);

    criterion_1_constraints();
    criterion_2_oracle();
    criterion_3_trivial();
    criterion_4_invariances();
    criterion_5_vanilla();
    criterion_6_gradients();
    criterion_7_unit_values();
    criterion_8_ablation();
    criterion_9_determinism(tmp);
    criterion_10_retrieval();
    criterion_11_cli(tmp);

    fs::remove_all(tmp);
    std::printf("%s\n", failures == 0 ? "all criteria passed" : "some criteria FAILED");
    return failures == 0 ? 0 : 1;
}
