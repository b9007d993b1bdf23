#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "msk/exact_oracle.hpp"

using namespace msk;

TEST_CASE("solve_exact on the 2x2 diagonal instance") {
    DenseMatrix s(2, 2, {2, 1, 1, 2});
    OracleResult r = solve_exact(s, 1);
    CHECK(r.objective == 4.0);
    CHECK(r.candidates_enumerated == 2);
    CHECK(r.q_binary(0, 0) == 1.0);
    CHECK(r.q_binary(0, 1) == 0.0);
    CHECK(r.q_binary(1, 0) == 0.0);
    CHECK(r.q_binary(1, 1) == 1.0);
}

TEST_CASE("solve_exact K'=K returns the all-ones matrix") {
    DenseMatrix s(3, 2, {1, 2, 3, 4, 5, 6});
    OracleResult r = solve_exact(s, 2);
    double total = 0.0;
    for (double v : s.data()) total += v;
    CHECK(r.objective == total);
    for (double v : r.q_binary.data()) CHECK(v == 1.0);
}

TEST_CASE("solve_exact ties resolve lexicographically") {
    // all-equal scores: every feasible assignment has the same objective, so
    // the winner must be the first row-subset sequence in lexicographic order
    DenseMatrix s(2, 2, 1.0);
    OracleResult r = solve_exact(s, 1);
    CHECK(r.q_binary(0, 0) == 1.0);
    CHECK(r.q_binary(1, 1) == 1.0);

    DenseMatrix s4(4, 4, 0.0);
    OracleResult r4 = solve_exact(s4, 2);
    // first row takes {0,1}, second {0,1} is then column-capped, etc.
    CHECK(r4.q_binary(0, 0) == 1.0);
    CHECK(r4.q_binary(0, 1) == 1.0);
}

TEST_CASE("solve_exact rejects infeasible and oversized instances") {
    DenseMatrix s(3, 2, 0.0);
    CHECK_THROWS_AS(solve_exact(s, 1), InfeasibleDivisibility);  // 3*1 % 2 != 0
    CHECK_THROWS_AS(solve_exact(s, 0), std::invalid_argument);
    CHECK_THROWS_AS(solve_exact(s, 3), std::invalid_argument);

    DenseMatrix big(40, 16, 0.0);
    CHECK_THROWS_AS(solve_exact(big, 8), InstanceTooLarge);  // C(16,8)^40 >> 1e8
}

TEST_CASE("solve_exact result is feasible and dominates random feasible assignments") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 8; ++trial) {
        std::size_t n = 4, k = 4, kp = 2;
        DenseMatrix s(n, k);
        for (double& v : s.data()) v = u(rng);
        OracleResult r = solve_exact(s, kp);

        const std::size_t col_cap = n * kp / k;
        for (std::size_t i = 0; i < n; ++i) {
            double rs = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                CHECK((r.q_binary(i, j) == 0.0 || r.q_binary(i, j) == 1.0));
                rs += r.q_binary(i, j);
            }
            CHECK(rs == static_cast<double>(kp));
        }
        for (std::size_t j = 0; j < k; ++j) {
            double cs = 0.0;
            for (std::size_t i = 0; i < n; ++i) cs += r.q_binary(i, j);
            CHECK(cs == static_cast<double>(col_cap));
        }

        // greedy column-balanced assignment can never beat the oracle
        DenseMatrix greedy(n, k, 0.0);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::size_t> order(k);
            for (std::size_t j = 0; j < k; ++j) order[j] = j;
            std::sort(order.begin(), order.end(),
                      [&](std::size_t a, std::size_t b) { return s(i, a) > s(i, b); });
            std::size_t taken = 0;
            for (std::size_t j : order) {
                if (taken == kp) break;
                if (count[j] < col_cap) {
                    greedy(i, j) = 1.0;
                    ++count[j];
                    ++taken;
                }
            }
        }
        CHECK(r.objective >= dot(greedy, s) - 1e-12);
    }
}

TEST_CASE("candidate counts match the pruned search space") {
    // N=2, K=2, K'=1: two full assignments reach the leaves
    DenseMatrix s(2, 2, {1, 0, 0, 1});
    CHECK(solve_exact(s, 1).candidates_enumerated == 2);

    // N=4, K=4, K'=1: 4! = 24 permutation matrices
    DenseMatrix p(4, 4, 0.0);
    CHECK(solve_exact(p, 1).candidates_enumerated == 24);
}
