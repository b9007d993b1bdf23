#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "msk/matrix.hpp"

namespace msk {

struct OracleResult {
    DenseMatrix q_binary;              // entries in {0,1}
    double objective = 0.0;            // <Q, S>
    std::size_t candidates_enumerated = 0;
};

class InfeasibleDivisibility : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InstanceTooLarge : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline double log_binomial(std::size_t n, std::size_t r) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(r) + 1.0) -
           std::lgamma(static_cast<double>(n - r) + 1.0);
}

// All K'-subsets of {0..K-1} in lexicographic order.
inline std::vector<std::vector<std::size_t>> k_subsets(std::size_t k, std::size_t k_prime) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    auto rec = [&](auto&& self, std::size_t start) -> void {
        if (cur.size() == k_prime) {
            out.push_back(cur);
            return;
        }
        for (std::size_t j = start; j + (k_prime - cur.size()) <= k; ++j) {
            cur.push_back(j);
            self(self, j + 1);
            cur.pop_back();
        }
    };
    rec(rec, 0);
    return out;
}

}  // namespace detail

// Exhaustive solver for the binary many-to-many assignment problem: maximize
// <Q,S> over binary N x K matrices with row sums K' and column sums N*K'/K.
// Depth-first over per-row subsets with column-capacity pruning; ties resolve
// to the lexicographically first row-subset sequence.
inline OracleResult solve_exact(const DenseMatrix& S, std::size_t k_prime) {
    const std::size_t n = S.rows();
    const std::size_t k = S.cols();
    if (k_prime < 1 || k_prime > k) {
        throw std::invalid_argument("solve_exact: k_prime out of range");
    }
    if ((n * k_prime) % k != 0) {
        throw InfeasibleDivisibility("solve_exact: N*K' = " + std::to_string(n * k_prime) +
                                     " is not divisible by K = " + std::to_string(k));
    }
    const std::size_t col_cap = n * k_prime / k;
    if (static_cast<double>(n) * detail::log_binomial(k, k_prime) > std::log(1e8)) {
        throw InstanceTooLarge("solve_exact: C(K,K')^N exceeds 1e8 candidates");
    }

    auto subsets = detail::k_subsets(k, k_prime);
    std::vector<double> subset_score(subsets.size());
    std::vector<std::size_t> col_count(k, 0);
    std::vector<std::size_t> choice(n, 0), best_choice;
    double best_obj = -std::numeric_limits<double>::infinity();
    std::size_t enumerated = 0;

    auto rec = [&](auto&& self, std::size_t row, double obj) -> void {
        if (row == n) {
            ++enumerated;
            if (obj > best_obj) {
                best_obj = obj;
                best_choice = choice;
            }
            return;
        }
        const std::size_t remaining = n - row;
        for (std::size_t s = 0; s < subsets.size(); ++s) {
            bool ok = true;
            for (std::size_t j : subsets[s]) {
                if (col_count[j] + 1 > col_cap) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            double gain = 0.0;
            for (std::size_t j : subsets[s]) {
                ++col_count[j];
                gain += S(row, j);
            }
            // prune: each remaining row adds at most 1 to any column, so a
            // column short by more than remaining-1 can never be filled
            bool feasible = true;
            for (std::size_t j = 0; j < k; ++j) {
                if (col_cap - col_count[j] > remaining - 1) {
                    feasible = false;
                    break;
                }
            }
            if (feasible) {
                choice[row] = s;
                self(self, row + 1, obj + gain);
            }
            for (std::size_t j : subsets[s]) {
                --col_count[j];
            }
        }
    };
    rec(rec, 0, 0.0);

    if (best_choice.empty() && n > 0 && !std::isfinite(best_obj)) {
        throw std::runtime_error("solve_exact: no feasible assignment found");
    }

    OracleResult res;
    res.q_binary = DenseMatrix(n, k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : subsets[best_choice[i]]) {
            res.q_binary(i, j) = 1.0;
        }
    }
    res.objective = dot(res.q_binary, S);
    res.candidates_enumerated = enumerated;
    return res;
}

}  // namespace msk
