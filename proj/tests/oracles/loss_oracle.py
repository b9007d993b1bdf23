#!/usr/bin/env python3
"""Independent reference implementation used to freeze expected loss values.

Re-run to regenerate the constants asserted in test_losses.cpp. The fixture
matrices are generated by the same sin-ramp formula as the C++ tests.
"""
import numpy as np


def fixture(rows, cols, offset):
    idx = np.arange(rows * cols, dtype=float)
    return np.sin(0.7 * idx + offset).reshape(rows, cols)


def cosine_logits(batch, anchors, tau):
    bn = batch / np.linalg.norm(batch, axis=1, keepdims=True)
    an = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
    return bn @ an.T / tau


def multi_sk(similarity, k_prime, mu, eps, tol=1e-12, max_iters=20000):
    """Log-domain three-family scaling on the channel-stacked tensor."""
    n, k = similarity.shape
    sp = np.stack([similarity if c < k_prime else mu * similarity for c in range(k)])
    logk = (sp - sp.max()) / eps  # (K, N, K)
    la = np.zeros((n, k))   # row i x channel c
    lb = np.zeros((k, k))   # col j x channel c
    lc = np.zeros((n, k))   # row i x col j
    log_col = np.log(n / k)
    from scipy.special import logsumexp
    for _ in range(max_iters):
        for c in range(k):
            la[:, c] = -logsumexp(lb[:, c][None, :] + lc + logk[c], axis=1)
            lb[:, c] = log_col - logsumexp(la[:, c][:, None] + lc + logk[c], axis=0)
        m = la.T[:, :, None] + lb.T[:, None, :] + logk  # (K, N, K)
        lc = -logsumexp(m, axis=0)
        q = np.exp(m + lc[None, :, :])
        viol = max(
            np.abs(q.sum(axis=2) - 1).max(),
            np.abs(q.sum(axis=1) - n / k).max(),
            np.abs(q.sum(axis=0) - 1).max(),
        )
        if viol <= tol:
            break
    return q[:k_prime].sum(axis=0)


def bce_with_logits(x, t):
    return float(np.mean(np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))))


def nce(x, y, kappa):
    a = x @ y.T / kappa
    n = a.shape[0]

    def direction(m):
        lse = np.log(np.exp(m - m.max(axis=1, keepdims=True)).sum(axis=1)) + m.max(axis=1)
        return float(np.mean(lse - np.diag(m)))

    return 0.5 * (direction(a) + direction(a.T))


def main():
    N, d, K, Kp = 4, 3, 2, 1
    tau, kappa, mu, eps = 1.0, 0.1, 0.25, 0.5
    inputs = [fixture(N, d, 0.1 + m) for m in range(3)]       # t, v, a
    joints = [fixture(N, d, 3.1 + m) for m in range(3)]       # t^, v^, a^
    z_in = [fixture(K, d, 6.1 + m) for m in range(3)]
    z_joint = [fixture(K, d, 9.1 + m) for m in range(3)]

    def targets_from(logits):
        return multi_sk(np.exp(logits), Kp, mu, eps)

    # single pair (m=text input, n=video joint)
    l_src = cosine_logits(inputs[0], z_in[0], tau)
    l_dst = cosine_logits(joints[1], z_joint[0], tau)
    pair = bce_with_logits(l_src, targets_from(l_dst)) + \
        bce_with_logits(l_dst, targets_from(l_src))
    print(f"sspc_pair_tv = {pair:.15f}")

    weights = np.array([[0.1, 1.0, 0.1], [1.0, 0.1, 0.1], [0.1, 0.1, 0.1]])
    sspc = 0.0
    for m in range(3):
        l_in = cosine_logits(inputs[m], z_in[m], tau)
        t_in = targets_from(l_in)
        for n in range(3):
            l_j = cosine_logits(joints[n], z_joint[m], tau)
            sspc += weights[m, n] * (bce_with_logits(l_in, targets_from(l_j)) +
                                     bce_with_logits(l_j, t_in))
    print(f"sspc_total   = {sspc:.15f}")

    lam_tv, lam_ta, lam_va = 1.0, 0.1, 0.1
    nce_sum = lam_tv * nce(joints[0], joints[1], kappa) + \
        lam_ta * nce(joints[0], joints[2], kappa) + \
        lam_va * nce(joints[1], joints[2], kappa)
    print(f"nce_weighted = {nce_sum:.15f}")
    print(f"total        = {sspc + nce_sum:.15f}")


if __name__ == "__main__":
    main()
