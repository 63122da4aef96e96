"""Compiled inner loop for the orthogonal (P2) channel terms.

One pass over every (path, time sample) computes the per-link power, the
max-weight schedule and the Riemann sums, without materialising the
(paths, samples, links) intermediates. The numpy functions in
``layer_subproblems`` are the reference these kernels are tested against.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_LN2 = math.log(2.0)


@njit(cache=True)
def _power(a, ell, nu, V, B, N0, P_max, P_min):
    k = ell * B / (V * _LN2)
    h = a * nu / (2.0 * V)
    num = a * k - nu * N0 / V
    den = N0 + h + math.sqrt((N0 - h) ** 2 + 2.0 * a * a * k)
    p = num / den
    if p < P_min:
        p = P_min
    if p > P_max:
        p = P_max
    return p


@njit(cache=True)
def p2_integrals(gain, ell, nu_link, V, B, N0, P_max, P_min, power_control, P_fixed,
                 scheduling, set_idx, set_len, shares, dt):
    """Per-path integrals of capacity, radiated power, cost and policy power.

    gain: (M, n, E) linear attenuations. set_idx: (S, K) link ids padded with
    -1, set_len: (S,). shares: fixed per-link time shares (used when
    ``scheduling`` is off). Returns four (M, E) arrays.
    """
    M, n, E = gain.shape
    cap = np.zeros((M, E))
    pw = np.zeros((M, E))
    cost = np.zeros((M, E))
    policy = np.zeros((M, E))
    P = np.empty(E)
    C = np.empty(E)
    W = np.empty(E)
    act = np.empty(E)
    S = set_len.shape[0]
    for m in range(M):
        for b in range(n):
            for e in range(E):
                a = gain[m, b, e]
                if power_control:
                    p = _power(a, ell[e], nu_link[e], V, B, N0, P_max, P_min)
                    policy[m, e] += p * dt
                    c = B * math.log1p(a * p / N0) / _LN2
                    w = -V * p * p + ell[e] * c - nu_link[e] * p
                    if w <= 0.0:
                        p = 0.0
                        c = 0.0
                        w = 0.0
                else:
                    p = P_fixed
                    policy[m, e] += p * dt
                    c = B * math.log1p(a * p / N0) / _LN2
                    w = ell[e] * c
                P[e] = p
                C[e] = c
                W[e] = w if w > 0.0 else 0.0
            if scheduling:
                best = -1.0
                pick = 0
                for s in range(S):
                    score = 0.0
                    for q in range(set_len[s]):
                        score += W[set_idx[s, q]]
                    if score > best:
                        best = score
                        pick = s
                for e in range(E):
                    act[e] = 0.0
                for q in range(set_len[pick]):
                    act[set_idx[pick, q]] = 1.0
            else:
                for e in range(E):
                    act[e] = shares[e]
            for e in range(E):
                f = act[e] * dt
                cap[m, e] += f * C[e]
                pw[m, e] += f * P[e]
                if power_control:
                    cost[m, e] += f * V * P[e] * P[e]
    return cap, pw, cost, policy


def padded_sets(family) -> tuple[np.ndarray, np.ndarray]:
    """Family as a (-1 padded) index matrix plus set sizes."""
    K = max((len(s) for s in family.sets), default=0)
    idx = np.full((family.size, max(K, 1)), -1, dtype=np.int64)
    lens = np.zeros(family.size, dtype=np.int64)
    for k, st in enumerate(family.sets):
        idx[k, :len(st)] = st
        lens[k] = len(st)
    return idx, lens
