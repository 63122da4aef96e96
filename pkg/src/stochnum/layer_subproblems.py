"""Inner maximisations of the dual function, one per layer.

Given the current multipliers these return optimal source rates, routing,
per-link powers and the max-weight schedule. All functions are pure and
broadcast over numpy arrays where that makes sense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .channel_sde import KDB
from .net_model import LN2, IndependentSetFamily, InterferenceMap, Network

LAMBDA_EPS = 1e-9

LOG = "log"
ALPHA_FAIR = "alpha-fair"
SIGMOID = "sigmoid"
LOG_OVER_TIME = "scaled-log-over-time"


@dataclass(frozen=True)
class Utility:
    """Source utility U(lambda, t).

    ``log``: w log(lambda); ``alpha-fair``: w lambda^(1-alpha) / (1-alpha);
    ``sigmoid``: w / (1 + exp(-k (lambda - c))); ``scaled-log-over-time``:
    w log(lambda) / t.
    """

    kind: str = LOG
    weight: float = 1.0
    alpha: float = 2.0
    steepness: float = 10.0
    midpoint: float = 0.5

    def __post_init__(self):
        if self.kind not in (LOG, ALPHA_FAIR, SIGMOID, LOG_OVER_TIME):
            raise ValueError(f"unknown utility {self.kind!r}")
        if self.kind == ALPHA_FAIR and (self.alpha <= 0 or self.alpha == 1):
            raise ValueError("alpha-fair needs alpha > 0, alpha != 1 (use log)")

    @property
    def time_varying(self) -> bool:
        return self.kind == LOG_OVER_TIME

    @property
    def concave(self) -> bool:
        return self.kind != SIGMOID

    def value(self, lam, t=1.0):
        lam = np.maximum(np.asarray(lam, dtype=float), LAMBDA_EPS)
        w = self.weight
        if self.kind == LOG:
            return w * np.log(lam)
        if self.kind == LOG_OVER_TIME:
            return w * np.log(lam) / t
        if self.kind == ALPHA_FAIR:
            return w * lam ** (1 - self.alpha) / (1 - self.alpha)
        return w / (1 + np.exp(-self.steepness * (lam - self.midpoint)))

    def derivative(self, lam, t=1.0):
        lam = np.maximum(np.asarray(lam, dtype=float), LAMBDA_EPS)
        w = self.weight
        if self.kind == LOG:
            return w / lam
        if self.kind == LOG_OVER_TIME:
            return w / (lam * t)
        if self.kind == ALPHA_FAIR:
            return w * lam ** (-self.alpha)
        z = np.exp(-self.steepness * (lam - self.midpoint))
        return w * self.steepness * z / (1 + z) ** 2


@dataclass(frozen=True)
class PowerCost:
    """Link power cost J(P) = V P^2, or zero (power control disabled)."""

    kind: str = "quadratic"
    V: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "quadratic"):
            raise ValueError(f"unknown power cost {self.kind!r}")
        if self.kind == "quadratic" and self.V <= 0:
            raise ValueError("quadratic cost needs V > 0")

    def value(self, P):
        P = np.asarray(P, dtype=float)
        return self.V * P * P if self.kind == "quadratic" else np.zeros_like(P)

    def derivative(self, P):
        P = np.asarray(P, dtype=float)
        return 2 * self.V * P if self.kind == "quadratic" else np.zeros_like(P)


@dataclass
class Multipliers:
    """mu[node, dest] for flow conservation, ell[link] for capacity, nu[node] for energy."""

    mu: np.ndarray
    ell: np.ndarray
    nu: np.ndarray

    @classmethod
    def filled(cls, n_nodes: int, n_dests: int, n_links: int, value: float = 1.0):
        return cls(np.full((n_nodes, n_dests), value), np.full(n_links, value),
                   np.full(n_nodes, value))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu.ravel(), self.ell, self.nu])

    def copy(self) -> "Multipliers":
        return Multipliers(self.mu.copy(), self.ell.copy(), self.nu.copy())


@dataclass
class ControlSample:
    """Inner-loop controls: deterministic rates/routing plus per-sample power/schedule."""

    lam: np.ndarray        # (flows,) or (flows, samples in time)
    r: np.ndarray          # (links, dests)
    P: np.ndarray | None = None
    schedule: np.ndarray | None = None


def congestion_optimal_rate(u: Utility, mu, t=1.0, lambda_max: float = 1.0,
                            eps: float = LAMBDA_EPS):
    """argmax over [eps, lambda_max] of U(lambda, t) - mu lambda."""
    mu = np.asarray(mu, dtype=float)
    t = np.asarray(t, dtype=float)
    if lambda_max <= eps:
        return np.zeros(np.broadcast(mu, t).shape)
    if u.concave:
        with np.errstate(divide="ignore"):
            if u.kind == LOG:
                raw = u.weight / mu
            elif u.kind == LOG_OVER_TIME:
                raw = u.weight / (mu * t)
            else:
                raw = (u.weight / mu) ** (1.0 / u.alpha)
        raw = np.where(mu > 0, raw, np.inf)
        return np.clip(raw, eps, lambda_max)
    return np.vectorize(lambda m, tt: _scalar_rate(u, m, tt, lambda_max, eps))(mu, t)


def _scalar_rate(u: Utility, mu: float, t: float, lambda_max: float, eps: float,
                 grid: int = 65) -> float:
    # a coarse scan brackets the best local maximum; a bounded search refines it
    obj = lambda x: float(u.value(x, t) - mu * x)  # noqa: E731
    xs = np.linspace(eps, lambda_max, grid)
    vals = u.value(xs, t) - mu * xs
    k = int(np.argmax(vals))
    lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
    res = minimize_scalar(lambda x: -obj(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, lambda_max)})
    cands = [eps, lambda_max, xs[k], float(res.x)]
    return max(cands, key=obj)


def routing_optimal(mu_i, mu_j, ell_ij, R_max: float):
    """Bang-bang routing; a weight of exactly zero routes nothing."""
    w = np.asarray(mu_i, dtype=float) - np.asarray(mu_j, dtype=float) - np.asarray(ell_ij)
    return np.where(w > 0, R_max, 0.0)


def power_optimal_quadratic(x, ell, nu, V: float, B: float, N0: float, P_max: float,
                            P_min: float = 0.0):
    """Closed-form link power for J = V P^2, clipped to [P_min, P_max].

    The positive root of P^2 + (N0/a + nu/2V) P + nu N0/(2Va) - ell B/(2V ln2) = 0
    is evaluated after multiplying through by the gain a, which avoids the
    cancellation the textbook form suffers when N0/a >> P.
    """
    a = np.exp(KDB * np.asarray(x, dtype=float))
    ell = np.asarray(ell, dtype=float)
    nu = np.asarray(nu, dtype=float)
    k = ell * B / (V * LN2)
    h = a * nu / (2 * V)
    num = a * k - nu * N0 / V
    den = N0 + h + np.sqrt((N0 - h) ** 2 + 2 * a * a * k)
    return np.clip(num / den, P_min, P_max)


def power_cap_bound(ell, nu, V: float, B: float):
    """Limit of the unclipped optimal power as the loss goes to -infinity."""
    ell = np.asarray(ell, dtype=float)
    h = np.asarray(nu, dtype=float) / (2 * V)
    k = ell * B / (V * LN2)
    return 0.5 * 2 * k / (np.sqrt(h * h + 2 * k) + h + (k == 0))


def _link_objective(cost: PowerCost, P, a, ell, nu, B, N0):
    return -cost.value(P) + ell * B * np.log1p(a * P / N0) / LN2 - nu * P


def power_optimal_generic(cost: PowerCost, x, ell, nu, B: float, N0: float, P_max: float,
                          P_min: float = 0.0, tol: float = 1e-12):
    """Root of the first-order condition by bisection (vectorised).

    The objective is concave, so the derivative is decreasing: a non-positive
    slope at P_min gives P_min, a non-negative slope at P_max gives P_max.
    """
    x, ell, nu = np.broadcast_arrays(np.asarray(x, float), np.asarray(ell, float),
                                     np.asarray(nu, float))
    a = np.exp(KDB * x)

    def slope(P):
        return -cost.derivative(P) + ell * B * a / (LN2 * (N0 + a * P)) - nu

    lo = np.full(x.shape, float(P_min))
    hi = np.full(x.shape, float(P_max))
    s_lo, s_hi = slope(lo), slope(hi)
    iters = max(1, int(math.ceil(math.log2(max(P_max - P_min, tol) / tol))) + 1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = slope(mid) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    root = 0.5 * (lo + hi)
    out = np.where(s_lo <= 0, P_min, np.where(s_hi >= 0, P_max, root))
    # boundary comparison guards flat or degenerate slopes
    f = lambda P: _link_objective(cost, P, a, ell, nu, B, N0)  # noqa: E731
    best = np.where(f(np.full(x.shape, float(P_max))) > f(out) + 1e-15, P_max, out)
    return best if best.ndim else float(best)


def link_weight(cost: PowerCost, P, x, ell, nu, B: float, N0: float):
    """Max-weight link score -J(P) + ell C(P) - nu P."""
    a = np.exp(KDB * np.asarray(x, dtype=float))
    return _link_objective(cost, np.asarray(P, float), a, ell, nu, B, N0)


def schedule_max_weight(weights, family: IndependentSetFamily) -> int:
    """Index of the set with the largest sum of non-negative link weights."""
    if family.size == 0:
        raise ValueError("empty independent-set family")
    w = np.maximum(np.asarray(weights, dtype=float), 0.0)
    scores = w @ family.incidence()
    return int(np.argmax(scores))


class Scheduler:
    """Batched max-weight schedule over a fixed family (lowest index wins ties)."""

    def __init__(self, family: IndependentSetFamily, chunk: int = 4096):
        if family.size == 0:
            raise ValueError("empty independent-set family")
        self.family = family
        self.inc = family.incidence().astype(float)
        self.chunk = chunk

    def choose(self, weights: np.ndarray) -> np.ndarray:
        """weights (samples, links) -> chosen set index per sample."""
        w = np.maximum(weights, 0.0)
        out = np.empty(w.shape[0], dtype=np.intp)
        for start in range(0, w.shape[0], self.chunk):
            block = w[start:start + self.chunk]
            out[start:start + self.chunk] = np.argmax(block @ self.inc, axis=1)
        return out

    def active(self, weights: np.ndarray) -> np.ndarray:
        """Boolean (samples, links) mask of links in the chosen set."""
        idx = self.choose(weights)
        return self.inc.T[idx].astype(bool)


def power_nonorthogonal_heuristic(gains, m: Multipliers, net: Network, cost: PowerCost,
                                  imap: InterferenceMap, restarts: int = 4,
                                  sweeps: int = 30, seed: int = 0, scan: int = 33,
                                  tol: float = 1e-10):
    """Projected block-coordinate ascent on the cross-terminal power problem.

    ``gains`` has shape (samples, channels). Starts from all-zero, all-half,
    all-max and ``restarts - 3`` random patterns; returns the best powers found
    per sample, shape (samples, links). The result is a lower bound on the
    true inner maximum.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    gains = np.atleast_2d(np.asarray(gains, dtype=float))
    S, E = gains.shape[0], net.n_links
    nu_link = np.array([m.nu[i] for i, _ in net.links])
    gen = np.random.default_rng(seed)
    starts = [np.zeros((S, E)), np.full((S, E), 0.5 * net.P_max), np.full((S, E), net.P_max)]
    while len(starts) < restarts:
        starts.append(gen.uniform(0.0, net.P_max, size=(S, E)))
    starts = starts[:restarts]
    # links whose SINR feels link f's power
    hears = [[(e, ch) for e in range(E) for (g, ch) in imap.terms[e] if g == f]
             for f in range(E)]

    def total(P):
        return nonorthogonal_objective(gains, P, m, net, cost, imap, nu_link)

    best_P, best_val = None, None
    grid = np.linspace(0.0, net.P_max, scan)
    for P0 in starts:
        P = P0.copy()
        for _ in range(sweeps):
            before = total(P)
            for f in range(E):
                def coord(v, P=P, f=f):
                    # objective terms that depend on link f's power, v: (S, k)
                    own_den = net.N0 + sum(gains[:, ch, None] * P[:, g, None]
                                           for g, ch in imap.terms[f])
                    val = (-cost.value(v) - nu_link[f] * v
                           + m.ell[f] * net.bandwidth
                           * np.log1p(gains[:, f, None] * v / own_den) / LN2)
                    for e, ch in hears[f]:
                        other = net.N0 + sum(gains[:, c2, None] * P[:, g, None]
                                             for g, c2 in imap.terms[e] if g != f)
                        den = other + gains[:, ch, None] * v
                        val = val + m.ell[e] * net.bandwidth * np.log1p(
                            gains[:, e, None] * P[:, e, None] / den) / LN2
                    return val
                vals = coord(np.broadcast_to(grid, (S, scan)))
                k = np.argmax(vals, axis=1)
                lo = grid[np.maximum(k - 1, 0)]
                hi = grid[np.minimum(k + 1, scan - 1)]
                cand = _golden_max(coord, lo, hi, tol)
                pick = np.column_stack([grid[k], cand, P[:, f]])
                pv = coord(pick)
                P[:, f] = pick[np.arange(S), np.argmax(pv, axis=1)]
            after = total(P)
            if np.all(after - before <= 1e-12 * (1 + np.abs(before))):
                break
        val = total(P)
        if best_P is None:
            best_P, best_val = P, val
        else:
            better = val > best_val
            best_P = np.where(better[:, None], P, best_P)
            best_val = np.where(better, val, best_val)
    return best_P


def _golden_max(fn, lo, hi, tol):
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo.copy(), hi.copy()
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc = fn(c[:, None])[:, 0]
    fd = fn(d[:, None])[:, 0]
    while np.max(b - a) > tol:
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - inv * (b - a)
        new_d = a + inv * (b - a)
        c_keep, d_keep = np.where(left, new_c, d), np.where(left, c, new_d)
        fc_new = fn(c_keep[:, None])[:, 0]
        fd_new = fn(d_keep[:, None])[:, 0]
        c, d, fc, fd = c_keep, d_keep, fc_new, fd_new
    return 0.5 * (a + b)


def nonorthogonal_objective(gains, P, m: Multipliers, net: Network, cost: PowerCost,
                            imap: InterferenceMap, nu_link=None):
    """Sum over links of -J + ell C_sinr - nu P for each sample row."""
    gains = np.atleast_2d(gains)
    P = np.atleast_2d(P)
    if nu_link is None:
        nu_link = np.array([m.nu[i] for i, _ in net.links])
    total = np.zeros(P.shape[0])
    for e in range(net.n_links):
        den = net.N0
        for f, ch in imap.terms[e]:
            den = den + gains[:, ch] * P[:, f]
        cap = net.bandwidth * np.log1p(gains[:, e] * P[:, e] / den) / LN2
        total += -cost.value(P[:, e]) + m.ell[e] * cap - nu_link[e] * P[:, e]
    return total
