"""Dual subgradient solver for the stochastic cross-layer NUM problems.

``P1`` is non-orthogonal access (SINR capacities, heuristic power control);
``P2`` is orthogonal access over independent sets of links. The same
Monte Carlo sample of channel paths is used at every iteration, so the
expectations are sample averages over a fixed set of keyed paths.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from . import channel_sde as ch
from .layer_subproblems import (
    Multipliers,
    PowerCost,
    Scheduler,
    Utility,
    congestion_optimal_rate,
    link_weight,
    power_nonorthogonal_heuristic,
    power_optimal_generic,
    power_optimal_quadratic,
    routing_optimal,
)
from .net_model import (
    LN2,
    FlowSet,
    IndependentSetFamily,
    Network,
    capacity_orthogonal,
    interference_map,
)

log = logging.getLogger(__name__)

P1, P2 = "P1", "P2"
CONVERGED, MAX_ITERS = "converged", "max-iters"


@dataclass
class ProblemSpec:
    net: Network
    flows: FlowSet
    channel: ch.LtfChannelModel | ch.StfChannelModel
    grid: ch.TimeGrid
    mode: str = P2
    power_control: bool = False
    scheduling: bool = False
    family: IndependentSetFamily | None = None
    utilities: Sequence[Utility] | Utility = Utility()
    cost: PowerCost = PowerCost("quadratic", 1.0)
    P_fixed: float = 2.0
    time_shares: np.ndarray | None = None
    M: int = 200
    seed: int = 0
    A_prime: float = 0.1
    max_iters: int = 100_000
    tol: float = 1e-3
    window: int = 8
    init: float = 1.0
    quad_substeps: int = 64
    trace_every: int = 0  # 0: log-spaced multiplier snapshots

    def __post_init__(self):
        if self.mode not in (P1, P2):
            raise ValueError(f"mode must be P1 or P2, got {self.mode!r}")
        if isinstance(self.utilities, Utility):
            self.utilities = [self.utilities] * len(self.flows.flows)
        if len(self.utilities) != len(self.flows.flows):
            raise ValueError("one utility per flow required")
        if self.mode == P1 and self.scheduling:
            raise ValueError("P1 has no scheduling; use mode P2")
        if self.mode == P2 and self.family is None:
            raise ValueError("P2 requires an independent-set family")
        if self.mode == P2 and not self.scheduling:
            if self.time_shares is None:
                self.time_shares = self.family.time_shares()
            self.time_shares = np.asarray(self.time_shares, dtype=float)
            if np.any((self.time_shares < 0) | (self.time_shares > 1)):
                raise ValueError("fixed time shares must lie in [0, 1]")
        if self.mode == P1 and self.power_control and self.net.P_min > 0:
            raise ValueError("P1 power heuristic works on [0, P_max]; set P_min = 0")
        if any(u.time_varying for u in self.utilities) and self.grid.s <= 0:
            raise ValueError("time-divided utilities need s > 0")
        if self.M < 1 or self.max_iters < 1 or self.window < 1:
            raise ValueError("M, max_iters and window must be >= 1")
        if self.A_prime <= 0:
            raise ValueError("A_prime must be positive")

    @property
    def heuristic(self) -> bool:
        return self.mode == P1 and self.power_control


@dataclass
class ExpectationEstimates:
    """Per-link expected time integrals with standard errors.

    ``cap``/``power``/``cost`` are E[int pi C], E[int pi P], E[int pi J];
    ``policy_power`` is E[int P*] of the link power policy regardless of
    scheduling. ``lam_int`` and ``r_int`` are deterministic.
    """

    cap: np.ndarray
    cap_se: np.ndarray
    power: np.ndarray
    power_se: np.ndarray
    cost: np.ndarray
    policy_power: np.ndarray
    lam_int: np.ndarray
    r_int: np.ndarray
    per_path_link_value: np.ndarray = field(repr=False)
    lam: np.ndarray | None = field(default=None, repr=False)


@dataclass
class DualTrace:
    etas: list[int] = field(default_factory=list)
    kappas: list[float] = field(default_factory=list)
    dual: list[float] = field(default_factory=list)
    dual_se: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    change: list[float] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    weak_duality_ok: list[bool] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.etas)


@dataclass
class PrimalRecovery:
    r_bar: np.ndarray
    lam: np.ndarray          # final rates per flow at the grid nodes, (flows, n)
    multipliers: Multipliers
    policy: object = field(repr=False, default=None)


@dataclass
class RunReport:
    status: str
    iterations: int
    dual_value: float
    dual_se: float
    rates: np.ndarray                 # time-averaged optimal rate per flow
    summed_utility: float             # time average of sum_f U_f(lambda_f*(t), t)
    policy_power: float               # time-averaged E[P*] per link (W)
    radiated_power: float             # time-averaged E[pi P*] per link (W)
    primal_candidate: float
    weak_duality_violations: int
    heuristic: bool
    files: list[str] = field(default_factory=list)


class DualResult(NamedTuple):
    multipliers: Multipliers
    trace: DualTrace
    primal: PrimalRecovery
    report: RunReport


def step_size(eta: int, A_prime: float = 0.1) -> float:
    if eta < 1:
        raise ValueError("step counter starts at 1")
    return A_prime / eta


def update_multipliers(m: Multipliers, g: Multipliers, kappa: float) -> Multipliers:
    if kappa <= 0:
        raise ValueError("step size must be positive")
    return Multipliers(np.maximum(0.0, m.mu + kappa * g.mu),
                       np.maximum(0.0, m.ell + kappa * g.ell),
                       np.maximum(0.0, m.nu + kappa * g.nu))


def converged(trace_or_changes, window: int = 8, tol: float = 1e-3) -> bool:
    """True iff the multiplier changes summed over the last ``window`` updates are < tol."""
    if window < 1:
        raise ValueError("window must be >= 1")
    changes = getattr(trace_or_changes, "change", trace_or_changes)
    if len(changes) < window:
        return False
    if not isinstance(changes, (list, tuple, np.ndarray)):
        changes = list(changes)
    return float(sum(changes[-window:])) < tol


def _snapshot_due(eta: int, every: int) -> bool:
    if every > 0:
        return eta % every == 0 or eta == 1
    if eta <= 100:
        return True
    stride = 10 ** (int(math.log10(eta)) - 1)
    return eta % stride == 0


class DualProblem:
    """Precomputed structure and channel sample for one ProblemSpec."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        net, flows, grid = spec.net, spec.flows, spec.grid
        self.E, self.N = net.n_links, net.n_nodes
        self.dests = list(flows.destinations)
        self.D = len(self.dests)
        dest_idx = {d: k for k, d in enumerate(self.dests)}
        self.horizon = grid.T - grid.s
        self.dt = grid.dt
        self.tau = grid.nodes[:-1]  # left Riemann nodes

        self.src = np.array([i for i, _ in flows.flows], dtype=int)
        self.fdest = np.array([dest_idx[d] for _, d in flows.flows], dtype=int)
        self.mu_active = np.ones((self.N, self.D), dtype=bool)
        for k, d in enumerate(self.dests):
            self.mu_active[d, k] = False
        self.route_ok = np.zeros((self.E, self.D), dtype=bool)
        for e, (i, j) in enumerate(net.links):
            for k, d in enumerate(self.dests):
                if i != d and j in flows.routing.get((i, d), ()):
                    self.route_ok[e, k] = True
        self.tx = np.array([i for i, _ in net.links], dtype=int)
        self.rx = np.array([j for _, j in net.links], dtype=int)
        self.A_out = np.zeros((self.N, self.E))
        self.A_in = np.zeros((self.N, self.E))
        self.A_out[self.tx, np.arange(self.E)] = 1.0
        self.A_in[self.rx, np.arange(self.E)] = 1.0
        self.nu_active = spec.power_control

        self.imap = interference_map(net) if spec.mode == P1 else None
        n_ch = self.imap.n_channels if self.imap else self.E
        left = lambda a: np.ascontiguousarray(np.moveaxis(a[..., :-1], 1, 2))  # noqa: E731
        # (M, n, channels) at the left Riemann nodes; x is the loss in dB
        if isinstance(spec.channel, ch.StfChannelModel):
            i_c, q_c = ch.sample_stf_paths(spec.channel, grid, spec.seed, range(spec.M),
                                           range(n_ch), spec.quad_substeps)
            self.gain = ch.attenuation_stf(left(i_c), left(q_c))
            with np.errstate(divide="ignore"):
                self.x = -10.0 * np.log10(self.gain)
        else:
            coeffs = ch.ltf_step_coefficients(spec.channel, grid, spec.quad_substeps)
            paths = ch.sample_ltf_paths(spec.channel, coeffs, spec.seed, range(spec.M),
                                        range(n_ch))
            self.x = left(paths)
            self.gain = ch.attenuation_ltf(self.x)
        groups: dict[Utility, list[int]] = {}
        for f, u in enumerate(spec.utilities):
            groups.setdefault(u, []).append(f)
        self._groups = [(u, np.array(idx)) for u, idx in groups.items()]
        self.scheduler = Scheduler(spec.family) if spec.scheduling else None
        if spec.mode == P2 and spec.family is not None:
            self._set_idx, self._set_len = _kernels.padded_sets(spec.family)
        else:
            self._set_idx = np.full((1, 1), -1, dtype=np.int64)
            self._set_len = np.zeros(1, dtype=np.int64)
        self._fixed_terms = None
        self._summary = None

    # -- deterministic layers -------------------------------------------------

    def rates(self, m: Multipliers) -> np.ndarray:
        """Optimal rates per flow at the Riemann nodes, shape (flows, n)."""
        lam_max = self.spec.net.lambda_max
        mu = m.mu[self.src, self.fdest]
        out = np.empty((len(self.src), len(self.tau)))
        for u, idx in self._groups:
            if u.time_varying:
                out[idx] = congestion_optimal_rate(u, mu[idx, None], self.tau[None, :], lam_max)
            else:
                out[idx] = congestion_optimal_rate(u, mu[idx], 1.0, lam_max)[:, None]
        return out

    def routing(self, m: Multipliers) -> np.ndarray:
        mu_i = m.mu[self.tx]          # (E, D)
        mu_j = m.mu[self.rx]
        r = routing_optimal(mu_i, mu_j, m.ell[:, None], self.spec.net.R_max)
        return np.where(self.route_ok, r, 0.0)

    def utility_integral(self, lam: np.ndarray) -> float:
        total = 0.0
        for u, idx in self._groups:
            total += float(np.sum(u.value(lam[idx], self.tau[None, :]))) * self.dt
        return total

    # -- channel-dependent layers -----------------------------------------------

    def _link_powers(self, m: Multipliers):
        spec, net = self.spec, self.spec.net
        nu_link = m.nu[self.tx] if self.nu_active else np.zeros(self.E)
        if spec.cost.kind == "quadratic":
            P = power_optimal_quadratic(self.x, m.ell, nu_link, spec.cost.V, net.bandwidth,
                                        net.N0, net.P_max, net.P_min)
        else:
            P = power_optimal_generic(spec.cost, self.x, m.ell, nu_link, net.bandwidth,
                                      net.N0, net.P_max, net.P_min)
        W = link_weight(spec.cost, P, self.x, m.ell, nu_link, net.bandwidth, net.N0)
        return P, W

    def channel_terms(self, m: Multipliers):
        """Per-path integrals (M, E): capacity, power, cost, policy power."""
        spec = self.spec
        depends = spec.power_control or spec.scheduling
        if not depends and self._fixed_terms is not None:
            return self._fixed_terms
        if spec.mode == P1:
            terms = self._terms_p1(m)
        else:
            terms = self._terms_p2(m)
        if not depends:
            self._fixed_terms = terms
        return terms

    def _terms_p2(self, m: Multipliers):
        spec, net = self.spec, self.spec.net
        if spec.power_control and spec.cost.kind != "quadratic":
            return self._terms_p2_reference(m)
        nu_link = m.nu[self.tx] if self.nu_active else np.zeros(self.E)
        shares = (np.zeros(self.E) if spec.scheduling
                  else np.broadcast_to(np.asarray(spec.time_shares, float), (self.E,)).copy())
        V = spec.cost.V if spec.cost.kind == "quadratic" else 1.0
        return _kernels.p2_integrals(
            self.gain, np.asarray(m.ell, float), nu_link, V, net.bandwidth, net.N0,
            net.P_max, net.P_min, spec.power_control, float(spec.P_fixed),
            spec.scheduling, self._set_idx, self._set_len, shares, self.dt)

    def _terms_p2_reference(self, m: Multipliers):
        """Plain numpy version of ``_terms_p2`` (slow; used to check the kernel)."""
        spec, net = self.spec, self.spec.net
        if spec.power_control:
            P, W = self._link_powers(m)
            on = W > 0
            policy = P
            P = np.where(on, P, 0.0)
            W = np.where(on, W, 0.0)
            J = spec.cost.value(P)
        else:
            P = np.full(self.x.shape, spec.P_fixed)
            policy = P
            W = None
            J = np.zeros(self.x.shape)
        C = capacity_orthogonal(net.bandwidth, self.gain, P, net.N0)
        if spec.scheduling:
            if W is None:
                W = m.ell * C
            shape = W.shape
            share = self.scheduler.active(W.reshape(-1, self.E)).reshape(shape)
        else:
            share = spec.time_shares
        return self._integrate(share * C, share * P, share * J, policy)

    def _terms_p1(self, m: Multipliers):
        spec, net = self.spec, self.spec.net
        M, n = self.x.shape[:2]
        g = self.gain.reshape(M * n, -1)
        if spec.power_control:
            P = power_nonorthogonal_heuristic(g, m, net, spec.cost, self.imap)
        else:
            P = np.full((M * n, self.E), spec.P_fixed)
        C = np.empty_like(P)
        for e in range(self.E):
            den = net.N0
            for f, chn in self.imap.terms[e]:
                den = den + g[:, chn] * P[:, f]
            C[:, e] = net.bandwidth * np.log1p(g[:, e] * P[:, e] / den) / LN2
        J = spec.cost.value(P) if spec.power_control else np.zeros_like(P)
        shape = (M, n, self.E)
        P, C, J = P.reshape(shape), C.reshape(shape), J.reshape(shape)
        return self._integrate(C, P, J, P)

    def _integrate(self, C, P, J, policy):
        dt = self.dt
        return (np.sum(C, axis=1) * dt, np.sum(P, axis=1) * dt, np.sum(J, axis=1) * dt,
                np.sum(policy, axis=1) * dt)

    # -- estimates and subgradients -----------------------------------------------

    def _channel_summary(self, m: Multipliers):
        if self._summary is not None:
            return self._summary
        cap, pw, cost, policy = self.channel_terms(m)
        M = cap.shape[0]

        def se(a):
            return a.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros(a.shape[1])

        out = (cap, pw, cost.sum(axis=1), cap.mean(axis=0), se(cap), pw.mean(axis=0),
               se(pw), cost.mean(axis=0), policy.mean(axis=0))
        if not (self.spec.power_control or self.spec.scheduling):
            self._summary = out
        return out

    def estimate(self, m: Multipliers) -> ExpectationEstimates:
        cap, pw, cost_path, cap_m, cap_se, pw_m, pw_se, cost_m, policy_m = self._channel_summary(m)
        lam = self.rates(m)
        r = self.routing(m)
        link_val = cap @ m.ell - cost_path
        if self.nu_active:
            link_val = link_val - pw @ m.nu[self.tx]
        return ExpectationEstimates(
            cap=cap_m, cap_se=cap_se, power=pw_m, power_se=pw_se, cost=cost_m,
            policy_power=policy_m, lam_int=lam.sum(axis=1) * self.dt, r_int=r * self.horizon,
            per_path_link_value=link_val, lam=lam)

    def subgradients(self, est: ExpectationEstimates) -> Multipliers:
        Lam = np.zeros((self.N, self.D))
        np.add.at(Lam, (self.src, self.fdest), est.lam_int)
        g_mu = Lam + self.A_in @ est.r_int - self.A_out @ est.r_int
        g_mu = np.where(self.mu_active, g_mu, 0.0)
        g_ell = est.r_int.sum(axis=1) - est.cap
        if self.nu_active:
            g_nu = self.A_out @ est.power - self.spec.net.P_i_max
        else:
            g_nu = np.zeros(self.N)
        return Multipliers(g_mu, g_ell, g_nu)

    def dual_value(self, m: Multipliers, est: ExpectationEstimates, lam) -> tuple[float, float]:
        """Lagrangian at the inner maximiser, with its Monte Carlo standard error."""
        det = self.utility_integral(lam)
        Lam = np.zeros((self.N, self.D))
        np.add.at(Lam, (self.src, self.fdest), est.lam_int)
        flow_bal = Lam + self.A_in @ est.r_int - self.A_out @ est.r_int
        det -= float(np.sum(np.where(self.mu_active, m.mu * flow_bal, 0.0)))
        det -= float(m.ell @ est.r_int.sum(axis=1))
        if self.nu_active:
            det += float(m.nu.sum() * self.spec.net.P_i_max)
        per_path = det + est.per_path_link_value
        M = per_path.shape[0]
        se = float(per_path.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
        return float(per_path.mean()), se

    def initial_multipliers(self) -> Multipliers:
        m = Multipliers.filled(self.N, self.D, self.E, self.spec.init)
        m.mu[~self.mu_active] = 0.0
        if not self.nu_active:
            m.nu[:] = 0.0
        return m

    def active_flat(self, m: Multipliers) -> np.ndarray:
        parts = [m.mu[self.mu_active], m.ell]
        if self.nu_active:
            parts.append(m.nu)
        return np.concatenate(parts)

    def multiplier_ids(self) -> list[str]:
        ids = [f"mu_{i}_{self.dests[k]}" for i, k in zip(*np.nonzero(self.mu_active))]
        ids += [f"l_{i}_{j}" for i, j in self.spec.net.links]
        if self.nu_active:
            ids += [f"nu_{i}" for i in range(self.N)]
        return ids


def feasible_primal_candidate(problem: DualProblem) -> float:
    """Objective of a feasible primal point built without the dual.

    Each flow follows a BFS shortest path; links use equal time shares
    (or transmit together in P1) at a budget-respecting constant power, and
    each flow gets an equal split of the bottleneck sample-mean capacity.
    """
    spec, net = problem.spec, problem.spec.net
    H = problem.horizon
    if spec.mode == P2:
        share = spec.family.time_shares() if spec.scheduling else spec.time_shares
    else:
        share = np.ones(problem.E)
    if spec.power_control:
        load = problem.A_out @ share
        p_node = np.minimum(net.P_max, net.P_i_max / (H * np.maximum(load, 1e-300)))
        P = p_node[problem.tx]
        P = np.where(P >= net.P_min, P, 0.0)
    else:
        P = np.full(problem.E, spec.P_fixed)
    if spec.mode == P2:
        C = capacity_orthogonal(net.bandwidth, problem.gain, P, net.N0)
        cap = (share * C).sum(axis=1).mean(axis=0) * problem.dt
    else:
        M, n = problem.x.shape[:2]
        g = problem.gain.reshape(M * n, -1)
        C = np.empty((M * n, problem.E))
        for e in range(problem.E):
            den = net.N0
            for f, chn in problem.imap.terms[e]:
                den = den + g[:, chn] * P[f]
            C[:, e] = net.bandwidth * np.log1p(g[:, e] * P[e] / den) / LN2
        cap = C.reshape(M, n, -1).sum(axis=1).mean(axis=0) * problem.dt
    cost = float(np.sum(share * spec.cost.value(P)) * H) if spec.power_control else 0.0

    paths = [_bfs_path(net, i, d) for i, d in spec.flows.flows]
    idx = net.link_index()
    uses = np.zeros(problem.E)
    for path in paths:
        for lk in zip(path, path[1:]):
            uses[idx[lk]] += 1
    lam = np.empty((len(paths), len(problem.tau)))
    for f, path in enumerate(paths):
        per_link = [cap[idx[lk]] / H / uses[idx[lk]] for lk in zip(path, path[1:])]
        rate = min([net.lambda_max, net.R_max] + per_link)
        lam[f] = max(rate, 0.0)
    return problem.utility_integral(lam) - cost


def _bfs_path(net: Network, src: int, dst: int) -> list[int]:
    prev = {src: None}
    frontier = deque([src])
    out = {i: sorted(b for a, b in net.links if a == i) for i in range(net.n_nodes)}
    while frontier:
        u = frontier.popleft()
        if u == dst:
            break
        for v in out[u]:
            if v not in prev:
                prev[v] = u
                frontier.append(v)
    if dst not in prev:
        raise ValueError(f"no path from {src} to {dst}")
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def recover_primal(r_history_sum: np.ndarray, count: int, problem: DualProblem,
                   m: Multipliers) -> PrimalRecovery:
    """Running-average routing, final-multiplier rates and the power/schedule policy."""
    if count < 1:
        raise ValueError("need at least one iteration")
    r_bar = r_history_sum / count
    lam = problem.rates(m)
    final = m.copy()
    policy = lambda: problem.channel_terms(final)  # noqa: E731
    return PrimalRecovery(r_bar, lam, final, policy)


def estimate_expectations(spec: ProblemSpec, m: Multipliers) -> ExpectationEstimates:
    return DualProblem(spec).estimate(m)


def subgradients(spec_or_problem, est: ExpectationEstimates) -> Multipliers:
    problem = spec_or_problem if isinstance(spec_or_problem, DualProblem) else DualProblem(spec_or_problem)
    return problem.subgradients(est)


def solve_dual(spec: ProblemSpec, problem: DualProblem | None = None,
               progress_every: int = 0) -> DualResult:
    problem = problem or DualProblem(spec)
    m = problem.initial_multipliers()
    trace = DualTrace()
    candidate = feasible_primal_candidate(problem)
    r_sum = np.zeros((problem.E, problem.D))
    violations = 0
    status = MAX_ITERS
    prev_flat = problem.active_flat(m)
    for eta in range(1, spec.max_iters + 1):
        est = problem.estimate(m)
        r_sum += est.r_int / problem.horizon
        value, se = problem.dual_value(m, est, est.lam)
        g = problem.subgradients(est)
        kappa = step_size(eta, spec.A_prime)
        m = update_multipliers(m, g, kappa)
        flat = problem.active_flat(m)
        ok = value + 3 * se >= candidate
        violations += not ok
        trace.etas.append(eta)
        trace.kappas.append(kappa)
        trace.dual.append(value)
        trace.dual_se.append(se)
        trace.grad_norm.append(float(np.linalg.norm(problem.active_flat(g))))
        trace.change.append(float(np.abs(flat - prev_flat).sum()))
        trace.weak_duality_ok.append(bool(ok))
        prev_flat = flat
        if _snapshot_due(eta, spec.trace_every):
            trace.snapshots[eta] = flat
        if progress_every and eta % progress_every == 0:
            log.info("eta=%d dual=%.6g change8=%.3g", eta, value, sum(trace.change[-spec.window:]))
        if converged(trace.change, spec.window, spec.tol):
            status = CONVERGED
            break
    trace.snapshots[trace.etas[-1]] = prev_flat
    primal = recover_primal(r_sum, trace.iterations, problem, m)
    est = problem.estimate(m)
    lam = problem.rates(m)
    value, se = problem.dual_value(m, est, lam)
    cap, pw, _, policy = problem.channel_terms(m)
    report = RunReport(
        status=status, iterations=trace.iterations, dual_value=value, dual_se=se,
        rates=lam.mean(axis=1),
        summed_utility=problem.utility_integral(lam) / problem.horizon,
        policy_power=float(policy.mean() / problem.horizon),
        radiated_power=float(pw.mean() / problem.horizon),
        primal_candidate=candidate, weak_duality_violations=violations,
        heuristic=spec.heuristic)
    return DualResult(m, trace, primal, report)
