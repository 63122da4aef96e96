"""Experiment drivers: single runs, parameter sweeps and the oracle checks.

Every driver writes CSV files (and optional SVG charts) under the output
directory and returns an in-memory summary with a list of verdicts. A
verdict states the comparison that was made, its margin and the Monte Carlo
standard errors involved.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import channel_sde as ch
from .config import RunConfig, dumps, parse_pairs
from .dual_solver import (
    CONVERGED,
    DualProblem,
    DualResult,
    ProblemSpec,
    solve_dual,
)
from .layer_subproblems import LAMBDA_EPS, LOG
from .net_model import (
    FlowSet,
    Network,
    assign_random_flows,
    build_grid,
    capacity_orthogonal,
    enumerate_maximal_independent_sets,
    make_flows,
    write_flows_csv,
    write_sets_csv,
)
from .outputs import write_csv, write_json
from .svg import line_chart

log = logging.getLogger(__name__)

TV_DELTA = "sinusoid offset=35 amplitude=15 omega=31.41592653589793"
HIGH_EARLY = (500.0, 100.0, 10.0)
LOW_EARLY = (10.0, 100.0, 500.0)


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class Outcome:
    config: RunConfig
    spec: ProblemSpec
    problem: DualProblem
    result: DualResult
    files: list[Path] = field(default_factory=list)
    seconds: float = 0.0  # wall time of the solve (not written to disk)

    @property
    def report(self):
        return self.result.report

    @property
    def converged(self) -> bool:
        return self.report.status == CONVERGED

    @property
    def summed_utility_se(self) -> float:
        # envelope argument: the optimal value moves by ell_e per unit of E[int C_e],
        # so the dual-value SE is the Monte Carlo SE of the optimum
        return self.report.dual_se / self.problem.horizon


@dataclass
class Study:
    """Result of a multi-run driver."""

    name: str
    rows: list[dict]
    verdicts: list[Verdict]
    outcomes: list[Outcome] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


class OracleRefusal(ValueError):
    """Instance is outside what the brute-force oracle can handle."""


# -- builders --------------------------------------------------------------------


def build_network(cfg: RunConfig) -> Network:
    p, top = cfg.problem, cfg.topology
    params = dict(bandwidth=p.B, N0=p.N0, P_max=p.P_max, P_min=p.P_min, P_i_max=p.P_i_max,
                  R_max=p.R_max, lambda_max=p.lambda_max)
    if top.links:
        links = tuple(parse_pairs(top.links))
        n_nodes = 1 + max(max(lk) for lk in links)
        return Network(n_nodes, links, **params).with_conflicts(top.interference)
    return build_grid(top.rows, top.cols, top.interference, **params)


def build_flows(cfg: RunConfig, net: Network) -> FlowSet:
    if cfg.topology.flows:
        return make_flows(net, parse_pairs(cfg.topology.flows))
    return assign_random_flows(net, cfg.topology.traffic_seed)


def build_spec(cfg: RunConfig) -> ProblemSpec:
    net = build_network(cfg)
    flows = build_flows(cfg, net)
    p, s = cfg.problem, cfg.solver
    family = enumerate_maximal_independent_sets(net.conflicts) if p.mode == "P2" else None
    return ProblemSpec(
        net=net, flows=flows, channel=cfg.channel_model(), grid=cfg.grid(), mode=p.mode,
        power_control=p.power_control, scheduling=p.scheduling, family=family,
        utilities=cfg.utility(), cost=cfg.cost(), P_fixed=p.P_fixed, M=cfg.mc.M,
        seed=cfg.mc.seed, A_prime=s.A_prime, max_iters=s.max_iters, tol=s.tol,
        window=s.window, init=s.init)


# -- single run ------------------------------------------------------------------


def run(cfg: RunConfig, out_dir: Path | None = None, write: bool = True,
        progress_every: int = 0) -> Outcome:
    """Solve the dual for one config and write its artefacts."""
    spec = build_spec(cfg)
    problem = DualProblem(spec)
    log.info("run %s: %d links, %d flows, mode %s", cfg.name, spec.net.n_links,
             len(spec.flows.flows), spec.mode)
    t0 = time.perf_counter()
    result = solve_dual(spec, problem, progress_every=progress_every)
    outcome = Outcome(cfg, spec, problem, result, seconds=time.perf_counter() - t0)
    if write:
        target = Path(out_dir) if out_dir is not None else cfg.output_dir() / cfg.name
        outcome.files = write_run(target, outcome)
        result.report.files = [str(f) for f in outcome.files]
    return outcome


def write_run(directory: Path, outcome: Outcome) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg, spec, problem, res = outcome.config, outcome.spec, outcome.problem, outcome.result
    rep, trace = res.report, res.trace
    files = []

    (directory / "config.cfg").write_text(dumps(cfg))
    files.append(directory / "config.cfg")

    ids = problem.multiplier_ids()
    rows = []
    for eta in sorted(trace.snapshots):
        k = eta - 1
        rows.append([eta, trace.kappas[k], trace.dual[k], trace.dual_se[k], trace.grad_norm[k],
                     trace.change[k], *trace.snapshots[eta]])
    files.append(write_csv(directory / "trace.csv",
                           ["eta", "kappa", "dual_estimate", "dual_se", "subgradient_norm",
                            "multiplier_change", *ids], rows))

    lam = res.primal.lam
    flows = spec.flows.flows
    util = [float(np.mean(u.value(lam[f], problem.tau))) for f, u in enumerate(spec.utilities)]
    files.append(write_csv(directory / "rates.csv",
                           ["flow", "source", "destination", "rate", "utility"],
                           [[f, i, d, rep.rates[f], util[f]] for f, (i, d) in enumerate(flows)]))
    if any(u.time_varying for u in spec.utilities):
        files.append(write_csv(directory / "rates_t.csv",
                               ["tau", *[f"flow_{f}" for f in range(len(flows))]],
                               [[t, *lam[:, b]] for b, t in enumerate(problem.tau)]))

    est = problem.estimate(res.multipliers)
    H = problem.horizon
    link_rows = []
    for e, (i, j) in enumerate(spec.net.links):
        link_rows.append([e, i, j, res.multipliers.ell[e], est.cap[e] / H, est.cap_se[e] / H,
                          est.policy_power[e] / H, est.power[e] / H, est.power_se[e] / H])
    files.append(write_csv(directory / "links.csv",
                           ["link", "tx", "rx", "ell", "capacity", "capacity_se",
                            "policy_power", "radiated_power", "radiated_power_se"], link_rows))

    write_flows_csv(directory / "flows.csv", spec.flows)
    files.append(directory / "flows.csv")
    if spec.family is not None:
        write_sets_csv(directory / "sets.csv", spec.net, spec.family)
        files.append(directory / "sets.csv")

    if cfg.outputs.emit_paths:
        files.append(_write_paths(directory / "paths.csv", spec))

    if cfg.outputs.emit_svg:
        etas = sorted(trace.snapshots)
        files.append(directory / "dual.svg")
        line_chart(files[-1], {"dual estimate": (trace.etas, trace.dual)},
                   title=f"{cfg.name}: dual objective", xlabel="iteration", ylabel="dual",
                   logx=True)
        snap = np.array([trace.snapshots[e] for e in etas])
        for prefix, label in (("mu_", "mu"), ("l_", "l"), ("nu_", "nu")):
            cols = [k for k, name in enumerate(ids) if name.startswith(prefix)]
            if not cols:
                continue
            files.append(directory / f"multipliers_{label}.svg")
            line_chart(files[-1], {ids[k]: (etas, snap[:, k]) for k in cols},
                       title=f"{cfg.name}: {label} multipliers", xlabel="iteration",
                       ylabel=label, logx=True)

    report = {
        "name": cfg.name,
        "status": rep.status,
        "converged": rep.status == CONVERGED,
        "iterations": rep.iterations,
        "dual_value": rep.dual_value,
        "dual_se": rep.dual_se,
        "summed_utility": rep.summed_utility,
        "summed_utility_se": outcome.summed_utility_se,
        "rates": {f"{i}>{d}": r for (i, d), r in zip(flows, rep.rates)},
        "expected_link_power_w": rep.policy_power,
        "radiated_link_power_w": rep.radiated_power,
        "primal_candidate": rep.primal_candidate,
        "weak_duality_violations": rep.weak_duality_violations,
        "label": "heuristic dual" if rep.heuristic else "dual",
        "files": sorted(str(f.name) for f in files) + ["report.json"],
    }
    files.append(write_json(directory / "report.json", report))
    return files


def _write_paths(path: Path, spec: ProblemSpec) -> Path:
    """Sampled state of channel 0 on every Monte Carlo path."""
    grid = spec.grid
    tau = grid.nodes
    rows = []
    if isinstance(spec.channel, ch.StfChannelModel):
        for p in range(spec.M):
            sp = ch.sample_stf_path(spec.channel, grid, (spec.seed, p), 0, spec.quad_substeps)
            i_c, q_c = sp.values
            rows += [[p, b, tau[b], i_c[b], q_c[b]] for b in range(grid.n + 1)]
        return write_csv(path, ["path", "b", "tau", "i", "q"], rows)
    coeffs = ch.ltf_step_coefficients(spec.channel, grid, spec.quad_substeps)
    for p in range(spec.M):
        x = ch.sample_ltf_path(spec.channel, coeffs, (spec.seed, p), 0).values
        rows += [[p, b, tau[b], x[b]] for b in range(grid.n + 1)]
    return write_csv(path, ["path", "b", "tau", "x_db"], rows)


# -- helpers for sweeps ------------------------------------------------------------


def _label(value) -> str:
    text = str(value).strip()
    try:
        return f"{float(text):g}"
    except ValueError:
        return "tv" if text.startswith(ch.SINUSOID) or text == "tv" else text.split()[0]


def _delta_text(value) -> str:
    if isinstance(value, str) and value.strip().lower() == "tv":
        return TV_DELTA
    return str(value)


def _nondecreasing(values: Sequence[float], strict: bool = False) -> bool:
    d = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(d > 0) if strict else np.all(d >= 0))


def _out(cfg: RunConfig, out_dir: Path | None, sub: str) -> Path:
    return Path(out_dir) if out_dir is not None else cfg.output_dir() / sub


# -- delta sweep (Theorem 3 at network level) ----------------------------------------


def sweep_delta(cfg: RunConfig, deltas: Sequence, crn: bool = True,
                out_dir: Path | None = None, write: bool = True) -> Study:
    """One run per noise level; CRN keeps the same path keys for every level."""
    if len(deltas) < 2:
        raise ValueError("need at least two delta values")
    base = _out(cfg, out_dir, f"{cfg.name}_sweep_delta")
    outcomes, rows = [], []
    for k, d in enumerate(deltas):
        label = _label(_delta_text(d))
        c = cfg.with_values(channel={"delta": _delta_text(d)},
                            mc={"seed": cfg.mc.seed if crn else cfg.mc.seed + k},
                            name=f"delta_{label}")
        o = run(c, out_dir=base / f"delta_{label}", write=write)
        outcomes.append(o)
        rep = o.report
        rows.append({"delta": label, "status": rep.status, "iterations": rep.iterations,
                     "dual_value": rep.dual_value, "dual_se": rep.dual_se,
                     "summed_utility": rep.summed_utility,
                     "summed_utility_se": o.summed_utility_se,
                     "expected_link_power": rep.policy_power,
                     "radiated_link_power": rep.radiated_power,
                     "weak_duality_violations": rep.weak_duality_violations,
                     **{f"rate_{f}": r for f, r in enumerate(rep.rates)}})
    verdicts = delta_verdicts(rows, power_control=cfg.problem.power_control)
    study = Study(f"{cfg.name}_sweep_delta", rows, verdicts, outcomes)
    if write:
        study.files = _write_study(base, "sweep_delta", rows, verdicts)
        numeric = [r for r in rows if _is_number(r["delta"])]
        if cfg.outputs.emit_svg and numeric:
            n_flows = len(outcomes[0].report.rates)
            series = {f"delta={r['delta']}": (list(range(n_flows)),
                                              [r[f"rate_{f}"] for f in range(n_flows)])
                      for r in rows}
            line_chart(base / "rates_by_flow.svg", series, title="optimal source rates",
                       xlabel="flow", ylabel="rate (bits/s)")
            study.files.append(base / "rates_by_flow.svg")
    return study


def _is_number(text) -> bool:
    try:
        float(text)
        return True
    except (TypeError, ValueError):
        return False


def delta_verdicts(rows: list[dict], power_control: bool = False) -> list[Verdict]:
    numeric = sorted((r for r in rows if _is_number(r["delta"])), key=lambda r: float(r["delta"]))
    out = []
    if len(numeric) >= 2:
        s = [r["summed_utility"] for r in numeric]
        se = [r["summed_utility_se"] for r in numeric]
        desc = ", ".join(f"d={r['delta']}: {v:.6g} (se {e:.2g})"
                         for r, v, e in zip(numeric, s, se))
        out.append(Verdict("summed utility nondecreasing in delta", _nondecreasing(s), desc))
        n_flows = sum(1 for k in numeric[0] if k.startswith("rate_"))
        ok = [f for f in range(n_flows)
              if _nondecreasing([r[f"rate_{f}"] for r in numeric])]
        out.append(Verdict("every flow rate nondecreasing in delta", len(ok) == n_flows,
                           f"{len(ok)} of {n_flows} flows nondecreasing"))
        if power_control:
            p = [r["expected_link_power"] for r in numeric]
            out.append(Verdict(
                "expected per-link power strictly decreasing in delta",
                _nondecreasing(p[::-1], strict=True),
                ", ".join(f"d={r['delta']}: {v:.6g} W" for r, v in zip(numeric, p))))
    tv = [r for r in rows if r["delta"] == "tv"]
    lo = [r for r in numeric if float(r["delta"]) == 20.0]
    hi = [r for r in numeric if float(r["delta"]) == 50.0]
    if tv and lo and hi:
        v, a, b = tv[0]["summed_utility"], lo[0]["summed_utility"], hi[0]["summed_utility"]
        out.append(Verdict("time-varying delta between delta=20 and delta=50", a <= v <= b,
                           f"{a:.6g} <= {v:.6g} <= {b:.6g}"))
    return out


def _write_study(base: Path, stem: str, rows: list[dict], verdicts: list[Verdict]) -> list[Path]:
    base.mkdir(parents=True, exist_ok=True)
    header = list(rows[0]) if rows else []
    files = [write_csv(base / f"{stem}.csv", header, [[r.get(h, "") for h in header]
                                                      for r in rows])]
    (base / "verdicts.txt").write_text("".join(v.line() + "\n" for v in verdicts))
    files.append(base / "verdicts.txt")
    files.append(write_json(base / f"{stem}.json",
                            {"rows": rows, "verdicts": [v.__dict__ for v in verdicts]}))
    return files


# -- convex order (channel level) -----------------------------------------------------


def verify_convex_order(cfg: RunConfig, deltas: Sequence[float] = (0, 5, 20, 25, 50),
                        M: int = 5000, checkpoints: int = 4, out_dir: Path | None = None,
                        write: bool = True) -> Study:
    """E[X(t)] is delta-invariant while E[C] grows with delta (common random numbers).

    Uses the channel section of ``cfg`` (the delta entry is replaced) and the
    fixed transmit power ``P_fixed``; no optimisation is involved.
    """
    if M < 1000:
        raise ValueError("convex-order check needs M >= 1000")
    if len(deltas) < 2:
        raise ValueError("need at least two delta values")
    deltas = [float(d) for d in deltas]
    p = cfg.problem
    grid = cfg.grid()
    idx = sorted({int(round(k * grid.n / checkpoints)) for k in range(1, checkpoints + 1)})
    X, C_int, C_pts = {}, {}, {}
    for d in deltas:
        c = cfg.with_values(channel={"delta": repr(d)})
        model = c.channel_model()
        coeffs = ch.ltf_step_coefficients(model, grid)
        x = ch.sample_ltf_paths(model, coeffs, cfg.mc.seed, range(M))[:, 0]
        C = capacity_orthogonal(p.B, ch.attenuation_ltf(x), p.P_fixed, p.N0)
        X[d] = x
        C_int[d] = C[:, :-1].sum(axis=1) * grid.dt
        C_pts[d] = C[:, idx]

    def mse(a):
        return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))

    ref = deltas[0]
    rows = []
    worst = 0.0
    for d in deltas:
        for k in idx:
            diff = X[d][:, k] - X[ref][:, k]
            m_diff, se_diff = mse(diff)
            ratio = abs(m_diff) / se_diff if se_diff > 0 else (0.0 if m_diff == 0 else math.inf)
            worst = max(worst, ratio)
            mx, sx = mse(X[d][:, k])
            mc, sc = mse(C_pts[d][:, idx.index(k)])
            rows.append({"delta": d, "b": k, "tau": float(grid.nodes[k]), "mean_x": mx,
                         "se_x": sx, "paired_diff_x": m_diff, "paired_diff_se": se_diff,
                         "mean_c": mc, "se_c": sc})
    cap = [mse(C_int[d]) for d in deltas]
    order = sorted(range(len(deltas)), key=lambda k: deltas[k])
    means = [cap[k][0] for k in order]
    gap_m, gap_se = mse(C_int[deltas[order[-1]]] - C_int[deltas[order[0]]])
    verdicts = [
        Verdict("E[X(t)] invariant in delta", worst <= 3.0,
                f"largest |paired mean difference| = {worst:.3g} SE at checkpoints b={idx} "
                f"(limit 3 SE, reference delta={ref:g})"),
        Verdict("E[int C dt] strictly increasing in delta", _nondecreasing(means, strict=True),
                ", ".join(f"d={deltas[k]:g}: {cap[k][0]:.9g} (se {cap[k][1]:.2g})" for k in order)),
        Verdict("E[int C dt] separation, largest vs smallest delta",
                gap_se > 0 and gap_m > 3 * gap_se,
                f"difference {gap_m:.6g} bits, paired SE {gap_se:.3g} "
                f"({gap_m / gap_se if gap_se > 0 else math.inf:.3g} SE; need > 3)"),
    ]
    summary = [{"delta": deltas[k], "mean_int_c": cap[k][0], "se_int_c": cap[k][1]}
               for k in order]
    study = Study(f"{cfg.name}_convex_order", rows + summary, verdicts)
    if write:
        base = _out(cfg, out_dir, f"{cfg.name}_convex_order")
        study.files = _write_study(base, "convex_order", rows, verdicts)
        study.files.append(write_csv(base / "capacity_integral.csv",
                                     ["delta", "mean_int_c", "se_int_c"],
                                     [[r["delta"], r["mean_int_c"], r["se_int_c"]]
                                      for r in summary]))
        if cfg.outputs.emit_svg:
            line_chart(base / "mean_x.svg",
                       {f"delta={d:g}": (grid.nodes, X[d].mean(axis=0)) for d in deltas},
                       title="E[X(t)] by delta", xlabel="t (s)", ylabel="dB")
            study.files.append(base / "mean_x.svg")
    return study


# -- brute-force oracle ---------------------------------------------------------------


def _check_oracle_instance(cfg: RunConfig, spec: ProblemSpec) -> list[int]:
    c = spec.channel
    if spec.mode != "P2":
        raise OracleRefusal("oracle covers orthogonal access (P2) only")
    if spec.net.n_links > 2:
        raise OracleRefusal(f"{spec.net.n_links} links exceed the oracle budget of 2")
    if len(spec.flows.flows) != 1:
        raise OracleRefusal("oracle handles a single flow")
    if not isinstance(c, ch.LtfChannelModel):
        raise OracleRefusal("oracle needs an LTF channel")
    if not all(f.kind == ch.CONSTANT for f in (c.beta, c.gamma, c.delta)):
        raise OracleRefusal("oracle needs constant coefficients")
    if c.delta.value != 0.0 or c.x0 != c.gamma.value:
        raise OracleRefusal("oracle needs delta = 0 and x0 = gamma (deterministic constant channel)")
    if any(u.time_varying or u.kind != LOG for u in spec.utilities):
        raise OracleRefusal("oracle handles time-invariant log utility")
    if spec.power_control and spec.net.n_links > 1:
        raise OracleRefusal("power control is only gridded for a single link")
    src, dst = spec.flows.flows[0]
    idx = spec.net.link_index()
    path, node = [], src
    while node != dst:
        nxt = [(a, b) for (a, b) in spec.net.links if a == node]
        if len(nxt) != 1:
            raise OracleRefusal("links must form one simple path from source to destination")
        path.append(idx[nxt[0]])
        node = nxt[0][1]
        if len(path) > spec.net.n_links:
            raise OracleRefusal("links must form one simple path")
    if len(path) != spec.net.n_links:
        raise OracleRefusal("every link must lie on the flow's path")
    return path


def oracle_primal(spec: ProblemSpec, resolution: float = 1e-3) -> dict:
    """Grid search over feasible (lambda, schedule fraction, power)."""
    net = spec.net
    path = _check_oracle_instance(None, spec)
    H = spec.grid.T - spec.grid.s
    a = float(ch.attenuation_ltf(spec.channel.gamma.value))
    lam_top = min(net.lambda_max, net.R_max)
    lam_grid = np.arange(1, int(round(1 / resolution)) + 1) * resolution * net.lambda_max
    lam_grid = lam_grid[lam_grid <= lam_top + 1e-15]
    conflict = len(path) == 2 and path[1] in net.conflicts[path[0]]

    def best_lambda(cap_per_s):
        # largest grid rate not above the capacity (per link, broadcast)
        cap = np.minimum(np.asarray(cap_per_s, float), lam_top)
        k = np.floor(cap / (resolution * net.lambda_max) + 1e-9).astype(int)
        k = np.minimum(k, len(lam_grid))
        return np.where(k >= 1, lam_grid[np.maximum(k - 1, 0)], 0.0)

    if spec.power_control:
        th = np.linspace(0, 1, int(round(1 / resolution)) + 1)[:, None]
        P = np.linspace(net.P_min, net.P_max, int(round(1 / resolution)) + 1)[None, :]
        cap = th * capacity_orthogonal(net.bandwidth, a, P, net.N0)
        energy = th * P * H
        lam = best_lambda(cap)
        cost = spec.cost.value(P) * th * H
        obj = np.where((energy <= net.P_i_max + 1e-12) & (lam > 0),
                       H * np.log(np.maximum(lam, LAMBDA_EPS)) - cost, -np.inf)
        k = np.unravel_index(int(np.argmax(obj)), obj.shape)
        return {"primal": float(obj[k]), "lambda": float(lam[k]), "share": float(th[k[0], 0]),
                "power": float(P[0, k[1]])}
    c1 = float(capacity_orthogonal(net.bandwidth, a, spec.P_fixed, net.N0))
    if len(path) == 1:
        share = 1.0 if spec.scheduling else float(spec.time_shares[path[0]])
        lam = float(best_lambda(share * c1))
        return {"primal": H * math.log(max(lam, LAMBDA_EPS)), "lambda": lam, "share": share,
                "power": spec.P_fixed}
    if spec.scheduling and conflict:
        phi = np.linspace(0, 1, int(round(1 / resolution)) + 1)
    elif spec.scheduling:
        phi = np.array([1.0])  # both links fit in one set
    else:
        phi = np.array([float(spec.time_shares[path[0]])])
    share2 = (1 - phi) if (spec.scheduling and conflict) else (
        np.ones_like(phi) if spec.scheduling else np.full_like(phi, spec.time_shares[path[1]]))
    lam = best_lambda(np.minimum(phi * c1, share2 * c1))
    k = int(np.argmax(lam))
    return {"primal": H * math.log(max(float(lam[k]), LAMBDA_EPS)), "lambda": float(lam[k]),
            "share": float(phi[k]), "power": spec.P_fixed}


def oracle_small_instance(cfg: RunConfig, tol: float | None = None,
                          out_dir: Path | None = None, write: bool = True) -> Study:
    """Compare the converged dual value with a brute-force primal optimum."""
    spec = build_spec(cfg)
    _check_oracle_instance(cfg, spec)
    oracle = oracle_primal(spec)
    base = _out(cfg, out_dir, f"{cfg.name}_oracle")
    o = run(cfg, out_dir=base / "run", write=write)
    dual = o.report.dual_value
    gap = abs(dual - oracle["primal"]) / abs(oracle["primal"]) if oracle["primal"] else math.inf
    if tol is None:
        tol = 0.02 if spec.net.n_links == 1 else 0.03
    row = {"links": spec.net.n_links, "scheduling": spec.scheduling,
           "power_control": spec.power_control, "dual": dual, "dual_se": o.report.dual_se,
           "primal_oracle": oracle["primal"], "oracle_lambda": oracle["lambda"],
           "oracle_share": oracle["share"], "oracle_power": oracle["power"],
           "solver_lambda": float(o.report.rates[0]), "relative_gap": gap,
           "status": o.report.status, "iterations": o.report.iterations,
           "weak_duality_violations": o.report.weak_duality_violations}
    verdicts = [Verdict("dual vs brute-force primal gap", gap <= tol,
                        f"|{dual:.6g} - {oracle['primal']:.6g}| / |primal| = {gap:.3%} "
                        f"(limit {tol:.0%})"),
                Verdict("weak duality at every iteration", o.report.weak_duality_violations == 0,
                        f"{o.report.weak_duality_violations} violations in "
                        f"{o.report.iterations} iterations")]
    study = Study(f"{cfg.name}_oracle", [row], verdicts, [o])
    if write:
        study.files = _write_study(base, "oracle", [row], verdicts)
    return study


# -- horizon and sample-count sweeps ---------------------------------------------------


def sweep_T(cfg: RunConfig, Ts: Sequence[float], proportional_n: bool = True,
            out_dir: Path | None = None, write: bool = True) -> Study:
    """Iterations to convergence and rates against the horizon T (n scales with T)."""
    base = _out(cfg, out_dir, f"{cfg.name}_sweep_T")
    rows, outcomes = [], []
    span0 = cfg.time.T - cfg.time.s
    for T in Ts:
        n = max(1, int(round(cfg.time.n * (T - cfg.time.s) / span0))) if proportional_n \
            else cfg.time.n
        c = cfg.with_values(time={"T": float(T), "n": n}, name=f"T_{T:g}")
        o = run(c, out_dir=base / f"T_{T:g}", write=write)
        outcomes.append(o)
        rows.append({"T": float(T), "n": n, "status": o.report.status,
                     "iterations": o.report.iterations,
                     "summed_utility": o.report.summed_utility,
                     **{f"rate_{f}": r for f, r in enumerate(o.report.rates)}})
    it = [r["iterations"] for r in rows]
    su = [r["summed_utility"] for r in rows]
    n_flows = len(outcomes[0].report.rates)
    flows_ok = sum(_nondecreasing([-r[f"rate_{f}"] for r in rows]) for f in range(n_flows))
    verdicts = [
        Verdict("iterations nondecreasing in T", _nondecreasing(it),
                ", ".join(f"T={r['T']:g}: {r['iterations']}" for r in rows)),
        Verdict("summed utility nonincreasing in T", _nondecreasing(su[::-1]),
                ", ".join(f"T={r['T']:g}: {r['summed_utility']:.6g}" for r in rows)),
        Verdict("every flow rate nonincreasing in T", flows_ok == n_flows,
                f"{flows_ok} of {n_flows} flows nonincreasing"),
    ]
    study = Study(f"{cfg.name}_sweep_T", rows, verdicts, outcomes)
    if write:
        study.files = _write_study(base, "sweep_T", rows, verdicts)
        if cfg.outputs.emit_svg:
            line_chart(base / "iterations.svg", {"iterations": ([r["T"] for r in rows], it)},
                       title="iterations to convergence", xlabel="T (s)", ylabel="iterations")
            study.files.append(base / "iterations.svg")
    return study


def sweep_n(cfg: RunConfig, ns: Sequence[int], time_varying_cfg: RunConfig | None = None,
            out_dir: Path | None = None, write: bool = True, spread: float = 0.2) -> Study:
    """Iterations to convergence against the number of samples n."""
    base = _out(cfg, out_dir, f"{cfg.name}_sweep_n")
    rows, outcomes = [], []
    cases = [("time-invariant", cfg)]
    if time_varying_cfg is not None:
        cases.append(("time-varying", time_varying_cfg))
    for label, c0 in cases:
        for n in ns:
            c = c0.with_values(time={"n": int(n)}, name=f"{label}_n_{n}")
            o = run(c, out_dir=base / f"{label}_n_{n}", write=write)
            outcomes.append(o)
            rows.append({"utility": label, "n": int(n), "status": o.report.status,
                         "iterations": o.report.iterations,
                         "summed_utility": o.report.summed_utility})
    inv = [r["iterations"] for r in rows if r["utility"] == "time-invariant"]
    rel = (max(inv) - min(inv)) / min(inv) if inv and min(inv) > 0 else 0.0
    verdicts = [Verdict("time-invariant iteration counts within +/-20%", rel <= spread,
                        f"counts {inv}, spread {rel:.1%} of the smallest")]
    tv = [r["iterations"] for r in rows if r["utility"] == "time-varying"]
    if tv:
        verdicts.append(Verdict("time-varying iteration counts (reported only)", True,
                                f"counts {tv}"))
    study = Study(f"{cfg.name}_sweep_n", rows, verdicts, outcomes)
    if write:
        study.files = _write_study(base, "sweep_n", rows, verdicts)
    return study


# -- time-varying channel and utility experiments ---------------------------------------


def _beta_text(schedule: Sequence[float]) -> str:
    values = ",".join(f"{v:g}" for v in schedule)
    k = len(schedule)
    breaks = ",".join(repr(j / k) for j in range(1, k))
    return f"piecewise values={values} breaks={breaks}" if k > 1 else f"{schedule[0]:g}"


def run_time_varying_beta(cfg: RunConfig,
                          schedules: Sequence[Sequence[float]] = (HIGH_EARLY, LOW_EARLY),
                          out_dir: Path | None = None, write: bool = True) -> Study:
    """Rates under piecewise-constant beta schedules over equal parts of [s, T]."""
    base = _out(cfg, out_dir, f"{cfg.name}_tv_beta")
    rows, outcomes = [], []
    for sch in schedules:
        label = "-".join(f"{v:g}" for v in sch)
        c = cfg.with_values(channel={"beta": _beta_text(sch)}, name=f"beta_{label}")
        o = run(c, out_dir=base / f"beta_{label}", write=write)
        outcomes.append(o)
        rows.append({"schedule": label, "status": o.report.status,
                     "iterations": o.report.iterations,
                     "summed_utility": o.report.summed_utility,
                     "summed_utility_se": o.summed_utility_se,
                     "mean_capacity": float(o.problem.estimate(o.result.multipliers).cap.mean()
                                            / o.problem.horizon),
                     **{f"rate_{f}": r for f, r in enumerate(o.report.rates)}})
    verdicts = []
    if len(rows) >= 2:
        a, b = rows[0], rows[1]
        verdicts.append(Verdict(
            f"schedule {a['schedule']} summed utility >= schedule {b['schedule']}",
            a["summed_utility"] >= b["summed_utility"],
            f"{a['summed_utility']:.6g} (se {a['summed_utility_se']:.2g}) vs "
            f"{b['summed_utility']:.6g} (se {b['summed_utility_se']:.2g})"))
    study = Study(f"{cfg.name}_tv_beta", rows, verdicts, outcomes)
    if write:
        study.files = _write_study(base, "tv_beta", rows, verdicts)
    return study


def rate_curve(mu: float, tau, lambda_max: float, weight: float = 1.0) -> np.ndarray:
    """Optimal rate lambda*(t) = clip(w / (t mu)) of the utility w log(lambda)/t."""
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore"):
        raw = np.where(mu > 0, weight / (tau * mu), np.inf)
    return np.clip(raw, LAMBDA_EPS, lambda_max)


def run_time_varying_utilities(cfg: RunConfig, out_dir: Path | None = None,
                               write: bool = True) -> Study:
    """Solve with U = log(lambda)/t and check the rate curves lambda*(t)."""
    u = cfg.utility()
    if not u.time_varying:
        raise ValueError("config must use the scaled-log-over-time utility")
    base = _out(cfg, out_dir, f"{cfg.name}_tv_utilities")
    o = run(cfg, out_dir=base / "run", write=write)
    problem, m = o.problem, o.result.multipliers
    lam = o.result.primal.lam
    tau = problem.tau
    lam_max = o.spec.net.lambda_max
    rows, decreasing, exact = [], 0, 0
    for f, (i, d) in enumerate(o.spec.flows.flows):
        mu = float(m.mu[problem.src[f], problem.fdest[f]])
        curve = lam[f]
        ref = rate_curve(mu, tau, lam_max, u.weight)
        free = ref < lam_max
        dec = bool(np.all(np.diff(curve) <= 0) and np.all(np.diff(curve[free]) < 0))
        clip_ok = bool(np.array_equal(curve, ref) and np.all(curve[~free] == lam_max))
        decreasing += dec
        exact += clip_ok
        cross = 1.0 / (mu * lam_max) if mu > 0 and lam_max > 0 else math.inf
        rows.append({"flow": f, "source": i, "destination": d, "mu": mu,
                     "clip_until": cross, "decreasing": dec, "matches_closed_form": clip_ok,
                     "rate_start": float(curve[0]), "rate_end": float(curve[-1])})
    n_flows = len(rows)
    verdicts = [
        Verdict("lambda*(t) decreasing over [s, T]", decreasing == n_flows,
                f"{decreasing} of {n_flows} curves nonincreasing and strictly decreasing "
                "where unclipped"),
        Verdict("lambda*(t) equals clip(1/(t mu*)) with exact clipping at lambda_max",
                exact == n_flows, f"{exact} of {n_flows} curves match the closed form"),
    ]
    study = Study(f"{cfg.name}_tv_utilities", rows, verdicts, [o])
    if write:
        study.files = _write_study(base, "tv_utilities", rows, verdicts)
        if cfg.outputs.emit_svg:
            line_chart(base / "rate_curves.svg",
                       {f"flow {f}": (tau, lam[f]) for f in range(n_flows)},
                       title="optimal rate functions", xlabel="t (s)", ylabel="bits/s")
            study.files.append(base / "rate_curves.svg")
    return study
