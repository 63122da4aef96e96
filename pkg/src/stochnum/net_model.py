"""Multihop network: topology, flows, conflicts, independent sets, capacities."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import networkx as nx
import numpy as np

log = logging.getLogger(__name__)

NODE_EXCLUSIVE = "node-exclusive"
TWO_HOP = "two-hop"
LN2 = math.log(2.0)


class EnumerationBlowupError(RuntimeError):
    pass


@dataclass(frozen=True)
class Network:
    """Static directed network with physical constants.

    ``P_i_max`` is the per-node energy budget over [s, T] in W*s.
    ``P_min`` is the lowest transmit power of an active link (0 allows any power).
    """

    n_nodes: int
    links: tuple[tuple[int, int], ...]
    conflicts: tuple[frozenset[int], ...] = ()
    bandwidth: float = 1e6
    N0: float = 0.1
    P_max: float = 3.0
    P_min: float = 0.0
    P_i_max: float = 3.0
    R_max: float = 1.0
    lambda_max: float = 1.0
    positions: tuple[tuple[float, float], ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        for i, j in self.links:
            if i == j:
                raise ValueError(f"self-link ({i}, {j}) not allowed")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"link ({i}, {j}) references unknown node")
        if len(set(self.links)) != len(self.links):
            raise ValueError("duplicate links")
        for name in ("bandwidth", "N0", "P_max", "P_i_max", "R_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be non-negative")
        if not 0 <= self.P_min <= self.P_max:
            raise ValueError("need 0 <= P_min <= P_max")
        if self.conflicts and len(self.conflicts) != len(self.links):
            raise ValueError("one conflict set per link required")

    @property
    def n_links(self) -> int:
        return len(self.links)

    def link_index(self) -> dict[tuple[int, int], int]:
        return {lk: e for e, lk in enumerate(self.links)}

    def out_links(self, i: int) -> list[int]:
        return [e for e, (a, _) in enumerate(self.links) if a == i]

    def in_links(self, i: int) -> list[int]:
        return [e for e, (_, b) in enumerate(self.links) if b == i]

    def neighbors(self, i: int) -> set[int]:
        return {b for a, b in self.links if a == i} | {a for a, b in self.links if b == i}

    def with_conflicts(self, model: str = TWO_HOP) -> "Network":
        return replace(self, conflicts=conflict_sets(self, model))


def build_grid(rows: int, cols: int, interference: str = TWO_HOP, **params) -> Network:
    """Lattice of rows x cols nodes with both directed links per adjacent pair."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    node = lambda r, c: r * cols + c  # noqa: E731
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((node(r, c), node(r, c + 1)))
            if r + 1 < rows:
                edges.append((node(r, c), node(r + 1, c)))
    links = tuple(edges) + tuple((b, a) for a, b in edges)
    positions = tuple((float(c), float(r)) for r in range(rows) for c in range(cols))
    net = Network(rows * cols, links, positions=positions, **params)
    return net.with_conflicts(interference)


def load_edge_list(filename, directed: bool = False, interference: str = TWO_HOP,
                   **params) -> Network:
    """Read ``u v`` pairs (one per line, ``#`` comments) into a Network."""
    edges = []
    with open(filename) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                u, v = map(int, line.split()[:2])
                edges.append((u, v))
    links = list(edges) if directed else list(edges) + [(v, u) for u, v in edges]
    links = tuple(dict.fromkeys(links))
    n_nodes = 1 + max(max(lk) for lk in links)
    return Network(n_nodes, links, **params).with_conflicts(interference)


def conflict_sets(net: Network, model: str = TWO_HOP) -> tuple[frozenset[int], ...]:
    if model not in (NODE_EXCLUSIVE, TWO_HOP):
        raise ValueError(f"unknown interference model {model!r}")
    adjacent = {(a, b) for a, b in net.links} | {(b, a) for a, b in net.links}
    out: list[set[int]] = [set() for _ in net.links]
    for e, f in itertools.combinations(range(net.n_links), 2):
        ends_e, ends_f = set(net.links[e]), set(net.links[f])
        clash = bool(ends_e & ends_f)
        if not clash and model == TWO_HOP:
            clash = any((x, y) in adjacent for x in ends_e for y in ends_f)
        if clash:
            out[e].add(f)
            out[f].add(e)
    return tuple(frozenset(s) for s in out)


@dataclass(frozen=True)
class IndependentSetFamily:
    """Canonically ordered maximal independent sets of links."""

    sets: tuple[tuple[int, ...], ...]
    n_links: int

    @property
    def size(self) -> int:
        return len(self.sets)

    def membership(self) -> list[list[int]]:
        memb: list[list[int]] = [[] for _ in range(self.n_links)]
        for k, st in enumerate(self.sets):
            for e in st:
                memb[e].append(k)
        return memb

    def incidence(self) -> np.ndarray:
        """Boolean (n_links, n_sets) membership matrix."""
        inc = np.zeros((self.n_links, self.size), dtype=bool)
        for k, st in enumerate(self.sets):
            inc[list(st), k] = True
        return inc

    def time_shares(self) -> np.ndarray:
        """Per-link share when every set is scheduled for an equal fraction of time."""
        return self.incidence().sum(axis=1) / self.size


def enumerate_maximal_independent_sets(conflicts: Sequence[frozenset[int]],
                                       cap: int = 10**6) -> IndependentSetFamily:
    """All maximal independent sets, as maximal cliques of the complement graph."""
    n = len(conflicts)
    for e, cs in enumerate(conflicts):
        if any(e not in conflicts[f] for f in cs):
            raise ValueError("conflict relation must be symmetric")
    comp = nx.Graph()
    comp.add_nodes_from(range(n))
    comp.add_edges_from((e, f) for e, f in itertools.combinations(range(n), 2)
                        if f not in conflicts[e])
    sets = []
    for clique in nx.find_cliques(comp):
        sets.append(tuple(sorted(clique)))
        if len(sets) > cap:
            raise EnumerationBlowupError(
                f"more than {cap} maximal independent sets; raise the cap or "
                "use a sparser interference model")
    sets.sort()
    return IndependentSetFamily(tuple(sets), n)


def capacity_orthogonal(B, a, P, N0):
    """B log2(1 + a P / N0) in bits/s."""
    snr = np.asarray(a, dtype=float) * np.asarray(P, dtype=float) / N0
    return B * np.log1p(snr) / LN2


@dataclass(frozen=True)
class InterferenceMap:
    """Channel processes needed by SINR expressions.

    Channels ``0 .. n_links-1`` are the links themselves; further channels are
    (transmitter, receiver) pairs that only carry interference. ``terms[e]``
    lists ``(interfering link, channel)`` for link ``e``.
    """

    pairs: tuple[tuple[int, int], ...]
    terms: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def n_channels(self) -> int:
        return len(self.pairs)


def interference_map(net: Network) -> InterferenceMap:
    """Gain channels for non-orthogonal access.

    An interferer whose transmitter is the receiver itself is left out of
    the SINR sum (no self-channel exists).
    """
    pairs = list(net.links)
    index = {p: c for c, p in enumerate(pairs)}
    terms = []
    for e, (_, j) in enumerate(net.links):
        row = []
        for f in sorted(net.conflicts[e]):
            k = net.links[f][0]
            if k == j:
                continue
            if (k, j) not in index:
                index[(k, j)] = len(pairs)
                pairs.append((k, j))
            row.append((f, index[(k, j)]))
        terms.append(tuple(row))
    return InterferenceMap(tuple(pairs), tuple(terms))


def capacity_nonorthogonal(net: Network, gains, P, link: int,
                           imap: InterferenceMap | None = None):
    """SINR capacity of ``link``; ``gains`` indexed by channel on the last axis."""
    imap = imap or interference_map(net)
    gains = np.asarray(gains, dtype=float)
    P = np.asarray(P, dtype=float)
    interference = net.N0
    for f, ch in imap.terms[link]:
        interference = interference + gains[..., ch] * P[..., f]
    sinr = gains[..., link] * P[..., link] / interference
    return net.bandwidth * np.log1p(sinr) / LN2


@dataclass(frozen=True)
class FlowSet:
    """Source/destination pairs; routing sets default to all out-neighbours."""

    flows: tuple[tuple[int, int], ...]
    routing: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict, compare=False)

    @property
    def destinations(self) -> tuple[int, ...]:
        return tuple(sorted({d for _, d in self.flows}))


def default_routing(net: Network, flows: Sequence[tuple[int, int]]):
    dests = sorted({d for _, d in flows})
    routing = {}
    for d in dests:
        for i in range(net.n_nodes):
            if i != d:
                routing[(i, d)] = tuple(sorted(b for a, b in net.links if a == i))
    return routing


def make_flows(net: Network, flows: Sequence[tuple[int, int]]) -> FlowSet:
    flows = tuple((int(i), int(d)) for i, d in flows)
    for i, d in flows:
        if i == d:
            raise ValueError("flow source equals destination")
    return FlowSet(flows, default_routing(net, flows))


def assign_random_flows(net: Network, seed: int) -> FlowSet:
    """Each node picks a uniformly random non-adjacent destination."""
    gen = np.random.default_rng(seed)
    flows = []
    for i in range(net.n_nodes):
        candidates = sorted(set(range(net.n_nodes)) - net.neighbors(i) - {i})
        if not candidates:
            log.warning("node %d has no non-adjacent destination; skipped", i)
            continue
        flows.append((i, int(candidates[gen.integers(len(candidates))])))
    return make_flows(net, flows)


def write_flows_csv(filename, flows: FlowSet) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow", "source", "destination"])
        for k, (i, d) in enumerate(flows.flows):
            w.writerow([k, i, d])


def write_sets_csv(filename, net: Network, family: IndependentSetFamily) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set", "links"])
        for k, st in enumerate(family.sets):
            w.writerow([k, " ".join(f"{net.links[e][0]}>{net.links[e][1]}" for e in st)])
