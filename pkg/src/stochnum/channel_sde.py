"""Exact-in-distribution sampling of linear fading SDEs.

Long term fading (LTF) is the mean-reverting power loss in dB

    dX = beta(t) (gamma(t) - X) dt + delta(t) dW,

and short term fading (STF) uses scalar inphase/quadrature states
dX = A(t) X dt + B(t) dW with outputs I = cI X_I, Q = cQ X_Q.

Both are linear, so over one grid step the transition is Gaussian with
decay ``rho``, drift ``zeta`` and noise scale ``sigma``; sampling with those
coefficients has no discretisation bias at the grid nodes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import rng

KDB = -math.log(10.0) / 10.0  # a = exp(KDB * x) converts a dB loss to linear gain

CONSTANT = "constant"
PIECEWISE = "piecewise-constant"
PAPER_GAMMA = "paper-gamma"
SINUSOID = "sinusoid"
_KINDS = (CONSTANT, PIECEWISE, PAPER_GAMMA, SINUSOID)


class InvalidModelError(ValueError):
    """Raised for channel models that violate their invariants."""


@dataclass(frozen=True)
class CoefficientFn:
    """Deterministic coefficient of a linear SDE, evaluable on [s, T].

    Time-varying kinds use the normalised time u = (t - s) / (T - s):

    * ``constant``: ``value``
    * ``piecewise-constant``: ``values[k]`` on ``[breaks[k-1], breaks[k])``
      (absolute times)
    * ``paper-gamma``: ``value * (1 + amplitude * exp(-decay*u) * sin(omega*u))``
    * ``sinusoid``: ``value + amplitude * sin(omega*u)``
    """

    kind: str
    value: float = 0.0
    values: tuple[float, ...] = ()
    breaks: tuple[float, ...] = ()
    amplitude: float = 0.0
    decay: float = 0.0
    omega: float = 0.0
    s: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidModelError(f"unknown coefficient kind {self.kind!r}")
        if self.kind == PIECEWISE:
            if len(self.values) != len(self.breaks) + 1:
                raise InvalidModelError("piecewise needs len(values) == len(breaks) + 1")
            if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
                raise InvalidModelError("piecewise breakpoints must be strictly increasing")
        if self.kind in (PAPER_GAMMA, SINUSOID) and not self.T > self.s:
            raise InvalidModelError("time-varying coefficient needs T > s")

    @classmethod
    def constant(cls, value: float) -> "CoefficientFn":
        return cls(CONSTANT, value=float(value))

    @classmethod
    def piecewise(cls, values: Sequence[float], breaks: Sequence[float]) -> "CoefficientFn":
        return cls(PIECEWISE, values=tuple(map(float, values)),
                   breaks=tuple(map(float, breaks)))

    @classmethod
    def paper_gamma(cls, base: float, s: float, T: float, amplitude: float = 0.15,
                    decay: float = 2.0, omega: float = 10 * math.pi) -> "CoefficientFn":
        return cls(PAPER_GAMMA, value=float(base), amplitude=amplitude, decay=decay,
                   omega=omega, s=s, T=T)

    @classmethod
    def sinusoid(cls, offset: float, amplitude: float, omega: float,
                 s: float, T: float) -> "CoefficientFn":
        return cls(SINUSOID, value=float(offset), amplitude=amplitude, omega=omega,
                   s=s, T=T)

    def _u(self, t):
        return (np.asarray(t, dtype=float) - self.s) / (self.T - self.s)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == CONSTANT:
            return np.full(t.shape, self.value)
        if self.kind == PIECEWISE:
            idx = np.searchsorted(np.asarray(self.breaks), t, side="right")
            return np.asarray(self.values)[idx]
        u = self._u(t)
        if self.kind == PAPER_GAMMA:
            return self.value * (1.0 + self.amplitude * np.exp(-self.decay * u)
                                 * np.sin(self.omega * u))
        return self.value + self.amplitude * np.sin(self.omega * u)

    def antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == CONSTANT:
            return self.value * t
        if self.kind == PIECEWISE:
            # f = v0 + sum_k (v_{k+1} - v_k) 1[t >= b_k], integrated term by term
            out = self.values[0] * t
            for k, br in enumerate(self.breaks):
                out = out + (self.values[k + 1] - self.values[k]) * np.maximum(t - br, 0.0)
            return out
        span = self.T - self.s
        u = self._u(t)
        w = self.omega
        if self.kind == SINUSOID:
            osc = -np.cos(w * u) / w if w else np.zeros_like(u)
            return self.value * t + self.amplitude * span * osc
        d = self.decay
        osc = np.exp(-d * u) * (-d * np.sin(w * u) - w * np.cos(w * u)) / (d * d + w * w)
        return self.value * t + self.value * self.amplitude * span * osc

    def integral(self, a, b):
        """Exact integral over [a, b] (vectorised)."""
        return self.antiderivative(b) - self.antiderivative(a)

    def constant_on(self, a: float, b: float) -> bool:
        if self.kind == CONSTANT or self.amplitude == 0.0 and self.kind != PIECEWISE:
            return True
        if self.kind == PIECEWISE:
            return not any(a < br < b for br in self.breaks)
        return False


@dataclass(frozen=True)
class TimeGrid:
    s: float
    T: float
    n: int

    def __post_init__(self):
        if not (self.T > self.s >= 0):
            raise InvalidModelError(f"time grid needs T > s >= 0 (got s={self.s}, T={self.T})")
        if self.n < 1:
            raise InvalidModelError("time grid needs n >= 1")

    @property
    def dt(self) -> float:
        return (self.T - self.s) / self.n

    @property
    def nodes(self) -> np.ndarray:
        nodes = self.s + self.dt * np.arange(self.n + 1)
        nodes[-1] = self.T
        return nodes


@dataclass(frozen=True)
class LtfChannelModel:
    beta: CoefficientFn
    gamma: CoefficientFn
    delta: CoefficientFn
    x0: float
    span: tuple[float, float] | None = None

    def __post_init__(self):
        if self.span is not None:
            check_integrable(self, *self.span)


@dataclass(frozen=True)
class StfChannelModel:
    aI: CoefficientFn
    aQ: CoefficientFn
    bI: CoefficientFn
    bQ: CoefficientFn
    cI: float = 1.0
    cQ: float = 1.0
    xI0: float = 0.0
    xQ0: float = 0.0


@dataclass(frozen=True)
class StepCoefficients:
    rho: np.ndarray
    zeta: np.ndarray
    sigma: np.ndarray
    grid: TimeGrid


@dataclass(frozen=True)
class SamplePath:
    """One sampled trajectory; ``values`` is an array (LTF) or an (I, Q) pair (STF)."""

    values: np.ndarray | tuple[np.ndarray, np.ndarray]
    stream: int
    path: int
    channel: int = 0
    grid: TimeGrid | None = field(default=None, compare=False)


def check_integrable(model: LtfChannelModel, s: float, T: float, samples: int = 2001) -> None:
    t = np.linspace(s, T, samples)
    beta = model.beta(t)
    integrand = beta * np.abs(model.gamma(t)) + model.delta(t) ** 2
    total = trapezoid(integrand, t)
    if not np.all(np.isfinite(integrand)) or not math.isfinite(total):
        raise InvalidModelError("coefficients are not integrable on [s, T]")
    if np.any(beta <= 0):
        raise InvalidModelError("mean-reversion speed beta must be strictly positive")


def _simpson_weights(m: int) -> np.ndarray:
    w = np.ones(2 * m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (6.0 * m)


def _linear_step(decay: CoefficientFn, decay_sign: float, level: CoefficientFn | None,
                 diffusion: CoefficientFn, grid: TimeGrid, quad_substeps: int,
                 require_positive: bool):
    """rho, zeta, sigma^2 per step for dX = -k(t)(X - level) dt + diffusion dW.

    ``k = decay_sign * decay``. ``level=None`` means a zero level.
    """
    if quad_substeps < 1:
        raise ValueError("quad_substeps must be >= 1")
    nodes = grid.nodes
    t0, t1 = nodes[:-1], nodes[1:]
    h = t1 - t0
    n = grid.n

    const = np.array([
        decay.constant_on(a, b) and diffusion.constant_on(a, b)
        and (level is None or level.constant_on(a, b))
        for a, b in zip(t0, t1)
    ])
    rho = np.empty(n)
    zeta = np.zeros(n)
    var = np.empty(n)

    if const.any():
        mid = 0.5 * (t0[const] + t1[const])
        k = decay_sign * decay(mid)
        if require_positive and np.any(k <= 0):
            raise InvalidModelError("beta must be strictly positive on every step")
        dl = diffusion(mid)
        hc = h[const]
        rho[const] = np.exp(-k * hc)
        if level is not None:
            zeta[const] = level(mid) * -np.expm1(-k * hc)
        # (1 - exp(-2kh)) / (2k), continuous at k = 0
        kh2 = 2.0 * k * hc
        frac = np.where(np.abs(kh2) > 1e-12, -np.expm1(-kh2) / np.where(k == 0, 1.0, 2.0 * k),
                        hc * (1.0 - 0.5 * kh2))
        var[const] = dl * dl * frac

    vary = ~const
    if vary.any():
        m = quad_substeps
        a, b, hv = t0[vary][:, None], t1[vary][:, None], h[vary][:, None]
        u = a + hv * np.arange(2 * m + 1)[None, :] / (2 * m)
        k_u = decay_sign * decay(u)
        if require_positive and np.any(k_u <= 0):
            raise InvalidModelError("beta must be strictly positive at every quadrature node")
        tail = decay_sign * decay.integral(u, b)  # integral of k over [u, t1]
        w = _simpson_weights(m)[None, :] * hv
        rho[vary] = np.exp(-decay_sign * decay.integral(t0[vary], t1[vary]))
        if level is not None:
            zeta[vary] = np.sum(w * k_u * level(u) * np.exp(-tail), axis=1)
        var[vary] = np.sum(w * diffusion(u) ** 2 * np.exp(-2.0 * tail), axis=1)

    return rho, zeta, np.maximum(var, 0.0)


def ltf_step_coefficients(model: LtfChannelModel, grid: TimeGrid,
                          quad_substeps: int = 64) -> StepCoefficients:
    rho, zeta, var = _linear_step(model.beta, 1.0, model.gamma, model.delta, grid,
                                  quad_substeps, require_positive=True)
    return StepCoefficients(rho, zeta, np.sqrt(var), grid)


def _recurse(x0, rho, zeta, sigma, xi):
    """X[..., b] = rho[b-1] X[..., b-1] + zeta[b-1] + sigma[b-1] xi[..., b-1]."""
    n = rho.shape[0]
    out = np.empty(xi.shape[:-1] + (n + 1,))
    out[..., 0] = x0
    for b in range(1, n + 1):
        out[..., b] = rho[b - 1] * out[..., b - 1] + zeta[b - 1] + sigma[b - 1] * xi[..., b - 1]
    return out


def sample_ltf_path(model: LtfChannelModel, coeffs: StepCoefficients,
                    seed: tuple[int, int], channel: int = 0) -> SamplePath:
    stream, path = seed
    n = coeffs.grid.n
    xi = rng.normals(stream, path, channel, n, rng.LTF)
    values = _recurse(model.x0, coeffs.rho, coeffs.zeta, coeffs.sigma, xi)
    return SamplePath(values, stream, path, channel, coeffs.grid)


def sample_ltf_paths(model: LtfChannelModel, coeffs: StepCoefficients, stream: int,
                     paths: Sequence[int], channels: Sequence[int] = (0,)) -> np.ndarray:
    """Batch of LTF paths with shape (len(paths), len(channels), n + 1).

    Row ``[p, c]`` equals ``sample_ltf_path(..., (stream, paths[p]), channels[c]).values``.
    """
    xi = rng.normal_block(stream, paths, channels, coeffs.grid.n, rng.LTF)
    return _recurse(model.x0, coeffs.rho, coeffs.zeta, coeffs.sigma, xi)


def ltf_mean_variance(model: LtfChannelModel, grid: TimeGrid,
                      quad_substeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    c = ltf_step_coefficients(model, grid, quad_substeps)
    mean = np.empty(grid.n + 1)
    var = np.empty(grid.n + 1)
    mean[0], var[0] = model.x0, 0.0
    for b in range(1, grid.n + 1):
        mean[b] = c.rho[b - 1] * mean[b - 1] + c.zeta[b - 1]
        var[b] = c.rho[b - 1] ** 2 * var[b - 1] + c.sigma[b - 1] ** 2
    return mean, var


def attenuation_ltf(x):
    """Linear power gain 10**(-x/10) of a loss of ``x`` dB."""
    return np.exp(KDB * np.asarray(x, dtype=float))


def stf_step_coefficients(model: StfChannelModel, grid: TimeGrid, quad_substeps: int = 64):
    """(Phi, sigma) per step for the I and Q components."""
    out = []
    for a_fn, b_fn in ((model.aI, model.bI), (model.aQ, model.bQ)):
        phi, _, var = _linear_step(a_fn, -1.0, None, b_fn, grid, quad_substeps,
                                   require_positive=False)
        out.append((phi, np.sqrt(var)))
    return tuple(out)


def sample_stf_path(model: StfChannelModel, grid: TimeGrid, seed: tuple[int, int],
                    channel: int = 0, quad_substeps: int = 64) -> SamplePath:
    stream, path = seed
    (phi_i, sig_i), (phi_q, sig_q) = stf_step_coefficients(model, grid, quad_substeps)
    zero = np.zeros(grid.n)
    xi_i = rng.normals(stream, path, channel, grid.n, rng.STF_I)
    xi_q = rng.normals(stream, path, channel, grid.n, rng.STF_Q)
    i_comp = model.cI * _recurse(model.xI0, phi_i, zero, sig_i, xi_i)
    q_comp = model.cQ * _recurse(model.xQ0, phi_q, zero, sig_q, xi_q)
    return SamplePath((i_comp, q_comp), stream, path, channel, grid)


def sample_stf_paths(model: StfChannelModel, grid: TimeGrid, stream: int,
                     paths: Sequence[int], channels: Sequence[int] = (0,),
                     quad_substeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Batched (I, Q) components, each of shape (len(paths), len(channels), n + 1)."""
    (phi_i, sig_i), (phi_q, sig_q) = stf_step_coefficients(model, grid, quad_substeps)
    zero = np.zeros(grid.n)
    xi_i = rng.normal_block(stream, paths, channels, grid.n, rng.STF_I)
    xi_q = rng.normal_block(stream, paths, channels, grid.n, rng.STF_Q)
    return (model.cI * _recurse(model.xI0, phi_i, zero, sig_i, xi_i),
            model.cQ * _recurse(model.xQ0, phi_q, zero, sig_q, xi_q))


def attenuation_stf(i, q):
    i = np.asarray(i, dtype=float)
    q = np.asarray(q, dtype=float)
    return i * i + q * q


def write_paths_csv(filename, paths: Sequence[SamplePath]) -> None:
    """Dump LTF sample paths as (path, b, tau, x_db) rows."""
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "b", "tau", "x_db"])
        for sp in paths:
            tau = sp.grid.nodes
            for b, x in enumerate(np.asarray(sp.values)):
                writer.writerow([sp.path, b, f"{tau[b]:.9g}", f"{x:.9g}"])
