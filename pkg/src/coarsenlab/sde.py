"""Monte Carlo simulation of the single-cluster volume process.

Paths follow

    dX = -[1 - (X/L(s))^{1/3}] ds + sqrt(2 eps) (1 + X/eps)^{1/6} dW,

absorbed at 0.  Survival payoffs E[w0(X(T)); tau > T] validate the adjoint
PDE solves, and exit-time histograms probe the first-passage density.

Randomness comes from a counter-based Philox generator keyed by the seed, with
a fixed (step-major, path-minor) draw layout, so results are bit-identical for
a given (seed, n_paths, dt, T) regardless of how the work is batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lsw_classical import LHistory

__all__ = [
    "McConfig",
    "McEstimate",
    "simulate_path",
    "estimate_survival_payoff",
    "exit_time_histogram",
    "payoff_function",
]


@dataclass(frozen=True)
class McConfig:
    eps: float
    history: LHistory
    T: float
    n_paths: int
    dt: float
    seed: int
    boundary: str = "bridge"  # or "naive"

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative (0 = noise-free mode)")
        if self.n_paths < 1 or self.dt <= 0 or self.T <= 0:
            raise ValueError("need n_paths >= 1, dt > 0, T > 0")
        if self.boundary not in ("bridge", "naive"):
            raise ValueError(f"unknown boundary scheme {self.boundary!r}")

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / self.dt - 1e-9))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_absorbed: int
    n_survived: int


def payoff_function(spec) -> Callable[[np.ndarray], np.ndarray]:
    """Resolve a payoff spec: 'one', 'cuberoot', ('indicator', x0), or callable."""
    if callable(spec):
        return spec
    if spec == "one":
        return lambda x: np.ones_like(np.asarray(x, dtype=float))
    if spec == "cuberoot":
        return lambda x: np.cbrt(np.asarray(x, dtype=float))
    if isinstance(spec, tuple) and len(spec) == 2 and spec[0] == "indicator":
        x0 = float(spec[1])
        return lambda x: (np.asarray(x, dtype=float) > x0).astype(float)
    raise ValueError(f"unknown payoff {spec!r}")


def _simulate_batch(
    config: McConfig, x_starts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance all paths; returns (alive, X_final, exit_times).

    ``exit_times`` holds NaN for surviving paths.  The bridge correction
    absorbs a path crossing-wise even when both endpoints are positive, using
    the frozen-coefficient crossing probability exp(-2 a b / (sigma^2 dt)).
    """
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    n = len(x_starts)
    n_steps = config.n_steps
    dt = config.T / n_steps
    sqrt_dt = math.sqrt(dt)
    x = np.asarray(x_starts, dtype=float).copy()
    alive = x > 0.0
    exit_t = np.where(alive, np.nan, 0.0)
    eps = config.eps
    bridge = config.boundary == "bridge" and eps > 0.0
    for k in range(n_steps):
        z = rng.standard_normal(n)
        u = rng.random(n) if bridge else None
        if not alive.any():
            continue  # keep drawing so the stream layout is fixed
        t_mid = k * dt
        big_l = float(config.history.value(min(t_mid, config.history.t_end)))
        xp = np.maximum(x, 0.0)
        drift = -(1.0 - np.cbrt(xp / big_l))
        if eps > 0.0:
            sigma = math.sqrt(2.0 * eps) * (1.0 + xp / eps) ** (1.0 / 6.0)
        else:
            sigma = np.zeros_like(xp)
        x_new = x + drift * dt + sigma * sqrt_dt * z
        crossed = alive & (x_new <= 0.0)
        if bridge:
            interior = alive & (x_new > 0.0) & (x > 0.0)
            with np.errstate(divide="ignore", over="ignore"):
                p_cross = np.exp(-2.0 * x * x_new / (sigma * sigma * dt))
            crossed |= interior & (u < p_cross)
        exit_t = np.where(crossed, (k + 1) * dt, exit_t)
        alive &= ~crossed
        x = np.where(alive, x_new, 0.0)
    return alive, x, exit_t


def simulate_path(config: McConfig, x_start: float) -> tuple[bool, float]:
    """One path: (absorbed, exit_time) if absorbed else (False, final position)."""
    if x_start < 0:
        raise ValueError("x_start must be nonnegative")
    alive, x_fin, exit_t = _simulate_batch(config, np.array([x_start]))
    if alive[0]:
        return False, float(x_fin[0])
    return True, float(exit_t[0])


def estimate_survival_payoff(config: McConfig, payoff, x_start: float) -> McEstimate:
    """MC estimate of E[w0(X(T)); tau > T] started from x_start."""
    w0 = payoff_function(payoff)
    starts = np.full(config.n_paths, float(x_start))
    alive, x_fin, _ = _simulate_batch(config, starts)
    values = np.where(alive, w0(x_fin), 0.0)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(config.n_paths)) if config.n_paths > 1 else 0.0
    return McEstimate(
        mean=mean,
        stderr=stderr,
        n_absorbed=int((~alive).sum()),
        n_survived=int(alive.sum()),
    )


def exit_time_histogram(
    config: McConfig, x_start: float, bins: int
) -> tuple[np.ndarray, np.ndarray, float]:
    """(density, bin_edges, survival_fraction) for the absorption time.

    The density is normalized so that its integral equals the absorbed
    fraction; the mass deficit is the survival probability.
    """
    starts = np.full(config.n_paths, float(x_start))
    alive, _, exit_t = _simulate_batch(config, starts)
    taus = exit_t[~alive]
    edges = np.linspace(0.0, config.T, bins + 1)
    counts, edges = np.histogram(taus, bins=edges)
    width = edges[1] - edges[0]
    density = counts / (config.n_paths * width)
    survival = float(alive.sum()) / config.n_paths
    return density, edges, survival
