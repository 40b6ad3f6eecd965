"""Classical LSW solver by the method of characteristics.

The transport velocity is ``(x/L(t))^{1/3} - 1``; the tail
``w(x,t) = int_x^inf c`` is exact along characteristics,
``w(x,t) = w0(F(x,t))`` where ``F(x,t)`` is the foot (time-0 position) of the
backward characteristic through ``(x,t)``.  The transport parameter ``L(t)``
is pinned down per step by a fixed-point iteration on

    L^{1/3} = (1/3) int_0^inf x^{-2/3} w(x,t) dx / w(0,t),

which is the condition for the mass ``int x c dx`` to stay constant.  All
quadratures use the substitution ``x = u^3`` (so ``x^{-2/3} dx = 3 du``),
which removes the endpoint singularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp

from .diagnostics import TrajectorySeries
from .initial_data import InitialTail

__all__ = [
    "LHistory",
    "ClassicalRunConfig",
    "ClassicalSolver",
    "characteristic_backward",
    "characteristic_jacobian",
    "rate_semi_analytic",
    "run_classical",
]

_RTOL = 1e-11
_ATOL = 1e-13


@dataclass(frozen=True)
class LHistory:
    """Piecewise-linear record of L(t) on strictly increasing knots."""

    times: np.ndarray
    values: np.ndarray
    l_floor: float = 1e-8

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1 or len(t) < 1:
            raise ValueError("times/values must be matching 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(v < self.l_floor):
            raise ValueError(f"L below floor {self.l_floor}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, t_end: float) -> "LHistory":
        return cls(times=np.array([0.0, t_end]), values=np.array([value, value]))

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def value(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < self.times[0] - 1e-12) or np.any(s > self.times[-1] + 1e-12):
            raise ValueError("L lookup outside the recorded history")
        return np.interp(s, self.times, self.values)

    def extended(self, t_new: float, value: float) -> "LHistory":
        if t_new <= self.times[-1]:
            raise ValueError("new knot must advance in time")
        return LHistory(
            times=np.append(self.times, t_new),
            values=np.append(self.values, value),
            l_floor=self.l_floor,
        )


def _backward_feet(xs: np.ndarray, t: float, history: LHistory,
                   x_limit: float = 1e6) -> np.ndarray:
    """Feet F(x, t) for a batch of terminal positions, one vector solve."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(xs < 0):
        raise ValueError("terminal positions must be nonnegative")
    if t == 0.0:
        return xs.copy()

    def rhs(s, y):
        y = np.maximum(y, 0.0)
        return -(1.0 - np.cbrt(y / history.value(s)))

    sol = solve_ivp(rhs, (t, 0.0), xs, method="DOP853", rtol=_RTOL, atol=_ATOL,
                    dense_output=False)
    if not sol.success:
        raise RuntimeError(f"backward characteristic solve failed: {sol.message}")
    feet = sol.y[:, -1]
    if np.any(feet > x_limit):
        raise RuntimeError("characteristic escaped beyond the configured limit")
    if np.any(feet < -1e-9):
        raise AssertionError("backward characteristic went negative")
    return np.maximum(feet, 0.0)


def characteristic_backward(x: float, t: float, history: LHistory) -> float:
    """Foot F(x,t) of the backward characteristic ending at x at time t."""
    return float(_backward_feet(np.array([float(x)]), t, history)[0])


def characteristic_jacobian(x: float, t: float, history: LHistory) -> float:
    """dF/dx = exp[-(1/3) int_0^t ds / (x(s)^2 L(s))^{1/3}] along the path.

    At x = 0 the integrand has an integrable (t-s)^{-2/3} blow-up at s = t;
    the first slice is handled by the local expansion x(s) ~ t - s.
    """
    if t == 0.0:
        return 1.0
    if x < 0:
        raise ValueError("x must be nonnegative")
    eta = 0.0
    seed = 0.0
    if x == 0.0:
        eta = min(1e-9, 0.5 * t)
        seed = 3.0 * eta ** (1.0 / 3.0) / np.cbrt(history.value(t))
        x_start, t_start = eta, t - eta
    else:
        x_start, t_start = float(x), t

    def rhs(s, y):
        pos = max(y[0], 1e-300)
        big_l = history.value(s)
        return [
            -(1.0 - np.cbrt(max(y[0], 0.0) / big_l)),
            1.0 / np.cbrt(pos * pos * big_l),
        ]

    sol = solve_ivp(rhs, (t_start, 0.0), [x_start, 0.0], method="DOP853",
                    rtol=_RTOL, atol=_ATOL)
    if not sol.success:
        raise RuntimeError(f"jacobian path solve failed: {sol.message}")
    integral = seed - float(sol.y[1, -1])  # sign: integrated from t down to 0
    return math.exp(-integral / 3.0)


@dataclass
class ClassicalRunConfig:
    tail: InitialTail
    t_end: float
    dt: float = 0.0125
    panels: int = 24
    nodes_per_panel: int = 8
    l_floor: float = 1e-8
    # the characteristic solves carry ~1e-9 adaptive-step noise, so demanding
    # much more than this from the fixed point just spins without converging
    fp_tol: float = 5e-9
    fp_max_iter: int = 50

    def validate(self) -> None:
        if self.t_end <= 0 or self.dt <= 0:
            raise ValueError("t_end and dt must be positive")
        if self.panels < 1 or self.nodes_per_panel < 2:
            raise ValueError("need at least 1 panel and 2 nodes per panel")


class ClassicalSolver:
    """Advances L(t) and exposes the transported tail.

    The state is just the L-history: the density never lives on a mesh, every
    evaluation composes the initial tail with freshly integrated
    characteristics.
    """

    def __init__(self, config: ClassicalRunConfig):
        config.validate()
        self.config = config
        self.tail = config.tail
        self.t = 0.0
        l0 = self._initial_l()
        # a single-knot history cannot be interpolated; seed a flat stub
        self.history = LHistory(
            times=np.array([0.0]), values=np.array([l0]), l_floor=config.l_floor
        )

    # -- quadrature plumbing -------------------------------------------------

    def _u_nodes(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes/weights in u = x^{1/3} covering the support.

        Since F(x,t) > x - t, the tail at time t is negligible beyond
        x_max + t, where x_max bounds the initial support.
        """
        cfg = self.config
        u_max = np.cbrt(self.tail.x_max + t)
        edges = np.linspace(0.0, u_max, cfg.panels + 1)
        base_x, base_w = leggauss(cfg.nodes_per_panel)
        nodes, weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            nodes.append(lo + half * (base_x + 1.0))
            weights.append(half * base_w)
        return np.concatenate(nodes), np.concatenate(weights)

    def _initial_l(self) -> float:
        u, du = self._u_nodes(0.0)
        w = self.tail.w0(u ** 3)
        n0 = self.tail.n0
        return float((w @ du) / n0) ** 3

    def _tail_integrals(self, t: float, history: LHistory) -> dict:
        """Quadratures of the transported tail at time t under a trial L."""
        u, du = self._u_nodes(t)
        xs = np.concatenate(([0.0], u ** 3))
        feet = _backward_feet(xs, t, history)
        w = self.tail.w0(feet)
        n_t = float(w[0])
        wq = w[1:]
        return {
            "n": n_t,
            "l_third": float(wq @ du) / n_t if n_t > 0 else np.nan,
            "mass": float((3.0 * u * u * wq) @ du),
            "energy": float((2.0 * u * wq) @ du),
            "scale": float((4.0 * u ** 3 * wq) @ du),
            "foot0": float(feet[0]),
        }

    # -- public surface ------------------------------------------------------

    @property
    def current_l(self) -> float:
        return float(self.history.values[-1])

    def _history_with(self, t_new: float, l_new: float) -> LHistory:
        if len(self.history.times) == 1:
            return LHistory(
                times=np.array([0.0, t_new]),
                values=np.array([self.history.values[0], l_new]),
                l_floor=self.config.l_floor,
            )
        return self.history.extended(t_new, l_new)

    def advance(self, dt: float) -> dict:
        """One step: fixed-point iteration for L on [t, t+dt].

        Returns the converged tail integrals at the new time (used by the run
        loop for the diagnostic series).
        """
        cfg = self.config
        t_new = self.t + dt
        l_guess = self.current_l
        info = None
        for _ in range(cfg.fp_max_iter):
            trial = self._history_with(t_new, l_guess)
            info = self._tail_integrals(t_new, trial)
            l_new = info["l_third"] ** 3
            if l_new < cfg.l_floor:
                raise RuntimeError(f"L fell below the floor at t = {t_new}")
            if abs(l_new - l_guess) <= cfg.fp_tol * max(l_new, 1.0):
                l_guess = l_new
                break
            l_guess = l_new
        else:
            raise RuntimeError(
                f"L fixed point did not converge in {cfg.fp_max_iter} iterations "
                f"at t = {t_new}; reduce dt"
            )
        self.history = self._history_with(t_new, l_guess)
        self.t = t_new
        return info

    def tail_value(self, x, t: float | None = None):
        """Number density above x at time t: w0(F(x,t))."""
        t = self.t if t is None else t
        if t > self.t + 1e-12:
            raise ValueError("solver has not advanced that far")
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        hist = self.history if len(self.history.times) > 1 else LHistory.constant(
            self.current_l, max(self.t, 1e-30)
        )
        w = self.tail.w0(_backward_feet(xs, t, hist))
        return w if np.ndim(x) else float(w[0])


def rate_semi_analytic(solver: ClassicalSolver, t: float) -> float:
    """d(Lambda)/dt from the transported tail, no finite differences.

    With N(t) = w0(F(0,t)) and Lambda = 1/N (mass 1), the chain rule gives
    d(Lambda)/dt = c0(F(0,t)) * dF/dx(0+, t) / N(t)^2, using that the foot of
    the boundary characteristic advances at the rate of the edge Jacobian.
    """
    hist = solver.history
    foot = characteristic_backward(0.0, t, hist)
    jac = characteristic_jacobian(0.0, t, hist)
    n_t = float(solver.tail.w0(foot))
    c_at_foot = float(solver.tail.c0(foot))
    return c_at_foot * jac / (n_t * n_t)


def run_classical(config: ClassicalRunConfig) -> tuple[TrajectorySeries, LHistory, ClassicalSolver]:
    """Integrate to t_end; series columns are L, Lambda, E, M, N, mass_residual."""
    solver = ClassicalSolver(config)
    rows = []
    info0 = solver._tail_integrals(0.0, LHistory.constant(solver.current_l, 1e-30))
    rows.append((0.0, solver.current_l, info0))
    n_steps = int(round(config.t_end / config.dt))
    dt = config.t_end / n_steps
    for _ in range(n_steps):
        info = solver.advance(dt)
        rows.append((solver.t, solver.current_l, info))
    arr_t = np.array([r[0] for r in rows])
    series = TrajectorySeries(
        times=arr_t,
        columns={
            "L": np.array([r[1] for r in rows]),
            "Lambda": np.array([1.0 / r[2]["n"] for r in rows]),
            "E": np.array([r[2]["energy"] for r in rows]),
            "M": np.array([r[2]["scale"] for r in rows]),
            "N": np.array([r[2]["n"] for r in rows]),
            "mass_residual": np.array([r[2]["mass"] - 1.0 for r in rows]),
        },
        provenance=f"classical:{config.tail.label}:dt={config.dt}",
    )
    return series, solver.history, solver
