"""Time integration of the truncated Becker-Doring cluster system.

Two closures for the monomer density are supported:

* full -- the mass-conserving system: ``c1 = max(rho - sum_{ell>=2} ell c_ell, 0)``.
* dirichlet -- the coarsening system with ``c(1,t) = 0`` in the state and the
  monomer density chosen so that the mass carried by ``ell >= 2`` stays exactly
  at its (normalized) initial value 1; at vanishing step size this reduces to
  the flux-balance formula ``c1 = z_s + (a1 q g + b2 c2) / sum a_ell c_ell``.

The default integrator is a semi-implicit trapezoidal scheme: for a frozen
monomer density the truncated system is affine tridiagonal in the cluster
densities, so each stage is a banded solve, and the monomer density is fixed
per step by a scalar root-find that makes the closure hold at the committed
state (this is what keeps conservation structural rather than approximate).
An adaptive explicit integrator is available as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .diagnostics import TrajectorySeries
from .rates import RateModel

__all__ = [
    "DiscreteState",
    "FullClosure",
    "DirichletClosure",
    "BdRunConfig",
    "BdRunError",
    "bd_flux",
    "monomer_closure_full",
    "monomer_closure_dirichlet",
    "bd_rhs",
    "run_bd",
]


class BdRunError(RuntimeError):
    """Integration failure: step underflow, mass drift, or truncation overflow."""


@dataclass(frozen=True)
class FullClosure:
    rho: float


@dataclass(frozen=True)
class DirichletClosure:
    pass


@dataclass
class DiscreteState:
    """Cluster densities c_ell on ell = 1..ell_max at time t.

    ``c[0]`` is the monomer slot: the monomer density for the full closure,
    identically 0 for the Dirichlet closure (the driving monomer density then
    enters only through the rates).
    """

    c: np.ndarray
    t: float

    @property
    def ell_max(self) -> int:
        return len(self.c)

    def copy(self) -> "DiscreteState":
        return DiscreteState(c=self.c.copy(), t=self.t)


@dataclass
class BdRunConfig:
    model: RateModel
    closure: FullClosure | DirichletClosure
    initial: np.ndarray  # gamma_ell, ell = 1..ell_max
    t_end: float
    dt_init: float = 1e-3
    scheme: str = "semi-implicit"  # or "explicit-adaptive"
    output_stride: float = 0.1
    rtol: float = 1e-9
    atol: float = 1e-12
    mass_tol: float = 1e-8
    dt_max: float = field(default=np.inf)

    def validate(self) -> None:
        gamma = np.asarray(self.initial, dtype=float)
        if gamma.ndim != 1 or len(gamma) < 3:
            raise ValueError("initial data must be a 1-D array with ell_max >= 3")
        if np.any(gamma < 0):
            raise ValueError("initial data must be nonnegative")
        ells = np.arange(1, len(gamma) + 1)
        if isinstance(self.closure, FullClosure):
            mass = float(ells @ gamma)
            if not np.isclose(mass, self.closure.rho, rtol=1e-10, atol=1e-12):
                raise ValueError(
                    f"full closure requires sum ell*gamma_ell = rho, got {mass}"
                )
        else:
            if gamma[0] != 0.0:
                raise ValueError("dirichlet closure requires gamma_1 = 0")
            mass = float(ells[1:] @ gamma[1:])
            if not np.isclose(mass, 1.0, rtol=1e-10, atol=1e-12):
                raise ValueError(
                    f"dirichlet closure requires sum_(ell>=2) ell*gamma_ell = 1, got {mass}"
                )
        if self.scheme not in ("semi-implicit", "explicit-adaptive"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.t_end <= 0 or self.dt_init <= 0 or self.output_stride <= 0:
            raise ValueError("t_end, dt_init and output_stride must be positive")


def bd_flux(state: DiscreteState, model: RateModel, c1: float, ell: int) -> float:
    """Flux J_ell = a_ell c1 c_ell - b_(ell+1) c_(ell+1); zero at the cutoff."""
    if not 1 <= ell <= state.ell_max:
        raise ValueError(f"ell must be in [1, {state.ell_max}]")
    if ell == state.ell_max:
        return 0.0
    a = model.attach(ell)
    b_next = model.detach(ell + 1)
    return float(a * c1 * state.c[ell - 1] - b_next * state.c[ell])


def monomer_closure_full(state: DiscreteState, rho: float) -> float:
    """c1 = max(rho - sum_(ell>=2) ell c_ell, 0)."""
    ells = np.arange(2, state.ell_max + 1)
    return float(max(rho - ells @ state.c[1:], 0.0))


def monomer_closure_dirichlet(state: DiscreteState, model: RateModel) -> float:
    """Flux-balance monomer density; always exceeds z_s for nonempty states."""
    c = state.c[1:]
    ells = np.arange(2, state.ell_max + 1)
    denom = float(model.attach(ells) @ c)
    if denom <= 0.0:
        raise ZeroDivisionError("degenerate state: no clusters with ell >= 2")
    b2 = float(model.detach(2))
    numer = model.a1 * model.q * float(c.sum()) + b2 * float(c[0])
    return model.z_s + numer / denom


def _fluxes(c: np.ndarray, model: RateModel, c1: float, monomer_slot: float) -> np.ndarray:
    """J_ell for ell = 1..ell_max (J at the cutoff is 0).

    ``monomer_slot`` is the value of c(1,t) used inside J_1: equal to c1 for
    the full closure, 0 for the Dirichlet closure.
    """
    n = len(c)
    ells = np.arange(1, n + 1, dtype=float)
    a = model.attach(ells)
    b = model.detach(ells)
    cc = c.copy()
    cc[0] = monomer_slot
    j = np.zeros(n)
    j[:-1] = a[:-1] * c1 * cc[:-1] - b[1:] * cc[1:]
    return j


def bd_rhs(
    state: DiscreteState,
    model: RateModel,
    closure: FullClosure | DirichletClosure,
) -> np.ndarray:
    """Time derivatives dc_ell/dt = J_(ell-1) - J_ell for ell >= 2.

    The monomer slot of the returned array carries -(J_1 + sum_ell J_ell) for
    the full closure (so the conserved total mass has zero derivative) and 0
    for the Dirichlet closure.
    """
    if isinstance(closure, FullClosure):
        c1 = monomer_closure_full(state, closure.rho)
        monomer_slot = c1
    else:
        c1 = monomer_closure_dirichlet(state, model)
        monomer_slot = 0.0
    j = _fluxes(state.c, model, c1, monomer_slot)
    dc = np.zeros_like(state.c)
    dc[1:] = j[:-1] - j[1:]
    if isinstance(closure, FullClosure):
        dc[0] = -(j[0] + j.sum())
    return dc


# ---------------------------------------------------------------------------
# semi-implicit stepper


class _Tridiag:
    """Affine tridiagonal system dc/dt = A(c1) c + r(c1) for ell = 2..ell_max."""

    def __init__(self, model: RateModel, ell_max: int, full: bool):
        ells = np.arange(2, ell_max + 1, dtype=float)
        self.n = len(ells)
        self.a = model.attach(ells)          # a_ell, ell = 2..ell_max
        self.b = model.detach(ells)          # b_ell
        self.a_prev = model.attach(ells - 1)  # a_(ell-1)
        self.a1 = model.a1
        self.full = full

    def bands(self, c1: float, dt_half: float) -> tuple[np.ndarray, np.ndarray]:
        """Banded forms of (I - h A) and (I + h A) with h = dt/2."""
        n = self.n
        diag = -(self.b + self.a * c1)
        diag[-1] = -self.b[-1]  # zero flux out of the top bin
        upper = self.b[1:]
        lower = self.a_prev[1:] * c1
        ab_m = np.zeros((3, n))
        ab_p = np.zeros((3, n))
        ab_m[0, 1:] = -dt_half * upper
        ab_m[1, :] = 1.0 - dt_half * diag
        ab_m[2, :-1] = -dt_half * lower
        ab_p[0, 1:] = dt_half * upper
        ab_p[1, :] = 1.0 + dt_half * diag
        ab_p[2, :-1] = dt_half * lower
        return ab_m, ab_p

    def affine(self, c1: float) -> np.ndarray:
        r = np.zeros(self.n)
        if self.full:
            r[0] = self.a1 * c1 * c1
        return r

    def trapezoid(self, c: np.ndarray, dt: float, c1: float) -> np.ndarray:
        h = 0.5 * dt
        ab_m, ab_p = self.bands(c1, h)
        rhs = (
            ab_p[1, :] * c
            + np.concatenate((ab_p[0, 1:] * c[1:], [0.0]))
            + np.concatenate(([0.0], ab_p[2, :-1] * c[:-1]))
            + dt * self.affine(c1)
        )
        return solve_banded((1, 1), ab_m, rhs)


def _step_semi_implicit(
    c: np.ndarray,
    dt: float,
    model: RateModel,
    closure: FullClosure | DirichletClosure,
    tri: _Tridiag,
    ells: np.ndarray,
) -> tuple[np.ndarray, float]:
    """One trapezoidal step; the monomer density is fixed by a root-find."""
    if isinstance(closure, FullClosure):
        rho = closure.rho

        def defect(c1: float) -> float:
            c_new = tri.trapezoid(c, dt, c1)
            mid = 0.5 * (c + c_new)
            return c1 - max(rho - float(ells @ mid), 0.0)

        c1 = brentq(defect, 0.0, rho, xtol=1e-15, rtol=8.9e-16)
    else:
        state = DiscreteState(c=np.concatenate(([0.0], c)), t=0.0)
        guess = monomer_closure_dirichlet(state, model)
        mass0 = float(ells @ c)

        def defect(c1: float) -> float:
            return float(ells @ tri.trapezoid(c, dt, c1)) - mass0

        lo = model.z_s + 0.25 * (guess - model.z_s)
        hi = model.z_s + 4.0 * (guess - model.z_s)
        flo, fhi = defect(lo), defect(hi)
        grow = 0
        while flo * fhi > 0.0 and grow < 60:
            if flo > 0.0:
                lo = model.z_s + 0.5 * (lo - model.z_s)
                flo = defect(lo)
            else:
                hi = model.z_s + 2.0 * (hi - model.z_s)
                fhi = defect(hi)
            grow += 1
        if flo * fhi > 0.0:
            raise BdRunError("could not bracket the dirichlet monomer density")
        c1 = brentq(defect, lo, hi, xtol=1e-15, rtol=8.9e-16)
    return tri.trapezoid(c, dt, c1), c1


_NEG_CLIP = 1e-12


def _commit(c: np.ndarray, neg_log: list[float]) -> np.ndarray | None:
    """Clip rounding-level negatives; reject the step for anything larger."""
    m = float(c.min())
    if m < -_NEG_CLIP:
        return None
    if m < 0.0:
        neg_log.append(m)
        c = np.maximum(c, 0.0)
    return c


def run_bd(config: BdRunConfig) -> tuple[TrajectorySeries, list[tuple[float, np.ndarray]]]:
    """Integrate to t_end; returns the diagnostic series and state snapshots.

    Snapshots are (t, c) pairs with c indexed ell = 1..ell_max, taken at the
    output stride.  Aborts (BdRunError) on mass drift beyond ``mass_tol``,
    step-size underflow, or density piling up at the truncation cutoff.
    """
    config.validate()
    model = config.model
    full = isinstance(config.closure, FullClosure)
    gamma = np.asarray(config.initial, dtype=float)
    ell_max = len(gamma)
    ells = np.arange(2, ell_max + 1, dtype=float)

    out_times = np.arange(0.0, config.t_end - 0.25 * config.output_stride,
                          config.output_stride)
    out_times = np.append(out_times, config.t_end)

    if config.scheme == "explicit-adaptive":
        return _run_explicit(config, gamma, out_times)

    tri = _Tridiag(model, ell_max, full)
    c = gamma[1:].copy()
    t = 0.0
    dt = config.dt_init
    neg_log: list[float] = []

    recorder = _Recorder(config, ells)
    recorder.record(t, c)
    snapshots = [(0.0, _assemble(c, config, ells))]
    next_out = 1

    mass0 = config.closure.rho if full else 1.0
    while t < config.t_end - 1e-14:
        t_target = out_times[next_out] if next_out < len(out_times) else config.t_end
        dt_try = min(dt, config.dt_max, t_target - t)
        clipped = dt_try < dt
        accepted = False
        while not accepted:
            if dt_try < 1e-14:
                raise BdRunError(f"step size underflow at t = {t}")
            c_one, _ = _step_semi_implicit(c, dt_try, model, config.closure, tri, ells)
            c_half, _ = _step_semi_implicit(c, 0.5 * dt_try, model, config.closure, tri, ells)
            c_two, _ = _step_semi_implicit(c_half, 0.5 * dt_try, model, config.closure, tri, ells)
            scale = config.atol + config.rtol * np.maximum(np.abs(c), np.abs(c_two))
            err = float(np.max(np.abs(c_one - c_two) / scale)) / 3.0
            committed = _commit(c_two, neg_log) if err <= 1.0 else None
            if committed is not None:
                c = committed
                t += dt_try
                accepted = True
                cand = dt_try * min(4.0, max(0.2, 0.9 * (max(err, 1e-12)) ** (-1.0 / 3.0)))
                dt = max(cand, dt) if clipped else cand
            else:
                clipped = False
                dt_try *= 0.5 if err <= 1.0 else max(0.2, 0.9 * err ** (-1.0 / 3.0))

        mass = float(ells @ c) + (monomer_closure_full(
            DiscreteState(np.concatenate(([0.0], c)), t), config.closure.rho) if full else 0.0)
        if abs(mass - mass0) > config.mass_tol * max(mass0, 1.0):
            raise BdRunError(f"mass drift {mass - mass0:.3e} at t = {t}")
        if c[-1] > 1e-10 * mass0 / ell_max:
            raise BdRunError(
                f"truncation saturation: c_ell_max = {c[-1]:.3e} at t = {t}; "
                "increase ell_max"
            )
        if next_out < len(out_times) and t >= out_times[next_out] - 1e-12:
            recorder.record(t, c)
            snapshots.append((t, _assemble(c, config, ells)))
            next_out += 1

    return recorder.series(config), snapshots


def _assemble(c: np.ndarray, config: BdRunConfig, ells: np.ndarray) -> np.ndarray:
    """Full ell = 1..ell_max density vector including the monomer slot."""
    if isinstance(config.closure, FullClosure):
        state = DiscreteState(np.concatenate(([0.0], c)), 0.0)
        c1 = monomer_closure_full(state, config.closure.rho)
    else:
        c1 = 0.0
    return np.concatenate(([c1], c))


class _Recorder:
    def __init__(self, config: BdRunConfig, ells: np.ndarray):
        self.config = config
        self.ells = ells
        self.rows: list[tuple[float, float, float, float, float, float, float, float, float]] = []

    def record(self, t: float, c: np.ndarray) -> None:
        cfg = self.config
        full = isinstance(cfg.closure, FullClosure)
        state = DiscreteState(np.concatenate(([0.0], c)), t)
        if full:
            c1 = monomer_closure_full(state, cfg.closure.rho)
            number = c1 + float(c.sum())
            mass = c1 + float(self.ells @ c)
            lam = mass / number if number > 0 else np.nan
            energy = c1 + float(self.ells ** (2.0 / 3.0) @ c)
            scale = c1 + float(self.ells ** (4.0 / 3.0) @ c)
        else:
            c1 = monomer_closure_dirichlet(state, cfg.model)
            number = float(c.sum())
            mass = float(self.ells @ c)
            lam = mass / number if number > 0 else np.nan
            energy = float(self.ells ** (2.0 / 3.0) @ c)
            scale = float(self.ells ** (4.0 / 3.0) @ c)
        g = float(c.sum())
        if c1 > self.config.model.z_s:
            ell_scale = (cfg.model.q / (c1 - cfg.model.z_s)) ** 3
        else:
            ell_scale = np.nan
        self.rows.append((t, mass, c1, g, lam, ell_scale, energy, scale, number))

    def series(self, config: BdRunConfig) -> TrajectorySeries:
        arr = np.array(self.rows)
        closure = "full" if isinstance(config.closure, FullClosure) else "dirichlet"
        return TrajectorySeries(
            times=arr[:, 0],
            columns={
                "mass": arr[:, 1],
                "c1": arr[:, 2],
                "g": arr[:, 3],
                "Lambda": arr[:, 4],
                "L": arr[:, 5],
                "E": arr[:, 6],
                "M": arr[:, 7],
                "N": arr[:, 8],
            },
            provenance=f"bd:{closure}:{config.scheme}",
        )


def _run_explicit(
    config: BdRunConfig, gamma: np.ndarray, out_times: np.ndarray
) -> tuple[TrajectorySeries, list[tuple[float, np.ndarray]]]:
    model = config.model
    full = isinstance(config.closure, FullClosure)
    ell_max = len(gamma)
    ells = np.arange(2, ell_max + 1, dtype=float)

    def rhs(t: float, c: np.ndarray) -> np.ndarray:
        state = DiscreteState(np.concatenate(([0.0], c)), t)
        if full:
            c1 = monomer_closure_full(state, config.closure.rho)
            slot = c1
        else:
            c1 = monomer_closure_dirichlet(state, model)
            slot = 0.0
        j = _fluxes(np.concatenate(([slot], c)), model, c1, slot)
        return j[:-1] - j[1:]

    sol = solve_ivp(
        rhs, (0.0, config.t_end), gamma[1:], method="DOP853",
        t_eval=out_times, rtol=min(config.rtol, 1e-10), atol=config.atol,
        max_step=config.t_end,
    )
    if not sol.success:
        raise BdRunError(f"explicit integration failed: {sol.message}")
    recorder = _Recorder(config, ells)
    snapshots = []
    for k, t in enumerate(sol.t):
        c = np.maximum(sol.y[:, k], 0.0)
        recorder.record(t, c)
        snapshots.append((float(t), _assemble(c, config, ells)))
    return recorder.series(config), snapshots
