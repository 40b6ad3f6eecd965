"""Coarsening functionals and inequality checks shared by all solvers.

Everything here works off either a solver state (for the pointwise moments) or
a recorded :class:`TrajectorySeries` (for the time-dependent checks), never off
solver internals, so the same checks apply to the discrete cluster system, the
classical transport solver, and the diffusive finite-volume solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TrajectorySeries",
    "mean_volume",
    "energy_and_scale",
    "kohn_otto_report",
    "coarsening_rate",
]


@dataclass
class TrajectorySeries:
    """Time series of diagnostics recorded along a run.

    ``columns`` maps names such as "Lambda", "L", "E", "M", "N", "mass" to
    arrays aligned with ``times``.  ``provenance`` tags which solver and
    configuration produced the series.
    """

    times: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("series times must be strictly increasing")
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=float)
            if col.shape != self.times.shape:
                raise ValueError(f"column {name!r} length mismatch")
            self.columns[name] = col

    def __len__(self) -> int:
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def write_csv(self, path, order: list[str]) -> None:
        """Write `t,<order...>` with '.' decimals, ',' delimiter, LF endings."""
        data = np.column_stack([self.times] + [self.columns[k] for k in order])
        header = ",".join(["t"] + order)
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# pointwise moments


def _weights(state) -> tuple[np.ndarray, np.ndarray]:
    """(sizes, masses-per-bin) for either a grid state or a cluster state.

    Grid states expose cell averages ``cbar`` on a grid; the weight of cell i
    is cbar_i * dx_i.  Cluster states expose densities ``c`` on ell = 1..ell_max
    with the monomer slot already reflecting the closure (0 for the Dirichlet
    system, so sums effectively start at ell = 2 there).
    """
    if hasattr(state, "cbar"):
        x = state.grid.centers
        return x, state.cbar * state.grid.widths
    if hasattr(state, "c"):
        ells = np.arange(1, len(state.c) + 1, dtype=float)
        return ells, np.asarray(state.c, dtype=float)
    raise TypeError(f"unsupported state type {type(state).__name__}")


def mean_volume(state) -> float:
    """Mean cluster volume: first moment over zeroth moment."""
    x, w = _weights(state)
    number = float(w.sum())
    if number <= 0.0:
        raise ValueError("empty distribution")
    return float(x @ w) / number


def energy_and_scale(state) -> tuple[float, float]:
    """The 2/3-moment (energy) and the 4/3-moment (length scale).

    Raises if the 4/3-moment is visibly unresolved: the top bin carrying more
    than 1e-6 of the total signals a truncated divergent tail.
    """
    x, w = _weights(state)
    e_terms = np.cbrt(x * x) * w
    m_terms = np.cbrt(x) * x * w
    m = float(m_terms.sum())
    if m > 0.0 and m_terms[-1] > 1e-6 * m:
        raise ValueError("4/3-moment tail not resolved on this grid")
    return float(e_terms.sum()), m


# ---------------------------------------------------------------------------
# series-level checks


def kohn_otto_report(series: TrajectorySeries, n_ladder: int = 8) -> dict:
    """Boundedness/monotonicity report for the coarsening-rate inequalities.

    Checks, on a recorded run: the energy E is nonincreasing; the product
    E*M never drops below 1 (Schwarz, for unit mass); the finite-difference
    ratio |dM/dt|^2 / |dE/dt| stays bounded (no growth trend over the second
    half of the run); and the time-averaged rate functional
    R(T) = [T^-1 int_0^T E^2 dt]^(-3/2) / T is bounded along a ladder of T.
    """
    if len(series) < 8:
        raise ValueError("series too short for a coarsening report (< 8 samples)")
    t = series.times
    e = series.column("E")
    m = series.column("M")

    e_tol = 1e-12 * max(1.0, float(np.max(np.abs(e))))
    e_nonincreasing = bool(np.all(np.diff(e) <= e_tol))

    em_min = float(np.min(e * m))

    dt = np.diff(t)
    de = np.diff(e) / dt
    dm = np.diff(m) / dt
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(de) > 0, dm * dm / np.abs(de), np.inf)
    ratio = ratio[np.isfinite(ratio)]
    half = len(ratio) // 2
    ratio_late = ratio[half:]
    ratio_max = float(np.max(ratio)) if len(ratio) else float("nan")
    # "bounded" = the late-time level does not exceed the early-time level:
    # compare upper quartiles so single-sample noise does not dominate.
    if len(ratio_late) >= 4 and half >= 4:
        early_q = float(np.quantile(ratio[:half], 0.75))
        late_q = float(np.quantile(ratio_late, 0.75))
        ratio_bounded = bool(late_q <= 1.5 * early_q + 1e-30)
    else:
        ratio_bounded = True

    # R(T) ladder: geometric T values up to the end of the run.
    t_end = float(t[-1])
    ladder_t = t_end * 0.5 ** np.arange(n_ladder - 1, -1, -1, dtype=float)
    e_sq = e * e
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (e_sq[1:] + e_sq[:-1]) * dt)))
    r_values = []
    for big_t in ladder_t:
        avg = float(np.interp(big_t, t, cum)) / big_t
        r_values.append(avg ** (-1.5) / big_t)
    lam = series.columns.get("Lambda")
    if lam is not None and np.isfinite(lam[0]):
        doubled = np.nonzero(lam >= 2.0 * lam[0])[0]
        t0 = float(t[doubled[0]]) if len(doubled) else t_end
    else:
        t0 = float(t[len(t) // 4])
    tail = [r for bt, r in zip(ladder_t, r_values) if bt >= t0]
    r_bounded = bool(
        len(tail) < 2 or all(b <= a * 1.05 for a, b in zip(tail[:-1], tail[1:]))
    )

    return {
        "E_nonincreasing": e_nonincreasing,
        "EM_min": em_min,
        "EM_at_least_one": bool(em_min >= 1.0 - 1e-6),
        "rate_ratio_max": ratio_max,
        "rate_ratio_bounded": ratio_bounded,
        "R_ladder": [
            {"T": float(bt), "R": float(r)} for bt, r in zip(ladder_t, r_values)
        ],
        "R_bounded": r_bounded,
        "T_doubling": t0,
        "provenance": series.provenance,
    }


def coarsening_rate(series: TrajectorySeries, t: float) -> tuple[float, bool]:
    """Centered finite-difference d(Lambda)/dt with Richardson extrapolation.

    Returns (rate, smooth); ``smooth`` is False when the stride-h and
    stride-2h estimates disagree by more than 20%, flagging an unreliable
    window rather than raising.
    """
    times = series.times
    lam = series.column("Lambda")
    h = float(np.median(np.diff(times)))
    if not (times[0] + 2 * h <= t <= times[-1] - 2 * h):
        raise ValueError("t too close to the ends of the series")

    def lam_at(s: float) -> float:
        return float(np.interp(s, times, lam))

    d_h = (lam_at(t + h) - lam_at(t - h)) / (2 * h)
    d_2h = (lam_at(t + 2 * h) - lam_at(t - 2 * h)) / (4 * h)
    rate = (4.0 * d_h - d_2h) / 3.0
    scale = max(abs(rate), 1e-300)
    smooth = abs(d_h - d_2h) <= 0.2 * scale
    return rate, smooth
