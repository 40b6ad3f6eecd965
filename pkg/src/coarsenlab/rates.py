"""Attachment/evaporation rate coefficients and the equilibrium cluster family.

Clusters of volume ``ell`` gain monomers at rate ``a_ell * c1`` and shed them
at rate ``b_ell``.  The rate family used throughout the package is

    a_ell = a1 * ell**(1/3),      b_ell = a_ell * (z_s + q * ell**(-1/3)),

with ``a1, z_s, q > 0``.  Detailed balance of the fluxes yields an equilibrium
family ``c_ell = Q_ell * c1**ell`` for any monomer density ``0 < c1 <= z_s``;
the equilibrium at ``c1 = z_s`` has the maximal (critical) mass density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RateModel",
    "EquilibriumTable",
    "cluster_rates",
    "equilibrium_table",
    "critical_density",
]


@dataclass(frozen=True)
class RateModel:
    """Coefficients (a1, z_s, q) defining the attachment/evaporation rates."""

    a1: float
    z_s: float
    q: float

    def __post_init__(self):
        if self.a1 <= 0 or self.z_s <= 0 or self.q <= 0:
            raise ValueError("RateModel requires a1 > 0, z_s > 0, q > 0")

    def attach(self, ell):
        """Attachment rate a_ell; accepts scalars or arrays."""
        ell = np.asarray(ell, dtype=float)
        return self.a1 * np.cbrt(ell)

    def detach(self, ell):
        """Evaporation rate b_ell; accepts scalars or arrays."""
        ell = np.asarray(ell, dtype=float)
        return self.attach(ell) * (self.z_s + self.q / np.cbrt(ell))


def cluster_rates(model: RateModel, ell: int) -> tuple[float, float]:
    """Return (a_ell, b_ell) for a single cluster size ``ell >= 1``."""
    if ell < 1:
        raise ValueError(f"cluster size must be >= 1, got {ell}")
    a = model.a1 * ell ** (1.0 / 3.0)
    b = a * (model.z_s + model.q * ell ** (-1.0 / 3.0))
    return a, b


@dataclass(frozen=True)
class EquilibriumTable:
    """Equilibrium coefficients Q_ell for ell = 1..ell_max, stored as logs.

    ``Q_1 = 1`` and ``Q_{ell+1} b_{ell+1} = Q_ell a_ell`` (zero-flux condition).
    Values decay super-exponentially, so only ``log Q_ell`` is stored; the
    linear values are exponentiated on demand.
    """

    log_q: np.ndarray  # log Q_ell, index 0 <-> ell = 1
    ell_max: int

    def q(self, ell: int) -> float:
        """Q_ell as a float (may underflow to 0 for very large ell)."""
        if not 1 <= ell <= self.ell_max:
            raise ValueError(f"ell must be in [1, {self.ell_max}]")
        return math.exp(self.log_q[ell - 1])

    def values(self) -> np.ndarray:
        """Array of Q_ell, ell = 1..ell_max."""
        return np.exp(self.log_q)

    def density(self, c1: float) -> np.ndarray:
        """Equilibrium densities c_ell = Q_ell c1**ell for ell = 1..ell_max."""
        if c1 <= 0:
            raise ValueError("monomer density must be positive")
        ells = np.arange(1, self.ell_max + 1)
        return np.exp(self.log_q + ells * math.log(c1))


def equilibrium_table(model: RateModel, ell_max: int) -> EquilibriumTable:
    """Build Q_ell for ell = 1..ell_max from the zero-flux recursion."""
    if ell_max < 2:
        raise ValueError("ell_max must be >= 2")
    ells = np.arange(1, ell_max + 1, dtype=float)
    log_a = np.log(model.attach(ells[:-1]))
    log_b_next = np.log(model.detach(ells[1:]))
    log_q = np.concatenate(([0.0], np.cumsum(log_a - log_b_next)))
    return EquilibriumTable(log_q=log_q, ell_max=ell_max)


_CRITICAL_CAP = 10**6
_CRITICAL_STREAK = 5


def critical_density(model: RateModel, tol: float = 1e-12) -> float:
    """Mass density of the saturated equilibrium, sum_ell ell Q_ell z_s**ell.

    The series is truncated once the term ``ell * Q_ell * z_s**ell`` has been
    below ``tol`` times the partial sum for 5 consecutive ell (guarding
    against non-monotone early terms).  Raises if the cap of 1e6 terms is hit,
    which signals pathological parameters.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    log_zs = math.log(model.z_s)
    log_q = 0.0
    total = model.z_s  # ell = 1 term
    streak = 0
    for ell in range(1, _CRITICAL_CAP):
        a, _ = cluster_rates(model, ell)
        _, b_next = cluster_rates(model, ell + 1)
        log_q += math.log(a) - math.log(b_next)
        log_term = math.log(ell + 1) + log_q + (ell + 1) * log_zs
        term = math.exp(log_term) if log_term > -745.0 else 0.0
        total += term
        if term < tol * total:
            streak += 1
            if streak >= _CRITICAL_STREAK:
                return total
        else:
            streak = 0
    raise RuntimeError(
        "critical_density series did not converge within 1e6 terms; "
        "check rate parameters"
    )
