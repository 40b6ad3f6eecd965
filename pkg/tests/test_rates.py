import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsenlab.rates import (
    RateModel,
    cluster_rates,
    critical_density,
    equilibrium_table,
)

# Reference computed by extended-precision summation of the first 10^4 series
# terms (mpmath, 50 digits) for a1 = z_s = q = 1.
RHO_CRIT_REF = 4.4684877653720019887


class TestClusterRates:
    def test_unit_parameters_monomer(self):
        a, b = cluster_rates(RateModel(1, 1, 1), 1)
        assert a == 1.0
        assert b == 2.0

    def test_unit_parameters_dimer(self):
        a, b = cluster_rates(RateModel(1, 1, 1), 2)
        assert a == pytest.approx(2 ** (1 / 3), abs=1e-12)
        assert b == pytest.approx(2 ** (1 / 3) + 1, abs=1e-12)

    def test_zero_surface_tension_rejected(self):
        # q = 0 violates the model constraints even though the formula extends
        with pytest.raises(ValueError):
            RateModel(2, 0.5, 0)

    def test_rejects_invalid_size(self):
        with pytest.raises(ValueError):
            cluster_rates(RateModel(1, 1, 1), 0)

    @given(
        a1=st.floats(0.1, 10),
        z_s=st.floats(0.1, 10),
        q=st.floats(0.01, 10),
        ell=st.integers(1, 10_000),
    )
    @settings(max_examples=200, deadline=None)
    def test_evaporation_dominates_saturated_attachment(self, a1, z_s, q, ell):
        model = RateModel(a1, z_s, q)
        a, b = cluster_rates(model, ell)
        assert b > a * z_s

    def test_rate_ratio_decreases_to_saturation(self):
        model = RateModel(1.3, 0.7, 2.1)
        ells = np.arange(1, 500)
        ratio = model.detach(ells) / model.attach(ells)
        assert np.all(np.diff(ratio) < 0)
        # ratio - z_s = q / ell^{1/3} decays to zero
        assert ratio[-1] - model.z_s == pytest.approx(model.q / 499 ** (1 / 3), rel=1e-12)


class TestEquilibriumTable:
    def test_q1_is_one(self):
        tab = equilibrium_table(RateModel(2.0, 0.5, 3.0), 10)
        assert tab.q(1) == 1.0

    def test_q2_hand_value(self):
        tab = equilibrium_table(RateModel(1, 1, 1), 2)
        assert tab.q(2) == pytest.approx(1.0 / (2 ** (1 / 3) + 1), rel=1e-12)

    def test_recursion_identity(self):
        model = RateModel(1.7, 0.9, 1.3)
        tab = equilibrium_table(model, 50)
        for ell in range(1, 50):
            a, _ = cluster_rates(model, ell)
            _, b_next = cluster_rates(model, ell + 1)
            assert tab.q(ell + 1) * b_next == pytest.approx(tab.q(ell) * a, rel=1e-12)

    def test_large_size_decay_rate(self):
        # against the leading-order decay exp[-(3q/2z_s) ell^(2/3)] with the
        # algebraic prefactor z_s^{-(ell-1)} ell^{-1/3}; the subleading
        # exp(O(ell^{1/3})) correction is not pinned down, so only a bounded
        # log-ratio is asserted
        tab = equilibrium_table(RateModel(1, 1, 1), 64)
        log_asym = -1.5 * 64 ** (2 / 3) - math.log(64) / 3
        assert abs(tab.log_q[63] - log_asym) <= 0.25 * abs(log_asym)

    def test_zero_flux_at_any_subsaturated_monomer_density(self):
        model = RateModel(1.1, 0.8, 0.6)
        tab = equilibrium_table(model, 40)
        for c1 in (0.2, 0.5, 0.8):
            c = tab.density(c1)
            ells = np.arange(1, 40)
            flux = model.attach(ells) * c1 * c[:-1] - model.detach(ells + 1) * c[1:]
            assert np.max(np.abs(flux)) < 1e-14 * np.max(model.attach(ells) * c1 * c[:-1] + 1e-300)

    def test_requires_at_least_two_sizes(self):
        with pytest.raises(ValueError):
            equilibrium_table(RateModel(1, 1, 1), 1)


class TestCriticalDensity:
    def test_reference_value(self):
        value = critical_density(RateModel(1, 1, 1), tol=1e-12)
        assert value == pytest.approx(RHO_CRIT_REF, rel=1e-9)

    def test_independent_of_rate_scale(self):
        lo = critical_density(RateModel(1, 1, 1), tol=1e-12)
        hi = critical_density(RateModel(7.3, 1, 1), tol=1e-12)
        assert lo == pytest.approx(hi, rel=1e-13)

    def test_decreasing_in_surface_tension(self):
        assert critical_density(RateModel(1, 1, 1)) > critical_density(RateModel(1, 1, 2))

    def test_increasing_in_saturation_density(self):
        assert critical_density(RateModel(1, 1.2, 1)) > critical_density(RateModel(1, 0.8, 1))

    def test_rejects_bad_tolerance(self):
        with pytest.raises(ValueError):
            critical_density(RateModel(1, 1, 1), tol=0.0)
