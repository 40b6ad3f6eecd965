import math

import numpy as np
import pytest

from coarsenlab import initial_data
from coarsenlab.lsw_classical import (
    ClassicalRunConfig,
    ClassicalSolver,
    LHistory,
    characteristic_backward,
    characteristic_jacobian,
    rate_semi_analytic,
    run_classical,
)

# Initial transport parameter for c0 = x e^{-x}/2:
# L0^{1/3} = (Gamma(1/3) + Gamma(4/3)) / 3, evaluated with mpmath (50 digits).
L0_EXPONENTIAL = 1.6878766048919847

# Foot of the boundary characteristic under L == 1 at t = 0.5, i.e. the root
# of the separable quadrature T(x) = 0.5 (see deterministic_exit_time below);
# computed with mpmath findroot at 50 digits.
FOOT_HALF = 0.251005433430258428


def deterministic_exit_time(x: float) -> float:
    """Closed-form travel time to 0 under dx/dt = -(1 - x^{1/3}), L == 1."""
    u = x ** (1.0 / 3.0)
    return 3.0 * (-u * u / 2.0 - u - math.log1p(-u))


class TestBackwardCharacteristics:
    def test_identity_at_t0(self):
        hist = LHistory.constant(1.0, 1.0)
        for x in (0.0, 0.4, 2.7):
            assert characteristic_backward(x, 0.0, hist) == x

    def test_boundary_foot_oracle(self):
        hist = LHistory.constant(1.0, 1.0)
        foot = characteristic_backward(0.0, 0.5, hist)
        assert foot == pytest.approx(FOOT_HALF, abs=1e-8)
        # the foot's travel time back to zero is exactly the elapsed time
        assert deterministic_exit_time(foot) == pytest.approx(0.5, abs=1e-10)

    def test_exit_time_consistency(self):
        # starting from x the characteristic reaches 0 after T(x): the foot
        # at time T(x) of the terminal point 0 must be x itself
        hist = LHistory.constant(1.0, 2.0)
        for x in (0.1, 0.3, 0.6):
            t_exit = deterministic_exit_time(x)
            assert characteristic_backward(0.0, t_exit, hist) == pytest.approx(
                x, abs=1e-9
            )

    def test_feet_increase_with_terminal_position(self):
        hist = LHistory.constant(1.5, 1.0)
        xs = np.linspace(0.0, 4.0, 40)
        feet = np.array([characteristic_backward(x, 0.8, hist) for x in xs])
        assert np.all(np.diff(feet) > 0)

    def test_foot_below_x_plus_t(self):
        hist = LHistory.constant(0.7, 1.0)
        for x in (0.0, 0.5, 2.0):
            for t in (0.25, 1.0):
                assert characteristic_backward(x, t, hist) < x + t

    def test_rejects_negative_terminal(self):
        hist = LHistory.constant(1.0, 1.0)
        with pytest.raises(ValueError):
            characteristic_backward(-0.1, 0.5, hist)


class TestJacobian:
    def test_identity_at_t0(self):
        hist = LHistory.constant(1.0, 1.0)
        assert characteristic_jacobian(0.5, 0.0, hist) == 1.0

    def test_matches_finite_difference(self):
        hist = LHistory(
            times=np.array([0.0, 0.5, 1.0]),
            values=np.array([1.0, 1.3, 1.7]),
        )
        # the FD is limited by the ~1e-11 accuracy of the feet themselves
        h = 1e-5
        for x, t in ((0.4, 0.8), (1.5, 1.0), (0.05, 0.3)):
            fd = (
                characteristic_backward(x + h, t, hist)
                - characteristic_backward(x - h, t, hist)
            ) / (2 * h)
            assert characteristic_jacobian(x, t, hist) == pytest.approx(fd, rel=1e-4)

    def test_boundary_limit_matches_one_sided_difference(self):
        # dF/dx has an O(x^{1/3}) correction near the boundary, so a plain
        # one-sided difference converges slowly; extrapolate it away with two
        # step sizes in ratio 8 (ratio 2 in h^{1/3})
        hist = LHistory.constant(1.0, 1.0)
        f0 = characteristic_backward(0.0, 0.5, hist)

        def fd(h):
            return (characteristic_backward(h, 0.5, hist) - f0) / h

        extrapolated = 2.0 * fd(1e-6) - fd(8e-6)
        assert characteristic_jacobian(0.0, 0.5, hist) == pytest.approx(
            extrapolated, rel=2e-3
        )

    def test_within_unit_interval(self):
        hist = LHistory.constant(0.9, 2.0)
        for x in (0.0, 0.3, 1.2, 5.0):
            j = characteristic_jacobian(x, 1.5, hist)
            assert 0.0 < j <= 1.0 + 1e-12


class TestLHistory:
    def test_interpolation_and_bounds(self):
        hist = LHistory(times=np.array([0.0, 1.0]), values=np.array([1.0, 3.0]))
        assert hist.value(0.5) == pytest.approx(2.0)
        with pytest.raises(ValueError):
            hist.value(1.5)

    def test_extension_must_advance(self):
        hist = LHistory.constant(1.0, 1.0)
        with pytest.raises(ValueError):
            hist.extended(0.5, 2.0)

    def test_floor_enforced(self):
        with pytest.raises(ValueError):
            LHistory(times=np.array([0.0, 1.0]), values=np.array([1.0, 1e-12]))


@pytest.fixture(scope="module")
def exponential_run():
    cfg = ClassicalRunConfig(
        tail=initial_data.exponential_moment(), t_end=0.5, dt=0.0125
    )
    return run_classical(cfg)


class TestSolver:
    def test_initial_transport_parameter(self):
        cfg = ClassicalRunConfig(tail=initial_data.exponential_moment(), t_end=1.0)
        solver = ClassicalSolver(cfg)
        assert solver.current_l == pytest.approx(L0_EXPONENTIAL, rel=1e-10)

    def test_mass_conserved(self, exponential_run):
        series, _, _ = exponential_run
        assert np.max(np.abs(series.column("mass_residual"))) <= 1e-6

    def test_monotone_functionals(self, exponential_run):
        series, _, _ = exponential_run
        lam = series.column("Lambda")
        assert np.all(np.diff(lam) >= -1e-12)
        assert np.all(series.column("L") <= lam + 1e-9)
        assert np.all(np.diff(series.column("N")) < 0)

    def test_energy_decreasing(self, exponential_run):
        series, _, _ = exponential_run
        assert np.all(np.diff(series.column("E")) < 0)

    def test_tail_value_matches_series_number(self, exponential_run):
        series, _, solver = exponential_run
        n_end = float(series.column("N")[-1])
        assert solver.tail_value(0.0) == pytest.approx(n_end, rel=1e-8)

    def test_semi_analytic_rate_matches_finite_difference(self, exponential_run):
        series, _, solver = exponential_run
        t = 0.25
        lam = series.column("Lambda")
        i = int(np.argmin(np.abs(series.times - t)))
        fd = (lam[i + 1] - lam[i - 1]) / (series.times[i + 1] - series.times[i - 1])
        assert rate_semi_analytic(solver, t) == pytest.approx(fd, rel=1e-3)

    def test_step_size_self_consistency(self):
        # halving dt moves L(t_end) by far less than the acceptance tolerances
        vals = []
        for dt in (0.025, 0.0125):
            cfg = ClassicalRunConfig(
                tail=initial_data.exponential_moment(), t_end=0.25, dt=dt
            )
            series, _, _ = run_classical(cfg)
            vals.append(float(series.column("L")[-1]))
        assert vals[0] == pytest.approx(vals[1], abs=1e-5)

    def test_dilation_covariance(self):
        lam = 2.0
        base_cfg = ClassicalRunConfig(
            tail=initial_data.exponential_moment(), t_end=0.5, dt=0.0125
        )
        base, _, _ = run_classical(base_cfg)
        scaled_cfg = ClassicalRunConfig(
            tail=initial_data.dilated(base_cfg.tail, lam),
            t_end=base_cfg.t_end / lam,
            dt=base_cfg.dt / lam,
        )
        scaled, _, _ = run_classical(scaled_cfg)
        assert lam * scaled.column("L")[-1] == pytest.approx(
            float(base.column("L")[-1]), abs=1e-4
        )
        assert lam * scaled.column("Lambda")[-1] == pytest.approx(
            float(base.column("Lambda")[-1]), abs=1e-4
        )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ClassicalRunConfig(
                tail=initial_data.exponential_moment(), t_end=-1.0
            ).validate()
