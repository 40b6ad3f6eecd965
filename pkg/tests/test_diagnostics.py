import numpy as np
import pytest

from coarsenlab import initial_data
from coarsenlab.bd import DiscreteState
from coarsenlab.diagnostics import (
    TrajectorySeries,
    coarsening_rate,
    energy_and_scale,
    kohn_otto_report,
    mean_volume,
)
from coarsenlab.lsw_diffusive import ContinuousState, Grid

# Moments of c0 = x e^{-x}/2: the 2/3-moment is Gamma(8/3)/2 and the
# 4/3-moment is Gamma(10/3)/2 (mpmath, 50 digits).
E_EXPONENTIAL = 0.7522877441257714
M_EXPONENTIAL = 1.3890792402188857


def _exp_grid_state(n_cells=3000, x_max=60.0):
    edges = np.linspace(0.0, x_max, n_cells + 1)
    grid = Grid(edges=edges)
    cbar = initial_data.cell_averages(
        initial_data.exponential_moment(), edges, normalize=False
    )
    return ContinuousState(cbar=cbar, t=0.0, eps=0.1, L=1.0, grid=grid)


class TestTrajectorySeries:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrajectorySeries(times=np.array([0.0, 0.0, 1.0]))
        with pytest.raises(ValueError):
            TrajectorySeries(
                times=np.array([0.0, 1.0]), columns={"x": np.array([1.0])}
            )

    def test_write_csv_format(self, tmp_path):
        series = TrajectorySeries(
            times=np.array([0.0, 0.5]),
            columns={"a": np.array([1.0, 0.1]), "b": np.array([2.0, 3.0])},
        )
        path = tmp_path / "out.csv"
        series.write_csv(path, ["b", "a"])
        raw = path.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().splitlines()
        assert lines[0] == "t,b,a"
        assert lines[1] == "0.0,2.0,1.0"
        assert lines[2] == "0.5,3.0,0.1"


class TestMeanVolume:
    def test_discrete_hand_value(self):
        # one cluster species of size 2: mean volume is 2
        state = DiscreteState(c=np.array([0.0, 0.5]), t=0.0)
        assert mean_volume(state) == pytest.approx(2.0)

    def test_discrete_mixture(self):
        c = np.array([1.0, 0.0, 1.0])  # sizes 1 and 3, equal numbers
        assert mean_volume(DiscreteState(c=c, t=0.0)) == pytest.approx(2.0)

    def test_grid_state(self):
        assert mean_volume(_exp_grid_state()) == pytest.approx(2.0, rel=1e-4)

    def test_empty_distribution(self):
        state = DiscreteState(c=np.zeros(5), t=0.0)
        with pytest.raises(ValueError):
            mean_volume(state)

    def test_unsupported_type(self):
        with pytest.raises(TypeError):
            mean_volume(object())


class TestEnergyAndScale:
    def test_exponential_oracles(self):
        e, m = energy_and_scale(_exp_grid_state())
        assert e == pytest.approx(E_EXPONENTIAL, rel=2e-4)
        assert m == pytest.approx(M_EXPONENTIAL, rel=2e-4)

    def test_discrete_hand_value(self):
        c = np.zeros(12)
        c[7] = 0.125  # size 8, with empty bins above so the tail is resolved
        e, m = energy_and_scale(DiscreteState(c=c, t=0.0))
        assert e == pytest.approx(0.125 * 4.0)
        assert m == pytest.approx(0.125 * 16.0)

    def test_unresolved_tail_rejected(self):
        state = _exp_grid_state()
        state.cbar[-1] = 1.0
        with pytest.raises(ValueError):
            energy_and_scale(state)


def _power_law_series(t_end=50.0, n=400, e0=1.2, m0=1.0):
    """Synthetic run following the self-similar coarsening laws."""
    t = np.linspace(0.0, t_end, n)
    lam = 2.0 * (1.0 + t)
    return TrajectorySeries(
        times=t,
        columns={
            "Lambda": lam,
            "E": e0 * (1.0 + t) ** (-1.0 / 3.0),
            "M": m0 * (1.0 + t) ** (1.0 / 3.0),
        },
        provenance="synthetic",
    )


class TestKohnOttoReport:
    def test_self_similar_series_passes(self):
        report = kohn_otto_report(_power_law_series())
        assert report["E_nonincreasing"]
        assert report["EM_at_least_one"]
        assert report["EM_min"] == pytest.approx(1.2, rel=1e-12)
        assert report["rate_ratio_bounded"]
        assert report["R_bounded"]
        assert len(report["R_ladder"]) == 8

    def test_growing_energy_flagged(self):
        series = _power_law_series()
        series.columns["E"] = series.columns["E"][::-1].copy()
        report = kohn_otto_report(series)
        assert not report["E_nonincreasing"]

    def test_schwarz_violation_flagged(self):
        report = kohn_otto_report(_power_law_series(e0=0.5))
        assert not report["EM_at_least_one"]

    def test_doubling_time(self):
        # Lambda = 2(1+t) doubles at t = 1
        report = kohn_otto_report(_power_law_series())
        assert report["T_doubling"] == pytest.approx(1.0, abs=0.2)

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            kohn_otto_report(_power_law_series(n=5))


class TestCoarseningRate:
    def test_exact_on_cubics(self):
        t = np.linspace(0.0, 4.0, 81)
        series = TrajectorySeries(
            times=t, columns={"Lambda": 1.0 + t + 0.5 * t ** 2}
        )
        rate, smooth = coarsening_rate(series, 2.0)
        assert rate == pytest.approx(3.0, rel=1e-12)
        assert smooth

    def test_flags_kinks(self):
        t = np.linspace(0.0, 4.0, 81)
        lam = np.where(t < 2.0, t, 2.0 + 100.0 * (t - 2.0))
        series = TrajectorySeries(times=t, columns={"Lambda": lam})
        # just past the kink the two strides see different slope mixtures
        _, smooth = coarsening_rate(series, 2.05)
        assert not smooth

    def test_rejects_endpoint(self):
        t = np.linspace(0.0, 4.0, 81)
        series = TrajectorySeries(times=t, columns={"Lambda": t})
        with pytest.raises(ValueError):
            coarsening_rate(series, 0.01)
