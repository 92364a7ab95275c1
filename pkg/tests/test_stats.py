"""Histograms, peak/lobe detection, mean accumulation, sweeps."""

import math

import numpy as np
import pytest

from qfb import (
    BlochState,
    HistogramGrid,
    MeanAccumulator,
    ModelParams,
    SteadySampling,
    TrajectoryConfig,
    accumulate_mean,
    build_histogram,
    design_nonideal,
    find_peak,
    run_ensemble,
    summarize,
    sweep_chain,
)
from qfb.engine import TrajectoryRecord

NONIDEAL_COARSE = ModelParams(tau_m=0.2, dt=0.01, T1=60.0, T2=40.0, eta=0.41)


def gaussian_cloud(center, spread, n, seed=0):
    rng = np.random.default_rng(seed)
    pts = center + spread * rng.standard_normal((n, 2))
    r = np.linalg.norm(pts, axis=1)
    scale = np.where(r > 1.0, 0.999 / r, 1.0)
    return pts * scale[:, None]


class TestHistogramGrid:
    def test_counts_total_and_coverage(self):
        samples = gaussian_cloud((0.3, 0.2), 0.2, 5000, seed=1)
        grid = build_histogram(samples)
        assert grid.counts.sum() == 5000
        assert grid.n_samples == 5000

    def test_single_point_single_bin(self):
        samples = np.tile([[0.515, 0.375]], (100, 1))
        grid = build_histogram(samples)
        assert (grid.counts > 0).sum() == 1
        assert grid.counts.max() == 100

    def test_clipping_keeps_all_samples(self):
        # integrators that leak slightly outside the square still land in edge bins
        samples = np.array([[1.02, 0.0], [-1.5, 0.3], [0.0, 1.001]])
        grid = build_histogram(samples)
        assert grid.counts.sum() == 3

    def test_uniform_chi_square_sanity(self):
        rng = np.random.default_rng(8)
        samples = rng.uniform(-1, 1, size=(200000, 2))
        grid = build_histogram(samples, n_bins=20)
        expected = 200000 / 400.0
        chi2 = ((grid.counts - expected) ** 2 / expected).sum()
        # dof = 399, sd = sqrt(2*399) ~ 28; allow 5 sigma
        assert abs(chi2 - 399) < 5 * math.sqrt(2 * 399)

    def test_merge_requires_same_edges(self):
        a = HistogramGrid.empty(100)
        b = HistogramGrid.empty(50)
        with pytest.raises(ValueError):
            a.merge(b)

    def test_merge_associative_over_partitions(self):
        samples = gaussian_cloud((0.0, -0.4), 0.3, 9000, seed=3)
        whole = build_histogram(samples)
        for split in (1, 2, 5, 9):
            parts = np.array_split(samples, split)
            acc = HistogramGrid.empty()
            for p in parts:
                acc.merge(build_histogram(p))
            assert np.array_equal(acc.counts, whole.counts)
            assert acc.n_samples == whole.n_samples


class TestFindPeak:
    def test_delta_distribution(self):
        samples = np.tile([[0.515, 0.375]], (2000, 1))
        pk = find_peak(build_histogram(samples))
        assert pk.sigma == 0.0
        assert pk.sigma_rms == 0.0
        assert len(pk.lobes) == 1
        assert pk.lobes[0].mass_fraction == pytest.approx(1.0)
        assert pk.theta_p == pytest.approx(math.atan2(0.515, 0.375), abs=0.03)
        assert pk.r_p == pytest.approx(math.hypot(0.515, 0.375), abs=0.03)

    def test_sigma_definitions_on_offset_cloud(self):
        # peak at the cloud center: sigma_rms ~ sqrt(E d^2) of a Rayleigh;
        # sigma = std(d) is strictly smaller
        samples = gaussian_cloud((0.4, 0.1), 0.08, 300000, seed=5)
        pk = find_peak(build_histogram(samples))
        s = 0.08
        assert pk.sigma_rms == pytest.approx(s * math.sqrt(2.0), rel=0.05)
        assert pk.sigma == pytest.approx(s * math.sqrt(2.0 - math.pi / 2.0), rel=0.08)
        assert pk.sigma < pk.sigma_rms

    def test_two_lobes_detected_and_ordered(self):
        a = gaussian_cloud((0.23, 0.93), 0.04, 60000, seed=6)
        b = gaussian_cloud((0.55, -0.55), 0.06, 40000, seed=7)
        pk = find_peak(build_histogram(np.vstack([a, b])))
        assert len(pk.lobes) == 2
        assert pk.lobes[0].mass_fraction > pk.lobes[1].mass_fraction
        assert pk.lobes[0].theta < 0.5  # dominant lobe near the upper pole
        assert sum(l.mass_fraction for l in pk.lobes) <= 1.0

    def test_speck_suppression(self):
        bulk = gaussian_cloud((0.0, 0.5), 0.05, 100000, seed=9)
        specks = np.array([[-0.9, -0.9]] * 300)  # 0.3% of mass, isolated
        pk = find_peak(build_histogram(np.vstack([bulk, specks])))
        assert len(pk.lobes) == 1

    def test_tie_reporting(self):
        samples = np.array([[0.105, 0.105]] * 7 + [[-0.305, 0.505]] * 7)
        pk = find_peak(build_histogram(samples))
        assert len(pk.tie_bins) == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            find_peak(HistogramGrid.empty())


class TestMeanAccumulator:
    def _record(self, times, offset):
        xyz = np.stack([np.zeros_like(times), times * 0 + offset, times], axis=1)
        return TrajectoryRecord(times=times, xyz=xyz)

    def test_single_record_is_identity(self):
        t = np.linspace(0, 1, 11)
        r = self._record(t, 0.5)
        times, mean = accumulate_mean([r])
        assert np.array_equal(mean, r.xyz)

    def test_mirrored_pair_averages_to_axis(self):
        t = np.linspace(0, 1, 11)
        a = self._record(t, 0.5)
        b = self._record(t, -0.5)
        _, mean = accumulate_mean([a, b])
        assert np.all(mean[:, 1] == 0.0)
        assert np.array_equal(mean[:, 2], t)

    def test_mismatched_grids_rejected(self):
        a = self._record(np.linspace(0, 1, 11), 0.1)
        b = self._record(np.linspace(0, 2, 11), 0.1)
        with pytest.raises(ValueError):
            accumulate_mean([a, b])

    def test_merge_equals_bulk(self):
        t = np.linspace(0, 1, 6)
        records = [self._record(t, o) for o in np.linspace(-1, 1, 10)]
        _, bulk = accumulate_mean(records)
        left = MeanAccumulator(t)
        for r in records[:4]:
            left.add(r)
        right = MeanAccumulator(t)
        for r in records[4:]:
            right.add(r)
        assert np.allclose(left.merge(right).mean(), bulk, atol=1e-15)


class TestSummaryAndSweeps:
    def test_summarize_includes_peak_and_radius(self):
        law, r_s = design_nonideal(0.3 * math.pi, NONIDEAL_COARSE)
        init = BlochState.from_polar(0.3 * math.pi, r_s)
        cfg = TrajectoryConfig(init, 9.8, record_stride=20, seed=14)
        res = run_ensemble(
            400, cfg, NONIDEAL_COARSE, law, steady=SteadySampling(2.0, 0.2)
        )
        summary = summarize(res)
        assert summary.n_steady_samples == res.steady_yz.shape[0]
        assert summary.histogram.counts.sum() == summary.n_steady_samples
        assert 0.5 < summary.r_mean < 0.7
        assert summary.peak is not None

    def test_sweep_chain_common_seed_and_values(self):
        rows = sweep_chain(
            0.3 * math.pi,
            [0.0, 0.04],
            "Td",
            NONIDEAL_COARSE,
            n_traj=300,
            total_time=9.8,
            seed=3,
        )
        assert [r.value for r in rows] == [0.0, 0.04]
        assert rows[0].delta0 == rows[1].delta0  # same designed law
        assert rows[1].r_e < rows[0].r_e  # delay degrades the mean radius

    def test_sweep_chain_rejects_unknown_axis(self):
        with pytest.raises(ValueError):
            sweep_chain(
                0.3 * math.pi, [0.0], "Tq", NONIDEAL_COARSE,
                n_traj=10, total_time=9.8,
            )

    def test_angular_drift_toward_pole_at_full_chain_lag(self):
        """Filter or delay at tau_m shifts the mean angle ~pi/10 pole-ward."""
        from dataclasses import replace

        p = NONIDEAL_COARSE
        theta = 0.3 * math.pi
        base, r_s = design_nonideal(theta, p)
        init = BlochState.from_polar(theta, r_s)
        cfg = TrajectoryConfig(init, 17.8, record_stride=20, seed=44)
        for which in ("Ts", "Td"):
            law = replace(base, **{which: p.tau_m})
            res = run_ensemble(
                1250, cfg, p, law, steady=SteadySampling(2.0, 0.2)
            )
            my, mz = res.steady_yz.mean(axis=0)
            drift = math.atan2(my, mz) - theta
            # toward the excited pole (negative), magnitude ~pi/10
            assert -0.13 * math.pi < drift < -0.05 * math.pi, (which, drift)

    def test_equator_instability_under_delay(self):
        """Angular spread: narrowest at the equator without delay, fastest to
        degrade once delay is added (growth ratio >= 2x that at 0.3 pi)."""
        p = NONIDEAL_COARSE

        def ang_std(theta_frac, td):
            theta = theta_frac * math.pi
            law, r_s = design_nonideal(theta, p)
            law = type(law)(law.delta0, law.delta1, Ts=0.0, Td=td)
            init = BlochState.from_polar(theta, r_s)
            cfg = TrajectoryConfig(init, 9.8, record_stride=20, seed=13)
            res = run_ensemble(500, cfg, p, law, steady=SteadySampling(2.0, 0.2))
            yz = res.steady_yz
            return float(np.std(np.arctan2(yz[:, 0], yz[:, 1]) - theta))

        eq0, eq1 = ang_std(0.5, 0.0), ang_std(0.5, 0.02)
        g0, g1 = ang_std(0.3, 0.0), ang_std(0.3, 0.02)
        assert eq0 < g0  # equator is the tightest without delay
        assert (eq1 / eq0) >= 2.0 * (g1 / g0)  # and degrades fastest with it
