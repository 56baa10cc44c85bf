"""Matching probabilities and the expected correct-match rate."""

from __future__ import annotations

import math

import numpy as np
import pytest

from smoothmask.dataset import SpatialDataset
from smoothmask.risk import (
    IntruderScenario,
    ap_components,
    expected_correct_rate,
    match_probabilities,
    risk_report,
    u_components,
)


def make_dataset(x, y, ids=None):
    x = np.asarray(x, dtype=float)
    n = len(x)
    rng = np.random.default_rng(123)
    return SpatialDataset(
        ids=ids or tuple(f"r{i}" for i in range(n)),
        locs=rng.uniform(-1, 1, (n, 2)),
        x=x[:, None],
        y=np.asarray(y, dtype=float),
        x_names=("x",),
    )


class TestApComponents:
    def test_zero_distance_gives_one(self):
        comp, degen = ap_components(np.array([[1.0], [2.0], [3.0]]), np.array([1.0]))
        assert comp[0] == 1.0
        assert not degen

    def test_max_distance_gives_zero(self):
        comp, _ = ap_components(np.array([[1.0], [2.0], [3.0]]), np.array([1.0]))
        assert comp[2] == 0.0

    def test_distances_0_1_2(self):
        comp, _ = ap_components(np.array([[0.0], [1.0], [2.0]]), np.array([0.0]))
        np.testing.assert_allclose(comp, [1.0, 0.5, 0.0], rtol=0, atol=0)

    def test_degenerate_all_zero(self):
        comp, degen = ap_components(np.array([[2.0], [2.0]]), np.array([2.0]))
        assert degen
        np.testing.assert_array_equal(comp, [1.0, 1.0])


class TestUComponents:
    def test_point_mass_at_own_masked_value_gives_one(self):
        masked_u = np.array([[3.0], [5.0], [9.0]])
        preds = masked_u.copy()
        comp = u_components(masked_u, preds, np.zeros(1), mc_draws=1,
                            rng=np.random.default_rng(0))
        np.testing.assert_array_equal(comp, [1.0, 1.0, 1.0])

    def test_empty_u_is_vacuous(self):
        comp = u_components(np.empty((4, 0)), np.empty((4, 0)), np.empty(0),
                            mc_draws=10, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(comp, np.ones(4))

    def test_monte_carlo_matches_quadrature(self):
        # dense-grid quadrature oracle for the one-dimensional integral
        masked_u = np.array([[3.5], [5.0], [8.0]])
        preds = np.array([[3.2], [5.4], [7.9]])
        sd = np.array([0.8])
        comp = u_components(masked_u, preds, sd, mc_draws=100_000,
                            rng=np.random.default_rng(42))
        vals = masked_u[:, 0]
        for j in range(3):
            grid = np.linspace(preds[j, 0] - 8 * sd[0], preds[j, 0] + 8 * sd[0], 40_001)
            density = np.exp(-0.5 * ((grid - preds[j, 0]) / sd[0]) ** 2) / (
                sd[0] * math.sqrt(2 * math.pi))
            dmax = np.maximum.reduce([np.abs(grid - v) for v in vals])
            integrand = (1.0 - np.abs(grid - vals[j]) / dmax) * density
            want = np.trapezoid(integrand, grid)
            assert comp[j] == pytest.approx(want, abs=0.01)

    def test_multidimensional_u_path(self):
        rng = np.random.default_rng(3)
        masked_u = rng.normal(0, 1, (6, 2))
        preds = masked_u + rng.normal(0, 0.1, (6, 2))
        comp = u_components(masked_u, preds, np.array([0.2, 0.3]), mc_draws=200,
                            rng=np.random.default_rng(1))
        assert ((comp >= 0) & (comp <= 1)).all()


class TestMatchProbabilities:
    def test_identity_masking_exact_match_dominates(self):
        # others equidistant from the target, so their components are exactly 0
        data = make_dataset(x=[0.0, 1.0, -1.0], y=[5.0, 7.0, 7.0])
        scenario = IntruderScenario(ap_columns=("x", "y"))
        p = match_probabilities(data, data, "r0", scenario)
        np.testing.assert_array_equal(p, [1.0, 0.0, 0.0])

    def test_all_identical_records_uniform(self):
        data = make_dataset(x=[2.0, 2.0, 2.0, 2.0], y=[1.0, 1.0, 1.0, 1.0])
        scenario = IntruderScenario(ap_columns=("x",), u_columns=("y",), mc_draws=50, seed=1)
        p = match_probabilities(data, data, "r1", scenario)
        np.testing.assert_allclose(p, 0.25, rtol=0, atol=1e-12)

    def test_hand_built_three_record_bayes(self):
        # masked release, intruder truth, and a sought column whose true values
        # are exactly linear in the released available column (zero residual
        # variance -> the integral collapses to a point mass at the prediction)
        masked = make_dataset(x=[1.0, 2.0, 4.0], y=[3.5, 5.0, 8.0], ids=("a", "b", "c"))
        truth = make_dataset(x=[1.1, 2.2, 3.6], y=[3.0, 5.0, 9.0], ids=("a", "b", "c"))
        scenario = IntruderScenario(ap_columns=("x",), u_columns=("y",),
                                    mc_draws=7, seed=0, standardize=False)
        p = match_probabilities(masked, truth, "a", scenario)

        # available-column components for target a (true x = 1.1):
        ap = [1.0 - 0.1 / 2.9, 1.0 - 0.9 / 2.9, 0.0]
        # sought-column components with predictions (3, 5, 9):
        u_a = 1.0 - 0.5 / 5.0              # |3.5-3| over max(|3.5-3|,|5-3|,|8-3|)
        u_b = 1.0                           # |5-5| = 0
        u_c = 1.0 - 1.0 / 5.5               # |8-9| over max(|3.5-9|,|5-9|,|8-9|)
        raw = [ap[0] * u_a / 3, ap[1] * u_b / 3, ap[2] * u_c / 3]
        want = np.array(raw) / sum(raw)
        np.testing.assert_allclose(p, want, atol=1e-9, rtol=0)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(7)
        data = make_dataset(x=rng.normal(0, 1, 20), y=rng.normal(0, 1, 20))
        truth = data.replace_values(x=data.x + rng.normal(0, 0.3, (20, 1)))
        scenario = IntruderScenario(ap_columns=("x",), u_columns=("y",), mc_draws=30, seed=5)
        for tid in ("r0", "r7", "r19"):
            p = match_probabilities(data, truth, tid, scenario)
            assert abs(p.sum() - 1.0) <= 1e-9
            assert (p >= 0).all()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        x, y = rng.normal(0, 1, 10), rng.normal(0, 1, 10)
        data = make_dataset(x=x, y=y)
        perm = rng.permutation(10)
        permuted = SpatialDataset(
            ids=tuple(data.ids[i] for i in perm),
            locs=data.locs[perm], x=data.x[perm], y=data.y[perm], x_names=("x",),
        )
        scenario = IntruderScenario(ap_columns=("x", "y"))
        p = match_probabilities(data, data, "r3", scenario)
        q = match_probabilities(permuted, permuted, "r3", scenario)
        np.testing.assert_allclose(q, p[perm], rtol=0, atol=1e-12)

    def test_scenario_columns_must_cover_release(self):
        data = make_dataset(x=[1.0, 2.0], y=[1.0, 2.0])
        with pytest.raises(ValueError, match="cover"):
            match_probabilities(data, data, "r0", IntruderScenario(ap_columns=("x",)))

    def test_disjoint_columns_required(self):
        with pytest.raises(ValueError, match="disjoint"):
            IntruderScenario(ap_columns=("x",), u_columns=("x",))


class TestExpectedCorrectRate:
    def test_identity_masking_distinct_records_rate_one(self):
        rng = np.random.default_rng(9)
        data = make_dataset(x=rng.permutation(20).astype(float),
                            y=rng.permutation(20).astype(float) + 100)
        scenario = IntruderScenario(ap_columns=("x", "y"))
        assert expected_correct_rate(data, data, scenario) == 1.0

    def test_identical_records_pure_chance(self):
        n = 5
        data = make_dataset(x=np.full(n, 1.0), y=np.full(n, 2.0))
        scenario = IntruderScenario(ap_columns=("x", "y"))
        assert expected_correct_rate(data, data, scenario) == pytest.approx(1.0 / n, rel=1e-12)

    def test_rate_bounds_and_determinism(self):
        rng = np.random.default_rng(10)
        data = make_dataset(x=rng.normal(0, 1, 30), y=rng.normal(0, 1, 30))
        truth = data.replace_values(y=data.y + rng.normal(0, 0.5, 30))
        scenario = IntruderScenario(ap_columns=("x",), u_columns=("y",), mc_draws=40, seed=3)
        r1 = risk_report(data, truth, scenario)
        r2 = risk_report(data, truth, scenario)
        assert 0.0 <= r1.expected_correct_rate <= 1.0
        assert r1.expected_correct_rate == r2.expected_correct_rate
        for t1, t2 in zip(r1.targets, r2.targets):
            np.testing.assert_array_equal(t1.probabilities, t2.probabilities)

    def test_ties_counted_fractionally(self):
        # two pairs of duplicated records: each target ties its duplicate
        data = make_dataset(x=[1.0, 1.0, 5.0, 5.0], y=[2.0, 2.0, 7.0, 7.0])
        scenario = IntruderScenario(ap_columns=("x", "y"))
        report = risk_report(data, data, scenario)
        assert all(t.m == 2 for t in report.targets)
        assert report.expected_correct_rate == pytest.approx(0.5, rel=1e-12)

    def test_conservatism_note_present(self):
        data = make_dataset(x=[1.0, 2.0], y=[3.0, 4.0])
        report = risk_report(data, data, IntruderScenario(ap_columns=("x", "y")))
        assert "upper bound" in report.note

    def test_target_subset(self):
        rng = np.random.default_rng(11)
        data = make_dataset(x=rng.normal(0, 1, 10), y=rng.normal(0, 1, 10))
        scenario = IntruderScenario(ap_columns=("x", "y"), target_ids=("r1", "r4"))
        report = risk_report(data, data, scenario)
        assert [t.target_id for t in report.targets] == ["r1", "r4"]

    def test_truth_must_cover_released_ids(self):
        data = make_dataset(x=[1.0, 2.0], y=[3.0, 4.0])
        truth = make_dataset(x=[1.0], y=[3.0], ids=("zzz",))
        with pytest.raises(ValueError, match="lacks released record ids"):
            expected_correct_rate(data, truth, IntruderScenario(ap_columns=("x", "y")))


class TestMaskedRiskOrdering:
    def test_stronger_masking_not_more_disclosive(self):
        # informed-kernel release should be easier to match than heavily
        # euclidean-smoothed release on the radial exposure field
        from smoothmask.kernels import EuclideanKernel, RingKernel
        from smoothmask.masking import mask_dataset
        from smoothmask.sim import RadialExposure, sample_locations, simulate_outcomes

        locs = sample_locations(150, seed=21)
        x = RadialExposure().values(locs)
        y = simulate_outcomes(x, -25.0, 4.0, seed=22)
        truth = SpatialDataset(ids=tuple(f"p{i}" for i in range(150)), locs=locs,
                               x=x[:, None], y=y, x_names=("x",))
        scenario = IntruderScenario(ap_columns=("x",), u_columns=("y",), mc_draws=60, seed=9)
        for lam in (0.05, 0.3):
            ring = mask_dataset(truth, RingKernel(), lam)
            euc = mask_dataset(truth, EuclideanKernel(), lam)
            r_ring = expected_correct_rate(ring, truth, scenario)
            r_euc = expected_correct_rate(euc, truth, scenario)
            assert 0.0 <= r_euc <= r_ring <= 1.0
