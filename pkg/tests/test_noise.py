import math
from fractions import Fraction

import numpy as np
import pytest

from canopy_metrics.geometry import ca_to_cd
from canopy_metrics.matching import CostParams
from canopy_metrics.noise import (
    LabelNoiseModel,
    NoiseGraph,
    PosteriorModel,
    PredictionNoiseModel,
    label_quantity_pmf,
    likelihood_matrix,
    materialize_split,
    perturb_predictions,
    posterior_ca,
    posterior_entropy,
    precision_recall_vs_real,
    prediction_count_pmf,
    prior_from_crown_diameters,
    run_matching_sweep,
    simulate_label_graph,
    synthetic_labels,
)


def _label_support(q_max=50):
    return (
        [Fraction(1)]
        + [Fraction(k) for k in range(2, q_max + 1)]
        + [Fraction(1, k) for k in range(2, q_max + 1)]
    )


class TestLabelQuantityPmf:
    @pytest.mark.parametrize("p1", [0.2, 0.4, 0.7])
    @pytest.mark.parametrize("rate", [0.1, 0.25, 1.0])
    def test_sums_to_one(self, p1, rate):
        model = LabelNoiseModel(p1_label=p1, poisson_rate=rate)
        total = sum(label_quantity_pmf(model, q) for q in _label_support())
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_merge_split_symmetry_at_zero_bias(self):
        model = LabelNoiseModel(p1_label=0.4, poisson_rate=0.25)
        assert label_quantity_pmf(model, 2) == label_quantity_pmf(model, Fraction(1, 2))
        assert label_quantity_pmf(model, 5) == label_quantity_pmf(model, Fraction(1, 5))

    def test_positive_bias_favors_splitting(self):
        model = LabelNoiseModel(p1_label=0.4, poisson_rate=0.25, bias=0.5)
        split_mass = sum(
            label_quantity_pmf(model, Fraction(1, k)) for k in range(2, 51)
        )
        merge_mass = sum(label_quantity_pmf(model, k) for k in range(2, 51))
        assert split_mass > merge_mass
        assert split_mass / merge_mass == pytest.approx(1.5 / 0.5, abs=1e-6)

    def test_negative_bias_favors_merging(self):
        model = LabelNoiseModel(p1_label=0.4, poisson_rate=0.25, bias=-0.5)
        split_mass = sum(
            label_quantity_pmf(model, Fraction(1, k)) for k in range(2, 51)
        )
        merge_mass = sum(label_quantity_pmf(model, k) for k in range(2, 51))
        assert merge_mass > split_mass

    def test_bias_sum_invariant(self):
        for bias in (-0.6, 0.0, 0.6):
            model = LabelNoiseModel(p1_label=0.4, poisson_rate=0.25, bias=bias)
            total = sum(label_quantity_pmf(model, q) for q in _label_support())
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_rejects_bad_quantities(self):
        model = LabelNoiseModel(p1_label=0.4, poisson_rate=0.25)
        with pytest.raises(ValueError):
            label_quantity_pmf(model, 0.4)  # 2/5: neither integer nor 1/n
        with pytest.raises(ValueError):
            label_quantity_pmf(model, 0)
        with pytest.raises(ValueError):
            label_quantity_pmf(model, -2)

    def test_quantity_coercion(self):
        model = LabelNoiseModel(p1_label=0.4, poisson_rate=0.25)
        assert label_quantity_pmf(model, 0.5) == label_quantity_pmf(model, Fraction(1, 2))
        assert label_quantity_pmf(model, 1 / 3) == label_quantity_pmf(
            model, Fraction(1, 3)
        )

    def test_model_validation(self):
        with pytest.raises(ValueError):
            LabelNoiseModel(p1_label=0.0, poisson_rate=0.25)
        with pytest.raises(ValueError):
            LabelNoiseModel(p1_label=0.5, poisson_rate=0.0)
        with pytest.raises(ValueError):
            LabelNoiseModel(p1_label=0.5, poisson_rate=0.25, bias=1.0)


class TestPredictionCountPmf:
    @pytest.mark.parametrize("q", [1, 2, 3, Fraction(1, 2)])
    def test_sums_to_one(self, q):
        model = PredictionNoiseModel(p1_pred=0.6, poisson_rate=0.25)
        support = _label_support()
        total = sum(prediction_count_pmf(model, q, n) for n in support)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_bigger_labels_split_more(self):
        model = PredictionNoiseModel(p1_pred=0.6, poisson_rate=0.25)
        assert prediction_count_pmf(model, 3, 2) > prediction_count_pmf(model, 1, 2)
        assert prediction_count_pmf(model, 3, Fraction(1, 2)) < prediction_count_pmf(
            model, 1, Fraction(1, 2)
        )

    def test_split_to_merge_ratio_is_q(self):
        model = PredictionNoiseModel(p1_pred=0.6, poisson_rate=0.25)
        for q in (1, 2, 5):
            split = sum(prediction_count_pmf(model, q, k) for k in range(2, 51))
            merge = sum(
                prediction_count_pmf(model, q, Fraction(1, k)) for k in range(2, 51)
            )
            assert split / merge == pytest.approx(q, abs=1e-6)


class TestSyntheticLabels:
    def test_shape_and_ranges(self):
        labels = synthetic_labels(500, seed=0)
        assert len(labels) == 500
        cds = [ca_to_cd(t.crown_area) for t in labels]
        assert min(cds) >= 2.0
        assert max(cds) <= 20.0
        assert len({t.patch_id for t in labels}) == 1

    def test_deterministic(self):
        a = synthetic_labels(50, seed=9)
        b = synthetic_labels(50, seed=9)
        assert a == b
        c = synthetic_labels(50, seed=10)
        assert a != c


class TestPerturbPredictions:
    def test_counts(self):
        labels = synthetic_labels(100, seed=1)
        assert len(perturb_predictions(labels, 0.5, 0)) == 50
        assert len(perturb_predictions(labels, 1.0, 0)) == 100
        assert len(perturb_predictions(labels, 1.5, 0)) == 150

    def test_area_scaling_and_floor(self):
        labels = synthetic_labels(100, seed=1)
        preds = perturb_predictions(labels, 1.75, 0)
        by_patch = {t.crown_area for t in labels}
        for p in preds:
            assert p.crown_area >= 0.01
        # every predicted area is 0.25x one of the label areas (or floored)
        scaled = {max(0.25 * a, 0.01) for a in by_patch}
        for p in preds:
            assert any(math.isclose(p.crown_area, s, rel_tol=1e-9) for s in scaled)

    def test_s_one_keeps_areas(self):
        labels = synthetic_labels(40, seed=2)
        preds = perturb_predictions(labels, 1.0, 3)
        label_areas = sorted(t.crown_area for t in labels)
        pred_areas = sorted(t.crown_area for t in preds)
        assert label_areas == pytest.approx(pred_areas)

    def test_jitter_scale(self):
        # center offsets should be around CD/2 per axis, not meters off
        labels = [t for t in synthetic_labels(2000, seed=3)]
        preds = perturb_predictions(labels, 1.0, 4)
        # same index order cannot be assumed; compare against source stats
        offs = []
        rng = np.random.default_rng(4)
        idx = rng.choice(2000, size=2000, replace=False)
        for i, p in zip(idx, preds):
            t = labels[int(i)]
            offs.append(
                math.hypot(p.center[0] - t.center[0], p.center[1] - t.center[1])
                / (0.5 * t.crown_diameter)
            )
        # normalized radial error of a 2-D gaussian: mean sqrt(pi/2)
        assert np.mean(offs) == pytest.approx(math.sqrt(math.pi / 2), rel=0.1)

    def test_invalid_s(self):
        labels = synthetic_labels(10, seed=0)
        with pytest.raises(ValueError):
            perturb_predictions(labels, 0.0, 0)
        with pytest.raises(ValueError):
            perturb_predictions(labels, 2.5, 0)


class TestMatchingSweep:
    def test_rows_and_keys(self):
        labels = synthetic_labels(120, seed=5)
        rows = run_matching_sweep(
            labels, [0.5, 1.0, 1.5], CostParams(gamma=1.0, lambda_size=0.1), 77
        )
        assert [r["s"] for r in rows] == [0.5, 1.0, 1.5]
        assert set(rows[0]) == {
            "s",
            "n_preds",
            "f1_one_to_one",
            "f1_many_to_one",
            "f1_one_to_many",
            "bf1",
        }
        assert rows[0]["n_preds"] == 60

    def test_deterministic(self):
        labels = synthetic_labels(80, seed=6)
        p = CostParams(gamma=1.0, lambda_size=0.1)
        assert run_matching_sweep(labels, [0.75], p, 5) == run_matching_sweep(
            labels, [0.75], p, 5
        )


class TestSimulateGraph:
    def test_budget_conserved(self):
        g = simulate_label_graph(
            500,
            LabelNoiseModel(p1_label=0.5, poisson_rate=0.25),
            PredictionNoiseModel(p1_pred=0.6, poisson_rate=0.25),
            42,
        )
        covered = set()
        for reals in g.label_reals:
            covered.update(reals)
        assert covered == set(range(500))
        assert g.n_real == 500
        used_preds = {p for ps in g.label_preds for p in ps}
        assert used_preds == set(range(g.n_preds))

    def test_identity_limit(self):
        g = simulate_label_graph(
            200,
            LabelNoiseModel(p1_label=1.0, poisson_rate=0.25),
            PredictionNoiseModel(p1_pred=1.0, poisson_rate=0.25),
            0,
        )
        assert len(g.label_q) == 200
        assert g.n_preds == 200
        for s in ("one_to_one", "many_to_one", "one_to_many", "many_to_many"):
            assert precision_recall_vs_real(g, s) == (1.0, 1.0)

    def test_deterministic(self):
        args = (
            300,
            LabelNoiseModel(p1_label=0.5, poisson_rate=0.25),
            PredictionNoiseModel(p1_pred=0.6, poisson_rate=0.25),
        )
        assert simulate_label_graph(*args, 7) == simulate_label_graph(*args, 7)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            simulate_label_graph(
                0,
                LabelNoiseModel(p1_label=0.5, poisson_rate=0.25),
                PredictionNoiseModel(p1_pred=0.6, poisson_rate=0.25),
                0,
            )


def _graph(label_q, label_reals, label_preds, n_real, n_preds):
    return NoiseGraph(
        n_real=n_real,
        n_preds=n_preds,
        label_q=tuple(Fraction(q) for q in label_q),
        label_reals=tuple(tuple(r) for r in label_reals),
        label_preds=tuple(tuple(p) for p in label_preds),
    )


class TestPrecisionRecallRules:
    def test_identity_component(self):
        g = _graph([1], [(0,)], [(0,)], 1, 1)
        for s in ("one_to_one", "many_to_one", "one_to_many", "many_to_many"):
            assert precision_recall_vs_real(g, s) == (1.0, 1.0)

    def test_label_split_component(self):
        # one real tree annotated as two labels, each with its own pred
        g = _graph([Fraction(1, 2)] * 2, [(0,), (0,)], [(0,), (1,)], 1, 2)
        assert precision_recall_vs_real(g, "one_to_one") == (0.5, 1.0)
        assert precision_recall_vs_real(g, "many_to_one") == (1.0, 1.0)
        assert precision_recall_vs_real(g, "one_to_many") == (0.5, 1.0)
        assert precision_recall_vs_real(g, "many_to_many") == (1.0, 1.0)

    def test_label_merge_component(self):
        # two real trees annotated as one label with one pred; schemes that
        # let a prediction stand for many labels recover the whole component
        g = _graph([2], [(0, 1)], [(0,)], 2, 1)
        assert precision_recall_vs_real(g, "one_to_one") == (1.0, 0.5)
        assert precision_recall_vs_real(g, "many_to_one") == (1.0, 0.5)
        assert precision_recall_vs_real(g, "one_to_many") == (1.0, 1.0)
        assert precision_recall_vs_real(g, "many_to_many") == (1.0, 1.0)

    def test_pred_merge_component(self):
        # two identity labels sharing one merged prediction
        g = _graph([1, 1], [(0,), (1,)], [(0,), (0,)], 2, 1)
        assert precision_recall_vs_real(g, "one_to_one") == (1.0, 0.5)
        assert precision_recall_vs_real(g, "one_to_many") == (1.0, 1.0)

    def test_mixed_pool(self):
        # identity + split in one graph: averages of the component scores
        g = _graph(
            [1, Fraction(1, 2), Fraction(1, 2)],
            [(0,), (1,), (1,)],
            [(0,), (1,), (2,)],
            2,
            3,
        )
        p, r = precision_recall_vs_real(g, "one_to_one")
        assert p == pytest.approx(2.0 / 3.0)  # (1 + 1) positives over 3 preds
        assert r == pytest.approx(1.0)

    def test_unknown_scheme(self):
        g = _graph([1], [(0,)], [(0,)], 1, 1)
        with pytest.raises(ValueError):
            precision_recall_vs_real(g, "pairwise")


class TestMaterializeSplit:
    def test_area_conserved(self, tree):
        t = tree(10.0, 10.0, 60.0)
        parts = materialize_split(t, 3)
        assert len(parts) == 3
        assert sum(p.crown_area for p in parts) == pytest.approx(60.0)
        for p in parts:
            d = math.hypot(p.center[0] - 10.0, p.center[1] - 10.0)
            assert d <= t.crown_diameter

    def test_rejects_degenerate_split(self, tree):
        t = tree(1.0, 2.0, 30.0)
        with pytest.raises(ValueError):
            materialize_split(t, 1)


class TestPosterior:
    def test_likelihood_rows_normalized(self):
        grid = 1.0 * np.arange(1, 41)
        m = PosteriorModel(grid=grid, prior=np.full(40, 1 / 40))
        L = likelihood_matrix(m)
        assert L.shape == (40, 40)
        assert np.abs(L.sum(axis=1) - 1.0).max() < 1e-12

    def test_merge_and_split_entries(self):
        grid = 1.0 * np.arange(1, 13)
        m = PosteriorModel(grid=grid, prior=np.full(12, 1 / 12))
        L = likelihood_matrix(m)
        # real CA 3 can be labeled 3 (identity), 6 (2 merged), 9, 12, or 1
        # (a 3-way split); labeled CA 5 is reachable only as identity
        i = 2  # real 3
        assert L[i, 2] > 0
        assert L[i, 5] > 0 and L[i, 8] > 0 and L[i, 11] > 0
        assert L[i, 0] > 0  # label 1 = real 3 split into 3
        assert L[i, 4] == 0.0
        assert L[i, 3] == 0.0

    def test_columns_normalize(self):
        grid = 2.5 * np.arange(1, 25)
        prior = np.full(24, 1 / 24)
        post = posterior_ca(PosteriorModel(grid=grid, prior=prior))
        assert np.abs(post.sum(axis=0) - 1.0).max() < 1e-9

    def test_flat_prior_reproduces_likelihood(self):
        grid = 1.0 * np.arange(1, 31)
        m = PosteriorModel(grid=grid, prior=np.full(30, 1 / 30))
        L = likelihood_matrix(m)
        post = posterior_ca(m)
        np.testing.assert_allclose(post, L / L.sum(axis=0, keepdims=True), atol=1e-12)

    def test_entropy_interior_minimum_with_unimodal_prior(self):
        grid = 1.0 * np.arange(1, 61)
        rng = np.random.default_rng(1)
        cds = rng.normal(6.0, 1.5, size=4000).clip(0.5)
        prior = prior_from_crown_diameters(cds, grid)
        ent = posterior_entropy(posterior_ca(PosteriorModel(grid=grid, prior=prior)))
        k = int(np.argmin(ent))
        assert 0 < k < ent.size - 1

    def test_literal_split_branch_differs_but_normalizes(self):
        grid = 1.0 * np.arange(1, 21)
        flat = np.full(20, 1 / 20)
        sym = likelihood_matrix(PosteriorModel(grid=grid, prior=flat))
        lit = likelihood_matrix(
            PosteriorModel(grid=grid, prior=flat, literal_split_branch=True)
        )
        assert np.abs(lit.sum(axis=1) - 1.0).max() < 1e-12
        assert not np.allclose(sym, lit)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            PosteriorModel(grid=np.array([1.0, 2.0, 4.0]), prior=np.full(3, 1 / 3))
        with pytest.raises(ValueError):
            PosteriorModel(grid=1.0 * np.arange(1, 11), prior=np.full(9, 1 / 9))

    def test_prior_from_crown_diameters(self):
        grid = 1.0 * np.arange(1, 11)
        # CD 2.0 m -> CA pi ~ 3.14 -> nearest grid cell 3
        prior = prior_from_crown_diameters([2.0, 2.0, 2.0], grid)
        assert prior.sum() == pytest.approx(1.0)
        assert prior[2] == pytest.approx(1.0)

    def test_entropy_of_point_mass_is_zero(self):
        post = np.zeros((4, 2))
        post[1, 0] = 1.0
        post[:, 1] = 0.25
        ent = posterior_entropy(post)
        assert ent[0] == 0.0
        assert ent[1] == pytest.approx(math.log(4.0))
