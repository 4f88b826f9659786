import numpy as np
import pytest

from phenoloop.shapley import (
    Explanation,
    ShapleyError,
    exact_shapley,
    export_beeswarm,
    export_waterfall,
    global_importance,
    kernel_shap,
)


def linear_scorer(weights):
    w = np.asarray(weights, dtype=float)
    return lambda X: np.asarray(X, dtype=float) @ w


def random_tree_scorer(d, seed):
    """Axis-threshold stump ensemble with random weights."""
    rng = np.random.default_rng(seed)
    feats = rng.integers(0, d, size=4)
    thresholds = rng.normal(size=4)
    weights = rng.normal(size=4)

    def scorer(X):
        X = np.asarray(X, dtype=float)
        out = np.zeros(len(X))
        for f, t, w in zip(feats, thresholds, weights):
            out += w * (X[:, f] > t)
        return out

    return scorer


def masked_scorer(d, used, seed):
    """Linear scorer that provably ignores every feature outside ``used``."""
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    w[list(used)] = rng.normal(size=len(used)) + 0.5
    return linear_scorer(w), w


class TestExactShapley:
    def test_linear_two_features(self):
        ex = exact_shapley(linear_scorer([2.0, 3.0]), [1.0, 1.0], [[0.0, 0.0]])
        assert ex.base_value == pytest.approx(0.0)
        assert ex.phi["x0"] == pytest.approx(2.0)
        assert ex.phi["x1"] == pytest.approx(3.0)

    def test_constant_scorer(self):
        ex = exact_shapley(lambda X: np.full(len(X), 7.0), [1.0, 2.0, 3.0], [[0, 0, 0]])
        assert all(abs(v) < 1e-12 for v in ex.phi.values())
        assert ex.base_value == pytest.approx(7.0)

    def test_symmetry(self):
        scorer = lambda X: np.asarray(X)[:, 0] * np.asarray(X)[:, 1] + np.asarray(X).sum(axis=1)
        ex = exact_shapley(scorer, [1.5, 1.5], [[0.2, 0.2], [0.4, 0.4]])
        assert ex.phi["x0"] == pytest.approx(ex.phi["x1"], abs=1e-12)

    def test_size_limit(self):
        with pytest.raises(ShapleyError, match="kernel_shap"):
            exact_shapley(linear_scorer(np.ones(21)), np.ones(21), [np.zeros(21)])

    def test_local_accuracy(self):
        scorer = random_tree_scorer(4, seed=3)
        rng = np.random.default_rng(1)
        row = rng.normal(size=4)
        bg = rng.normal(size=(6, 4))
        ex = exact_shapley(scorer, row, bg)
        assert ex.base_value + sum(ex.phi.values()) == pytest.approx(
            float(scorer(row[None, :])[0]), abs=1e-9
        )


class TestKernelShap:
    def test_full_enumeration_matches_exact(self):
        rng = np.random.default_rng(0)
        for d in (2, 3, 5, 8):
            scorer = random_tree_scorer(d, seed=d)
            row = rng.normal(size=d)
            bg = rng.normal(size=(5, d))
            exact = exact_shapley(scorer, row, bg)
            kernel = kernel_shap(scorer, row, bg, n_coalitions=2**d, seed=1)
            for name in exact.phi:
                assert kernel.phi[name] == pytest.approx(exact.phi[name], abs=1e-6)

    def test_constant_scorer(self):
        ex = kernel_shap(lambda X: np.full(len(X), 2.5), [1.0, 2.0], [[0, 0]], n_coalitions=4)
        assert all(abs(v) < 1e-9 for v in ex.phi.values())

    def test_local_accuracy_imposed_exactly(self):
        rng = np.random.default_rng(4)
        d = 10
        scorer = linear_scorer(rng.normal(size=d))
        row = rng.normal(size=d)
        bg = rng.normal(size=(8, d))
        ex = kernel_shap(scorer, row, bg, n_coalitions=2**d, seed=0)
        assert ex.base_value + sum(ex.phi.values()) == pytest.approx(
            float(scorer(row[None, :])[0]), abs=1e-6
        )

    def test_sampled_mode_close_to_exact(self):
        rng = np.random.default_rng(9)
        d = 9
        scorer = linear_scorer(rng.normal(size=d))
        row = rng.normal(size=d)
        bg = rng.normal(size=(4, d))
        exact = exact_shapley(scorer, row, bg)
        approx = kernel_shap(scorer, row, bg, n_coalitions=300, seed=2)
        for name in exact.phi:
            assert approx.phi[name] == pytest.approx(exact.phi[name], abs=0.05)

    def test_single_feature(self):
        scorer = linear_scorer([4.0])
        ex = kernel_shap(scorer, [2.0], [[0.5]], n_coalitions=3)
        assert ex.phi["x0"] == pytest.approx(6.0)  # 8.0 - 2.0

    def test_too_few_coalitions(self):
        with pytest.raises(ShapleyError, match="n_coalitions"):
            kernel_shap(linear_scorer([1, 1, 1]), [1, 1, 1], [[0, 0, 0]], n_coalitions=3)

    def test_dummy_feature_gets_zero(self):
        rng = np.random.default_rng(5)
        d = 6
        scorer, w = masked_scorer(d, used=[0, 2], seed=5)
        row = rng.normal(size=d)
        bg = rng.normal(size=(5, d))
        ex = exact_shapley(scorer, row, bg)
        kx = kernel_shap(scorer, row, bg, n_coalitions=2**d, seed=0)
        for j in range(d):
            if w[j] == 0:
                assert abs(ex.phi[f"x{j}"]) < 1e-9
                assert abs(kx.phi[f"x{j}"]) < 1e-6

    def test_positive_scaling_scales_phi(self):
        rng = np.random.default_rng(6)
        d = 5
        scorer = random_tree_scorer(d, seed=11)
        scaled = lambda X: 3.0 * scorer(X)
        row = rng.normal(size=d)
        bg = rng.normal(size=(5, d))
        a = exact_shapley(scorer, row, bg)
        b = exact_shapley(scaled, row, bg)
        for name in a.phi:
            assert b.phi[name] == pytest.approx(3.0 * a.phi[name], abs=1e-9)


def make_explanation(phi, admission_id=None, base=0.0):
    names = tuple(sorted(phi))
    return Explanation(
        feature_names=names,
        base_value=base,
        phi=dict(phi),
        model_output=base + sum(phi.values()),
        admission_id=admission_id,
    )


class TestGlobalImportance:
    def test_single_explanation_ranking(self):
        gi = global_importance([make_explanation({"a": 0.4, "b": -0.1})])
        assert gi.top(2) == ["a", "b"]
        assert gi.ranking[0][2] == "positive"

    def test_mixed_direction(self):
        gi = global_importance(
            [make_explanation({"a": 0.4, "b": 0.0}), make_explanation({"a": -0.4, "b": 0.0})]
        )
        entry = dict((r[0], r) for r in gi.ranking)["a"]
        assert entry[1] == pytest.approx(0.4)
        assert entry[2] == "mixed"

    def test_lexicographic_tie_break(self):
        gi = global_importance([make_explanation({"b": 0.2, "a": 0.2, "c": 0.2})])
        assert gi.top(3) == ["a", "b", "c"]

    def test_mixed_masks_error(self):
        with pytest.raises(ShapleyError, match="mask"):
            global_importance([make_explanation({"a": 1.0}), make_explanation({"b": 1.0})])

    def test_weighted_union_additivity(self):
        # mean |phi| over a union equals the size-weighted mean of the parts
        part1 = [make_explanation({"a": 0.6}), make_explanation({"a": 0.2})]
        part2 = [make_explanation({"a": 0.1})]
        union = global_importance(part1 + part2).ranking[0][1]
        g1 = global_importance(part1).ranking[0][1]
        g2 = global_importance(part2).ranking[0][1]
        assert union == pytest.approx((2 * g1 + 1 * g2) / 3)


class TestExports:
    def test_waterfall_telescopes_to_model_output(self):
        ex = make_explanation({"a": 0.4, "b": -0.1, "c": 0.05}, base=0.3)
        rows = export_waterfall(ex)
        assert [r["feature"] for r in rows] == ["a", "b", "c"]
        assert rows[-1]["cumulative"] == pytest.approx(ex.model_output)

    def test_beeswarm_rows(self):
        from tests.test_features import matrix_of

        m = matrix_of([[1.0, 0.0]], pheno=["a", "b"])
        ex = make_explanation({"a": 0.4, "b": -0.1}, admission_id="A0")
        rows = export_beeswarm([ex], m)
        assert len(rows) == 2
        lookup = {r["feature"]: r for r in rows}
        assert lookup["a"]["value"] == 1.0
        assert lookup["a"]["phi"] == 0.4
