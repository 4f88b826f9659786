import math

import numpy as np
import pytest

from phenoloop.automl import (
    ALL_FAMILIES,
    BudgetError,
    SearchSpace,
    TrainedClassifier,
    TrialConfig,
    cv_score,
    fit_family,
    fit_pipeline,
    load_model,
    run_search,
    sample_config,
    save_model,
)
from phenoloop.corpus import StructuredFeatureCatalog
from phenoloop.features import build_matrix
from phenoloop.ontology import default_matcher
from phenoloop.synth import builtin_profile, generate_corpus


@pytest.fixture(scope="module")
def small_dataset():
    corpus, gt = generate_corpus(builtin_profile("Cancer Cachexia"), 140, 0.25, seed=31)
    matrix = build_matrix(corpus, default_matcher(), StructuredFeatureCatalog.default())
    labels = np.array([gt.true_label(a) for a in matrix.admission_ids], dtype=int)
    return matrix, labels


def lr_space(**overrides):
    base = dict(
        families=("logistic_regression",),
        feature_counts=(16, None),
        max_resource=9,
        eta=3,
        budget_seconds=300.0,
        seed=5,
        cv_folds=3,
    )
    base.update(overrides)
    return SearchSpace(**base)


class TestConfigSampling:
    def test_sampled_configs_validate(self):
        import random

        rng = random.Random(0)
        space = SearchSpace()
        for _ in range(200):
            config = sample_config(rng, space)
            assert config.family in ALL_FAMILIES
            assert 0 < config.resource <= 1

    def test_out_of_range_hyperparameter_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            TrialConfig("logistic_regression", {"lam": 100.0}, None)

    def test_bad_resource_rejected(self):
        with pytest.raises(ValueError, match="resource"):
            TrialConfig("logistic_regression", {"lam": 0.1}, None, resource=0.0)


class TestFitFamily:
    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_partial_resource_determinism(self, family, small_dataset):
        matrix, labels = small_dataset
        from phenoloop.features import apply_imputer, fit_imputer

        completed = apply_imputer(fit_imputer(matrix), matrix)
        hp = {
            "logistic_regression": {"lam": 0.01},
            "linear_svm": {"lam": 0.01},
            "random_forest": {"n_trees": 30, "depth": 8},
            "gradient_boosting": {"n_rounds": 30, "depth": 3, "shrinkage": 0.1},
            "mlp": {"width": 16, "layers": 1, "lr": 0.01},
        }[family]
        a = fit_family(family, completed.values, labels, hp, resource=0.5, seed=3)
        b = fit_family(family, completed.values, labels, hp, resource=0.5, seed=3)
        assert np.array_equal(
            a.predict_proba(completed.values), b.predict_proba(completed.values)
        )

    def test_resource_scales_tree_count(self, small_dataset):
        matrix, labels = small_dataset
        from phenoloop.features import apply_imputer, fit_imputer

        completed = apply_imputer(fit_imputer(matrix), matrix)
        model = fit_family(
            "random_forest",
            completed.values,
            labels,
            {"n_trees": 90, "depth": 8},
            resource=1 / 9,
            seed=0,
        )
        assert len(model.trees) == 10


class _LabelOracle:
    """Fake fitted pipeline whose scores equal (or invert, or flatten) the
    true labels of whatever rows it is asked about."""

    def __init__(self, label_by_id, mode="perfect"):
        self.label_by_id = label_by_id
        self.mode = mode

    def predict_matrix(self, matrix):
        truth = np.array([self.label_by_id[a] for a in matrix.admission_ids], dtype=float)
        if self.mode == "perfect":
            return truth
        return np.full(len(truth), 0.5)


class TestCvScore:
    def test_perfect_scorer_scores_one(self, small_dataset):
        matrix, labels = small_dataset
        by_id = dict(zip(matrix.admission_ids, labels))
        config = TrialConfig("logistic_regression", {"lam": 0.1}, None)
        score = cv_score(
            config, matrix, labels, folds=5, seed=0,
            fit_fn=lambda m, y, c, s: _LabelOracle(by_id, "perfect"),
        )
        assert score == 1.0

    def test_constant_scorer_scores_half(self, small_dataset):
        matrix, labels = small_dataset
        by_id = dict(zip(matrix.admission_ids, labels))
        config = TrialConfig("logistic_regression", {"lam": 0.1}, None)
        score = cv_score(
            config, matrix, labels, folds=5, seed=0,
            fit_fn=lambda m, y, c, s: _LabelOracle(by_id, "constant"),
        )
        assert score == 0.5

    def test_fold_reduction_warns(self, small_dataset):
        matrix, labels = small_dataset
        few = labels.copy()
        few[:] = 0
        pos = np.where(np.array(labels) == 1)[0][:3]
        few[pos] = 1
        sub_ids = list(np.array(matrix.admission_ids)[: max(40, pos.max() + 1)])
        sub = matrix.restrict_rows(sub_ids)
        sub_labels = few[: len(sub_ids)]
        if sub_labels.sum() < 2:
            pytest.skip("fixture did not land enough positives")
        config = TrialConfig("logistic_regression", {"lam": 0.1}, 16)
        with pytest.warns(UserWarning, match="reducing folds"):
            cv_score(config, sub, sub_labels, folds=5, seed=0)

    def test_lr_reference_score_frozen(self, small_dataset):
        # Reference value produced by this implementation at the pinned seed,
        # then frozen; guards against silent behavioral drift.
        matrix, labels = small_dataset
        config = TrialConfig("logistic_regression", {"lam": 0.01}, None)
        score = cv_score(config, matrix, labels, folds=5, seed=0)
        assert score == pytest.approx(LR_REFERENCE_SCORE, abs=0.05)


# Frozen from the first recorded run of this exact configuration.
LR_REFERENCE_SCORE = 1.0


class TestRunSearch:
    def test_bracket_recurrence_eta3_r9(self, small_dataset):
        matrix, labels = small_dataset
        result = run_search(lr_space(), matrix, labels)
        assert result.bracket_sizes == [9, 5, 3]
        # derive the recurrence independently
        s_max = int(math.floor(math.log(9, 3)))
        derived = [math.ceil((s_max + 1) / (s + 1) * 3**s) for s in range(s_max, -1, -1)]
        assert result.bracket_sizes == derived
        # first rung of each bracket runs at eta^-s
        first_resources = {}
        for rec in result.history:
            first_resources.setdefault(rec.bracket, rec.resource)
        assert first_resources == {2: pytest.approx(1 / 9), 1: pytest.approx(1 / 3), 0: 1.0}

    def test_budget_accounting_invariant(self, small_dataset):
        matrix, labels = small_dataset
        result = run_search(lr_space(), matrix, labels)
        s_max = 2
        by_bracket = {}
        for rec in result.history:
            by_bracket.setdefault(rec.bracket, []).append(rec.resource)
        for bracket, resources in by_bracket.items():
            assert sum(resources) <= (s_max + 1) * 9 + 1e-9

    def test_rung_survivor_counts(self, small_dataset):
        matrix, labels = small_dataset
        result = run_search(lr_space(), matrix, labels)
        rungs = {}
        for rec in result.history:
            rungs.setdefault((rec.bracket, round(rec.resource, 6)), 0)
            rungs[(rec.bracket, round(rec.resource, 6))] += 1
        assert rungs[(2, round(1 / 9, 6))] == 9
        assert rungs[(2, round(1 / 3, 6))] == 3
        assert rungs[(2, 1.0)] == 1
        assert rungs[(1, round(1 / 3, 6))] == 5
        assert rungs[(1, 1.0)] == 2
        assert rungs[(0, 1.0)] == 3

    def test_same_seed_identical_history(self, small_dataset):
        matrix, labels = small_dataset
        a = run_search(lr_space(), matrix, labels)
        b = run_search(lr_space(), matrix, labels)
        assert [r.key() for r in a.history] == [r.key() for r in b.history]

    def test_parallel_matches_serial(self, small_dataset):
        matrix, labels = small_dataset
        serial = run_search(lr_space(n_jobs=1), matrix, labels)
        parallel = run_search(lr_space(n_jobs=4), matrix, labels)
        assert [r.key() for r in serial.history] == [r.key() for r in parallel.history]

    def test_degenerate_single_point_space(self, small_dataset):
        matrix, labels = small_dataset
        space = lr_space(max_resource=1, feature_counts=(16,))
        result = run_search(space, matrix, labels)
        assert result.best_config.family == "logistic_regression"
        assert result.best_config.k == 16
        assert result.best_config.resource == 1.0

    def test_best_was_never_eliminated(self, small_dataset):
        matrix, labels = small_dataset
        result = run_search(lr_space(), matrix, labels)
        full = [r for r in result.history if r.resource >= 1.0]
        assert result.best_score == max(r.score for r in full)
        matching = [
            r
            for r in full
            if r.config.family == result.best_config.family
            and r.config.hyperparameters == result.best_config.hyperparameters
            and r.config.k == result.best_config.k
        ]
        assert matching

    def test_zero_budget_raises_budget_error(self, small_dataset):
        matrix, labels = small_dataset
        with pytest.raises(BudgetError):
            run_search(lr_space(budget_seconds=0.0), matrix, labels)

    def test_all_families_smoke(self, small_dataset):
        matrix, labels = small_dataset
        space = SearchSpace(
            families=ALL_FAMILIES,
            feature_counts=(16,),
            max_resource=3,
            eta=3,
            budget_seconds=300.0,
            seed=2,
            cv_folds=3,
        )
        result = run_search(space, matrix, labels)
        assert 0.5 <= result.best_score <= 1.0
        probs = result.model.predict_matrix(matrix)
        assert ((probs >= 0) & (probs <= 1)).all()


class TestModelSerialization:
    def test_round_trip(self, small_dataset, tmp_path):
        matrix, labels = small_dataset
        config = TrialConfig("gradient_boosting", {"n_rounds": 25, "depth": 2, "shrinkage": 0.1}, 16)
        trained = fit_pipeline(matrix, labels, config, seed=4)
        path = tmp_path / "model.json"
        save_model(path, trained)
        restored = load_model(path)
        assert isinstance(restored, TrainedClassifier)
        assert restored.mask.active == trained.mask.active
        assert np.allclose(restored.predict_matrix(matrix), trained.predict_matrix(matrix))

    def test_monotone_transform_keeps_cv_auc(self, small_dataset):
        # AUC objective is invariant under strictly increasing score transforms
        matrix, labels = small_dataset
        config = TrialConfig("logistic_regression", {"lam": 0.01}, 16)
        trained = fit_pipeline(matrix, labels, config, seed=0)

        class Wrapped:
            def predict_matrix(self, m):
                return np.exp(2.0 * trained.predict_matrix(m))

        from phenoloop.metrics import auc_roc

        raw = auc_roc(labels, trained.predict_matrix(matrix))
        wrapped = auc_roc(labels, Wrapped().predict_matrix(matrix))
        assert wrapped == pytest.approx(raw, abs=1e-12)
