"""Budgeted AutoML: random configurations over (family, hyperparameters,
feature count) evaluated with stratified cross-validation and scheduled by
successive-halving brackets; the imputer and selector are refit inside every
fold so no statistics leak across the validation split.
"""

from __future__ import annotations

import json
import math
import random
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import classifiers as clf
from .features import FeatureMask, FeatureMatrix, apply_imputer, fit_imputer, select_top_k
from .metrics import auc_roc

__all__ = [
    "BudgetError",
    "SearchSpace",
    "TrialConfig",
    "TrainedClassifier",
    "TrialRecord",
    "SearchResult",
    "fit_family",
    "fit_pipeline",
    "cv_score",
    "run_search",
    "save_model",
    "load_model",
]

ALL_FAMILIES = (
    "logistic_regression",
    "linear_svm",
    "random_forest",
    "gradient_boosting",
    "mlp",
)

# Full-resource training effort for the epoch-scaled families.
LR_MAX_EPOCHS = 200
SVM_MAX_EPOCHS = 60
MLP_MAX_EPOCHS = 100

_HP_RANGES = {
    "logistic_regression": {"lam": (1e-4, 10.0)},
    "linear_svm": {"lam": (1e-4, 10.0)},
    "random_forest": {"n_trees": (20, 200), "depth": (4, 8, 16, None)},
    "gradient_boosting": {
        "n_rounds": (20, 200),
        "depth": (2, 3, 4),
        "shrinkage": (0.01, 0.3),
    },
    "mlp": {"width": (16, 64, 256), "layers": (1, 2), "lr": (1e-4, 1e-1)},
}


class BudgetError(RuntimeError):
    """Wall-clock budget exhausted before any full-resource trial finished."""

    def __init__(self, message: str, history: list["TrialRecord"]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class SearchSpace:
    families: tuple[str, ...] = ALL_FAMILIES
    feature_counts: tuple[int | None, ...] = (16, 64, 256, None)  # None keeps all columns
    max_resource: int = 9
    eta: int = 3
    budget_seconds: float = 120.0
    seed: int = 0
    cv_folds: int = 5
    selection_method: str = "mutual_information"
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if not self.families:
            raise ValueError("families must be non-empty")
        unknown = set(self.families) - set(ALL_FAMILIES)
        if unknown:
            raise ValueError(f"unknown families: {sorted(unknown)}")
        if self.max_resource < 1:
            raise ValueError("max_resource must be >= 1")
        if self.eta < 2:
            raise ValueError("eta must be >= 2")


@dataclass(frozen=True)
class TrialConfig:
    family: str
    hyperparameters: dict
    k: int | None
    resource: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.resource <= 1.0:
            raise ValueError(f"resource must be in (0, 1], got {self.resource}")
        ranges = _HP_RANGES[self.family]
        for name, value in self.hyperparameters.items():
            bound = ranges.get(name)
            if bound is None:
                raise ValueError(f"{self.family}: unknown hyperparameter {name!r}")
            if name in ("depth", "width", "layers"):
                if value not in bound:
                    raise ValueError(f"{self.family}: {name}={value!r} not in {bound}")
            else:
                lo, hi = bound
                if not lo <= value <= hi:
                    raise ValueError(f"{self.family}: {name}={value} outside [{lo}, {hi}]")

    def at_resource(self, r: float) -> "TrialConfig":
        return TrialConfig(self.family, self.hyperparameters, self.k, r)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "hyperparameters": dict(self.hyperparameters),
            "k": self.k,
            "resource": self.resource,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrialConfig":
        return cls(raw["family"], raw["hyperparameters"], raw["k"], raw.get("resource", 1.0))


def sample_config(rng: random.Random, space: SearchSpace) -> TrialConfig:
    family = rng.choice(space.families)
    hp: dict = {}
    if family in ("logistic_regression", "linear_svm"):
        hp["lam"] = _log_uniform(rng, 1e-4, 10.0)
    elif family == "random_forest":
        hp["n_trees"] = rng.randint(20, 200)
        hp["depth"] = rng.choice((4, 8, 16, None))
    elif family == "gradient_boosting":
        hp["n_rounds"] = rng.randint(20, 200)
        hp["depth"] = rng.choice((2, 3, 4))
        hp["shrinkage"] = _log_uniform(rng, 0.01, 0.3)
    elif family == "mlp":
        hp["width"] = rng.choice((16, 64, 256))
        hp["layers"] = rng.choice((1, 2))
        hp["lr"] = _log_uniform(rng, 1e-4, 1e-1)
    k = rng.choice(space.feature_counts)
    return TrialConfig(family, hp, k, 1.0)


def _log_uniform(rng: random.Random, lo: float, hi: float) -> float:
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def fit_family(family: str, X, y, hyperparameters: dict, resource: float, seed: int):
    """Fit one classifier family at partial resource: epoch-trained families
    scale epochs, forests scale tree count, boosting scales rounds."""
    hp = hyperparameters
    if family == "logistic_regression":
        model = clf.LogisticRegressionGD(
            lam=hp["lam"], epochs=math.ceil(resource * LR_MAX_EPOCHS)
        )
    elif family == "linear_svm":
        model = clf.LinearSvm(
            lam=hp["lam"], epochs=math.ceil(resource * SVM_MAX_EPOCHS), seed=seed
        )
    elif family == "random_forest":
        model = clf.RandomForest(
            n_trees=math.ceil(resource * hp["n_trees"]), max_depth=hp["depth"], seed=seed
        )
    elif family == "gradient_boosting":
        model = clf.GradientBoosting(
            n_rounds=math.ceil(resource * hp["n_rounds"]),
            max_depth=hp["depth"],
            shrinkage=hp["shrinkage"],
            seed=seed,
        )
    elif family == "mlp":
        model = clf.Mlp(
            width=hp["width"],
            layers=hp["layers"],
            lr=hp["lr"],
            epochs=math.ceil(resource * MLP_MAX_EPOCHS),
            seed=seed,
        )
    else:
        raise ValueError(f"unknown family {family!r}")
    return model.fit(X, y)


@dataclass
class TrainedClassifier:
    """A complete fitted pipeline: imputation statistics, the active feature
    mask, and the classifier, with the metadata needed to reproduce it."""

    family: str
    model: object
    imputer: object
    mask: FeatureMask
    seed: int
    resource: float
    config: TrialConfig | None = None

    def predict_matrix(self, matrix: FeatureMatrix) -> np.ndarray:
        completed = apply_imputer(self.imputer, matrix)
        sub = completed.restrict_columns(self.mask)
        return np.asarray(self.model.predict_proba(sub.values), dtype=float)

    def prepared_submatrix(self, matrix: FeatureMatrix) -> FeatureMatrix:
        """Imputed, standardized matrix restricted to the active columns (the
        space the classifier and its explanations operate in)."""
        return apply_imputer(self.imputer, matrix).restrict_columns(self.mask)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "family": self.family,
            "seed": self.seed,
            "resource": self.resource,
            "config": self.config.to_dict() if self.config else None,
            "mask": sorted(self.mask.active),
            "imputer": self.imputer.to_dict(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainedClassifier":
        from .features import Imputer

        return cls(
            family=raw["family"],
            model=clf.classifier_from_dict(raw["model"]),
            imputer=Imputer.from_dict(raw["imputer"]),
            mask=FeatureMask(frozenset(raw["mask"])),
            seed=raw["seed"],
            resource=raw["resource"],
            config=TrialConfig.from_dict(raw["config"]) if raw.get("config") else None,
        )


def save_model(path, trained: TrainedClassifier) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trained.to_dict(), fh)


def load_model(path) -> TrainedClassifier:
    with open(path, encoding="utf-8") as fh:
        return TrainedClassifier.from_dict(json.load(fh))


def fit_pipeline(
    matrix: FeatureMatrix,
    y: np.ndarray,
    config: TrialConfig,
    seed: int,
    selection_method: str = "mutual_information",
    base_mask: FeatureMask | None = None,
) -> TrainedClassifier:
    """Fit imputer -> select top-k columns -> fit the family, all on the given
    training rows."""
    work = matrix if base_mask is None else matrix.restrict_columns(base_mask)
    imputer = fit_imputer(work)
    completed = apply_imputer(imputer, work)
    if config.k is not None and config.k < len(completed.column_names):
        mask = select_top_k(completed, y, config.k, selection_method)
    else:
        mask = completed.full_mask()
    sub = completed.restrict_columns(mask)
    model = fit_family(config.family, sub.values, y, config.hyperparameters, config.resource, seed)
    return TrainedClassifier(
        family=config.family,
        model=model,
        imputer=imputer,
        mask=mask,
        seed=seed,
        resource=config.resource,
        config=config,
    )


def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Deterministic stratified fold assignment (round-robin over shuffled
    class members)."""
    rng = random.Random(seed)
    assign = np.empty(len(y), dtype=int)
    for cls_value in (0, 1):
        idx = [i for i in range(len(y)) if int(y[i]) == cls_value]
        rng.shuffle(idx)
        for pos, i in enumerate(idx):
            assign[i] = pos % folds
    return assign


def cv_score(
    config: TrialConfig,
    matrix: FeatureMatrix,
    y,
    folds: int = 5,
    seed: int = 0,
    selection_method: str = "mutual_information",
    base_mask: FeatureMask | None = None,
    model_seed: int | None = None,
    fit_fn=None,
) -> float:
    """Mean validation AUC-ROC over stratified folds; the imputer, selector
    and classifier are refit inside each fold on that fold's training part.
    Fold assignment is governed by ``seed`` (shared across trials) while the
    classifier's own randomness uses ``model_seed``."""
    y = np.asarray(y).astype(int)
    n_min = min(int(y.sum()), int(len(y) - y.sum()))
    if n_min < 2:
        raise clf.FitError("need at least 2 members of each class for cross-validation")
    if n_min < folds:
        warnings.warn(
            f"class with {n_min} members < {folds} folds; reducing folds to {n_min}",
            stacklevel=2,
        )
        folds = n_min
    assign = _stratified_folds(y, folds, seed)
    base_seed = seed if model_seed is None else model_seed
    fit = fit_fn or (
        lambda rows_matrix, rows_y, cfg, s: fit_pipeline(
            rows_matrix, rows_y, cfg, s, selection_method, base_mask
        )
    )
    scores = []
    ids = np.array(matrix.admission_ids)
    for fold in range(folds):
        val = assign == fold
        train_matrix = matrix.restrict_rows(list(ids[~val]))
        val_matrix = matrix.restrict_rows(list(ids[val]))
        trained = fit(train_matrix, y[~val], config, base_seed + fold)
        probs = trained.predict_matrix(val_matrix)
        scores.append(auc_roc(y[val], probs))
    return float(np.mean(scores))


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    bracket: int
    config: TrialConfig
    resource: float
    score: float
    wall_time: float

    def key(self) -> tuple:
        """Comparable identity excluding wall time (for determinism checks)."""
        return (
            self.trial_id,
            self.bracket,
            self.config.family,
            tuple(sorted(self.config.hyperparameters.items(), key=lambda kv: kv[0])),
            self.config.k,
            round(self.resource, 12),
            round(self.score, 12),
        )


@dataclass
class SearchResult:
    best_config: TrialConfig
    best_score: float
    history: list[TrialRecord]
    model: TrainedClassifier
    bracket_sizes: list[int] = field(default_factory=list)

    def report_text(self) -> str:
        lines = ["trial  bracket  resource  score    family/config"]
        for rec in self.history:
            hp = ", ".join(f"{k}={v}" for k, v in sorted(rec.config.hyperparameters.items()))
            lines.append(
                f"{rec.trial_id:>5}  {rec.bracket:>7}  {rec.resource:>8.4f}  "
                f"{rec.score:.4f}   {rec.config.family} (k={rec.config.k}; {hp})"
            )
        lines.append(
            f"best: trial score {self.best_score:.4f} -> {self.best_config.family} "
            f"k={self.best_config.k} {self.best_config.hyperparameters}"
        )
        return "\n".join(lines)


def _trial_seed(master: int, trial_id: int) -> int:
    return (master * 1_000_003 + trial_id * 7_919) % (2**31 - 1)


def run_search(space: SearchSpace, matrix: FeatureMatrix, y) -> SearchResult:
    """Successive-halving brackets over randomly proposed configurations.

    Bracket s starts ceil((s_max+1)/(s+1) * eta^s) configs at resource
    eta^(-s) and keeps the top ceil(n/eta) each rung until resource 1. Stops
    early on budget exhaustion, returning the best fully-evaluated config,
    refit on all rows at full resource.
    """
    y = np.asarray(y).astype(int)
    rng = random.Random(space.seed)
    s_max = int(math.floor(math.log(space.max_resource, space.eta)))
    deadline = time.monotonic() + space.budget_seconds
    history: list[TrialRecord] = []
    bracket_sizes: list[int] = []
    next_trial_id = 0
    exhausted = False

    def evaluate(trial_id: int, config: TrialConfig) -> tuple[float, float]:
        start = time.monotonic()
        score = cv_score(
            config,
            matrix,
            y,
            folds=space.cv_folds,
            seed=space.seed,
            selection_method=space.selection_method,
            model_seed=_trial_seed(space.seed, trial_id),
        )
        return score, time.monotonic() - start

    for s in range(s_max, -1, -1):
        if exhausted:
            break
        n_s = math.ceil((s_max + 1) / (s + 1) * space.eta**s)
        bracket_sizes.append(n_s)
        alive: list[tuple[int, TrialConfig]] = []
        for _ in range(n_s):
            alive.append((next_trial_id, sample_config(rng, space)))
            next_trial_id += 1
        r = space.eta ** (-s)
        while alive:
            runnable = []
            for trial_id, config in alive:
                if time.monotonic() >= deadline:
                    exhausted = True
                    break
                runnable.append((trial_id, config.at_resource(min(r, 1.0))))
            results: list[tuple[int, TrialConfig, float, float]] = []
            if runnable:
                if space.n_jobs > 1:
                    with ThreadPoolExecutor(max_workers=space.n_jobs) as pool:
                        outs = list(
                            pool.map(lambda tc: evaluate(tc[0], tc[1]), runnable)
                        )
                else:
                    outs = [evaluate(tid, cfg) for tid, cfg in runnable]
                for (trial_id, config), (score, wall) in zip(runnable, outs):
                    results.append((trial_id, config, score, wall))
                    history.append(
                        TrialRecord(trial_id, s, config, config.resource, score, wall)
                    )
            if exhausted or not results:
                exhausted = True
                break
            if r >= 1.0:
                break
            results.sort(key=lambda rec: (-rec[2], rec[0]))
            keep = math.ceil(len(results) / space.eta)
            alive = [(tid, cfg.at_resource(1.0)) for tid, cfg, _, _ in results[:keep]]
            r = min(r * space.eta, 1.0)

    full = [rec for rec in history if rec.resource >= 1.0]
    if not full:
        raise BudgetError(
            "budget exhausted before any full-resource trial completed", history
        )
    best = max(full, key=lambda rec: (rec.score, -rec.trial_id))
    final_config = best.config.at_resource(1.0)
    model = fit_pipeline(
        matrix, y, final_config, _trial_seed(space.seed, best.trial_id), space.selection_method
    )
    return SearchResult(
        best_config=final_config,
        best_score=best.score,
        history=history,
        model=model,
        bracket_sizes=bracket_sizes,
    )
