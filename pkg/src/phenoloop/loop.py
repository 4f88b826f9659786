"""Clinician-in-the-loop protocol: initial noisy-label classifier, quadrant
sampling for gold labeling, consensus collection, iterative AutoML retraining
with feature review, the stopping rule, and the entire-test-set estimate.

Every mutation is an event appended to a run log; LoopState is a pure fold
over that log, so a crashed run rebuilds exactly by replay.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .automl import SearchSpace, TrainedClassifier, fit_pipeline, run_search, TrialConfig
from .corpus import (
    EhrAdmission,
    StructuredFeatureCatalog,
    Verdict,
    apply_icd_criteria,
    builtin_criteria,
    split_by_patient,
)
from .features import FeatureMask, FeatureMatrix, build_matrix
from .metrics import EvaluationReport, gold_report
from .ontology import default_matcher
from .shapley import global_importance, kernel_shap

__all__ = [
    "LoopError",
    "ConflictError",
    "GoldLabel",
    "QuadrantSample",
    "EvaluationEstimate",
    "LoopConfig",
    "LoopState",
    "LoopRun",
    "LoopRunner",
    "round_half_up",
    "train_initial",
    "quadrant_sample",
    "estimate_entire_set",
    "run_simulated_loop",
]

QUADRANT_KEYS = ("pred+/icd+", "pred+/icd-", "pred-/icd+", "pred-/icd-")

AWAITING_LABELS = "AwaitingLabels"
AWAITING_VERDICTS = "AwaitingVerdicts"
CONVERGED = "Converged"
MAX_ITERATIONS = "MaxIterations"
TERMINAL = (CONVERGED, MAX_ITERATIONS)


class LoopError(ValueError):
    """Invalid loop operation."""


class ConflictError(LoopError):
    """Operation not allowed in the current state."""

    def __init__(self, message: str, required_state: str):
        super().__init__(message)
        self.required_state = required_state


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class GoldLabel:
    """Per-admission annotator votes and the consensus under the quorum rule:
    consensus exists once at least ``required`` votes are in and a strict
    majority agrees."""

    labels: dict[str, bool] = field(default_factory=dict)
    consensus: bool | None = None

    def recompute(self, required: int) -> None:
        if len(self.labels) < required:
            self.consensus = None
            return
        yes = sum(1 for v in self.labels.values() if v)
        no = len(self.labels) - yes
        self.consensus = yes > no if yes != no else None


@dataclass(frozen=True)
class QuadrantSample:
    """Admissions sampled from the 2x2 cross of model prediction and ICD
    label. ``groups`` hold at most the quota per quadrant; overflow taken to
    cover another quadrant's shortfall lands in ``extras``."""

    groups: dict[str, tuple[str, ...]]
    extras: dict[str, tuple[str, ...]]
    shortfalls: dict[str, int]

    def ordered_ids(self) -> list[str]:
        out: list[str] = []
        for key in QUADRANT_KEYS:
            out.extend(self.groups.get(key, ()))
        for key in QUADRANT_KEYS:
            out.extend(self.extras.get(key, ()))
        return out

    def all_ids(self) -> set[str]:
        return set(self.ordered_ids())

    def to_payload(self) -> dict:
        return {
            "groups": {k: list(v) for k, v in self.groups.items()},
            "extras": {k: list(v) for k, v in self.extras.items()},
            "shortfalls": dict(self.shortfalls),
        }

    @classmethod
    def from_payload(cls, raw: dict) -> "QuadrantSample":
        return cls(
            groups={k: tuple(v) for k, v in raw["groups"].items()},
            extras={k: tuple(v) for k, v in raw["extras"].items()},
            shortfalls={k: int(v) for k, v in raw["shortfalls"].items()},
        )


@dataclass(frozen=True)
class EvaluationEstimate:
    """Entire-testing-set yield estimate: predicted-positive count, precision
    estimated from an expert-reviewed sample, and their rounded product."""

    n_pred: int
    p_est: float
    estimate: int

    @classmethod
    def from_counts(cls, n_pred: int, p_est: float) -> "EvaluationEstimate":
        return cls(n_pred=n_pred, p_est=p_est, estimate=round_half_up(n_pred * p_est))

    def to_dict(self) -> dict:
        return {"n_pred": self.n_pred, "p_est": self.p_est, "estimate": self.estimate}


def train_initial(
    matrix: FeatureMatrix, icd_labels, seed: int
) -> tuple[TrainedClassifier, np.ndarray]:
    """Initial noisy-label classifier: a 100-tree random forest fit on the
    ICD-derived labels over all columns. Returns the fitted pipeline and the
    out-of-bag probabilities for the training rows (the honest self-scores
    the quadrant sampler needs to surface miscoded records)."""
    y = np.asarray(icd_labels).astype(int)
    config = TrialConfig("random_forest", {"n_trees": 100, "depth": None}, None)
    trained = fit_pipeline(matrix, y, config, seed)
    prepared = trained.prepared_submatrix(matrix)
    oob = trained.model.oob_proba(prepared.values)
    return trained, oob


def quadrant_sample(
    predictions: dict[str, float],
    icd_labels: dict[str, bool],
    quota: int = 25,
    seed: int = 0,
    threshold: float = 0.5,
) -> QuadrantSample:
    """Partition admissions by (prediction at threshold) x (ICD label), then
    sample up to the quota from each group without replacement. Shortfalls
    are filled from the largest remaining group and reported."""
    if not predictions:
        raise LoopError("cannot sample from an empty prediction set")
    if set(predictions) != set(icd_labels):
        raise LoopError("predictions and ICD labels must cover the same admissions")

    pools: dict[str, list[str]] = {k: [] for k in QUADRANT_KEYS}
    for admission_id in sorted(predictions):
        pred = predictions[admission_id] >= threshold
        icd = icd_labels[admission_id]
        key = f"pred{'+' if pred else '-'}/icd{'+' if icd else '-'}"
        pools[key].append(admission_id)

    rng = random.Random(seed)
    groups: dict[str, tuple[str, ...]] = {}
    extras: dict[str, list[str]] = {k: [] for k in QUADRANT_KEYS}
    shortfalls: dict[str, int] = {}
    remaining: dict[str, list[str]] = {}
    total_short = 0
    for key in QUADRANT_KEYS:
        pool = pools[key]
        take = min(quota, len(pool))
        picked = rng.sample(pool, take)
        groups[key] = tuple(picked)
        left = sorted(set(pool) - set(picked))
        remaining[key] = left
        short = quota - take
        if short > 0:
            shortfalls[key] = short
            total_short += short

    while total_short > 0:
        key = max(QUADRANT_KEYS, key=lambda k: len(remaining[k]))
        if not remaining[key]:
            break
        take = min(total_short, len(remaining[key]))
        picked = rng.sample(remaining[key], take)
        extras[key].extend(picked)
        remaining[key] = sorted(set(remaining[key]) - set(picked))
        total_short -= take

    return QuadrantSample(
        groups=groups,
        extras={k: tuple(v) for k, v in extras.items() if v},
        shortfalls=shortfalls,
    )


def estimate_entire_set(
    classifier: TrainedClassifier,
    matrix: FeatureMatrix,
    oracle,
    seed: int,
    sample_n: int = 100,
    threshold: float = 0.5,
) -> tuple[EvaluationEstimate, list[str]]:
    """Run the classifier over the full testing matrix, sample up to
    ``sample_n`` predicted positives for expert confirmation, and estimate the
    number of true positives found as round_half_up(N_pred * P_est).

    ``matrix`` must already be restricted to the eligible candidate pool
    (background-satisfying admissions for cachexia-style criteria).
    """
    probs = classifier.predict_matrix(matrix)
    positive_ids = [a for a, p in zip(matrix.admission_ids, probs) if p >= threshold]
    n_pred = len(positive_ids)
    if n_pred == 0:
        import warnings

        warnings.warn("no predicted positives on the testing set", stacklevel=2)
        return EvaluationEstimate(0, 0.0, 0), []
    rng = random.Random(seed)
    sampled = rng.sample(sorted(positive_ids), min(sample_n, n_pred))
    confirmed = sum(1 for a in sampled if oracle(a))
    p_est = confirmed / len(sampled)
    return EvaluationEstimate.from_counts(n_pred, p_est), sampled


@dataclass(frozen=True)
class LoopConfig:
    disease: str
    seed: int = 0
    train_fraction: float = 0.5
    quota: int = 25
    sample_n: int = 100
    required_annotators: int = 1
    max_iterations: int = 3
    epsilon: float = 0.01
    m_top: int = 20
    threshold: float = 0.5
    feature_scope: str = "full"  # or "structured_only"
    background_rows: int = 100
    explain_rows: int = 100
    explain_coalitions: int | None = 256
    search: SearchSpace = field(default_factory=SearchSpace)

    def to_dict(self) -> dict:
        raw = {
            "disease": self.disease,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "quota": self.quota,
            "sample_n": self.sample_n,
            "required_annotators": self.required_annotators,
            "max_iterations": self.max_iterations,
            "epsilon": self.epsilon,
            "m_top": self.m_top,
            "threshold": self.threshold,
            "feature_scope": self.feature_scope,
            "background_rows": self.background_rows,
            "explain_rows": self.explain_rows,
            "explain_coalitions": self.explain_coalitions,
            "search": {
                "families": list(self.search.families),
                "feature_counts": list(self.search.feature_counts),
                "max_resource": self.search.max_resource,
                "eta": self.search.eta,
                "budget_seconds": self.search.budget_seconds,
                "seed": self.search.seed,
                "cv_folds": self.search.cv_folds,
                "selection_method": self.search.selection_method,
                "n_jobs": self.search.n_jobs,
            },
        }
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "LoopConfig":
        raw = dict(raw)
        search_raw = raw.pop("search", {})
        search = SearchSpace(
            families=tuple(search_raw.get("families", SearchSpace().families)),
            feature_counts=tuple(
                None if v is None else int(v)
                for v in search_raw.get("feature_counts", SearchSpace().feature_counts)
            ),
            max_resource=search_raw.get("max_resource", 9),
            eta=search_raw.get("eta", 3),
            budget_seconds=search_raw.get("budget_seconds", 120.0),
            seed=search_raw.get("seed", 0),
            cv_folds=search_raw.get("cv_folds", 5),
            selection_method=search_raw.get("selection_method", "mutual_information"),
            n_jobs=search_raw.get("n_jobs", 1),
        )
        return cls(search=search, **raw)


@dataclass
class IterationRecord:
    iteration: int
    score: float
    config: dict
    top_features: list[tuple[str, float, str]]
    mask_before: tuple[str, ...]
    model_file: str | None = None
    # per-feature beeswarm dots for the review screen:
    # feature -> [[admission_id, phi, raw value or None], ...]
    beeswarm: dict[str, list] = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {
            "iteration": self.iteration,
            "score": self.score,
            "config": self.config,
            "top_features": [[f, phi, d] for f, phi, d in self.top_features],
            "mask_before": list(self.mask_before),
            "model_file": self.model_file,
            "beeswarm": self.beeswarm,
        }

    @classmethod
    def from_payload(cls, raw: dict) -> "IterationRecord":
        return cls(
            iteration=raw["iteration"],
            score=raw["score"],
            config=raw["config"],
            top_features=[(f, phi, d) for f, phi, d in raw["top_features"]],
            mask_before=tuple(raw["mask_before"]),
            model_file=raw.get("model_file"),
            beeswarm=raw.get("beeswarm", {}),
        )


class LoopState:
    """Replay target: the full logical state of one run, as a fold over the
    event log."""

    def __init__(self) -> None:
        self.run_id: str | None = None
        self.disease: str | None = None
        self.config: dict = {}
        self.columns: tuple[str, ...] = ()
        self.mask: set[str] = set()
        self.queue_order: list[str] = []
        self.train_sample: set[str] = set()
        self.test_sample: set[str] = set()
        self.quadrants: dict[str, dict] = {}
        self.labels: dict[str, GoldLabel] = {}
        self.verdict_log: list[dict] = []
        self.removed_features: set[str] = set()
        self.iterations: list[IterationRecord] = []
        self.pending_review: tuple[str, ...] = ()
        self.verdicts_received: bool = False
        self.status: str = AWAITING_LABELS
        self.estimate: dict | None = None
        self.report: dict | None = None
        self.seq: int = 0

    # -- event application -------------------------------------------------

    def apply(self, event: dict) -> None:
        etype = event["type"]
        payload = event["payload"]
        handler = getattr(self, f"_on_{etype}", None)
        if handler is None:
            raise LoopError(f"unknown event type {etype!r}")
        handler(payload)
        self.seq = event["seq"]

    def _on_run_created(self, p: dict) -> None:
        self.run_id = p["run_id"]
        self.disease = p["disease"]
        self.config = p["config"]
        self.columns = tuple(p["columns"])
        self.mask = set(p["columns"])
        self.status = AWAITING_LABELS

    def _on_queue_assigned(self, p: dict) -> None:
        self.quadrants = {"train": p["train"], "test": p["test"]}
        train = QuadrantSample.from_payload(p["train"])
        test = QuadrantSample.from_payload(p["test"])
        self.train_sample = train.all_ids()
        self.test_sample = test.all_ids()
        self.queue_order = train.ordered_ids() + test.ordered_ids()

    def _on_label_recorded(self, p: dict) -> None:
        gold = self.labels.setdefault(p["admission_id"], GoldLabel())
        gold.labels[p["annotator"]] = bool(p["label"])
        gold.recompute(int(self.config.get("required_annotators", 1)))

    def _on_verdicts_recorded(self, p: dict) -> None:
        removed = set()
        for feature, verdict in p["verdicts"].items():
            self.verdict_log.append(
                {
                    "feature": feature,
                    "verdict": verdict,
                    "iteration": p["iteration"],
                    "reviewer": p["reviewer"],
                }
            )
            if verdict == "Irrelevant":
                removed.add(feature)
        self.mask -= removed
        self.removed_features |= removed
        self.verdicts_received = True

    def _on_feature_reinstated(self, p: dict) -> None:
        # present in the event schema; unused by the default flow
        feature = p["feature"]
        if feature in self.columns:
            self.mask.add(feature)
            self.removed_features.discard(feature)

    def _on_iteration_completed(self, p: dict) -> None:
        record = IterationRecord.from_payload(p)
        self.iterations.append(record)
        self.pending_review = tuple(f for f, _, _ in record.top_features)
        self.verdicts_received = False
        self.status = p["status"]

    def _on_estimate_computed(self, p: dict) -> None:
        self.estimate = p

    def _on_report_recorded(self, p: dict) -> None:
        self.report = p

    # -- views --------------------------------------------------------------

    def consensus_ids(self, subset: set[str]) -> list[str]:
        return [
            a
            for a in self.queue_order
            if a in subset and self.labels.get(a) and self.labels[a].consensus is not None
        ]

    def last_score(self) -> float | None:
        return self.iterations[-1].score if self.iterations else None

    def snapshot(self) -> dict:
        """Canonical comparable form (used by the crash-replay tests)."""
        return {
            "run_id": self.run_id,
            "disease": self.disease,
            "config": self.config,
            "columns": list(self.columns),
            "mask": sorted(self.mask),
            "queue_order": list(self.queue_order),
            "train_sample": sorted(self.train_sample),
            "test_sample": sorted(self.test_sample),
            "labels": {
                a: {"labels": dict(sorted(g.labels.items())), "consensus": g.consensus}
                for a, g in sorted(self.labels.items())
            },
            "verdict_log": self.verdict_log,
            "removed": sorted(self.removed_features),
            "iterations": [r.to_payload() for r in self.iterations],
            "pending_review": list(self.pending_review),
            "verdicts_received": self.verdicts_received,
            "status": self.status,
            "estimate": self.estimate,
            "report": self.report,
            "seq": self.seq,
        }

    @classmethod
    def fold(cls, events: list[dict]) -> "LoopState":
        state = cls()
        for event in events:
            state.apply(event)
        return state


class LoopRun:
    """Validated, event-sourced mutation surface for one run."""

    def __init__(self, log_path=None):
        self.state = LoopState()
        self.events: list[dict] = []
        self.log_path = log_path
        if log_path is not None:
            log_path.parent.mkdir(parents=True, exist_ok=True)

    @classmethod
    def replay(cls, events: list[dict], log_path=None) -> "LoopRun":
        run = cls()
        for event in events:
            run.state.apply(event)
            run.events.append(event)
        run.log_path = log_path
        return run

    @classmethod
    def load(cls, log_path) -> "LoopRun":
        events = []
        with open(log_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    events.append(json.loads(line))
        return cls.replay(events, log_path=log_path)

    def _emit(self, etype: str, payload: dict) -> dict:
        event = {
            "seq": self.state.seq + 1,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "type": etype,
            "payload": payload,
        }
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")
        self.state.apply(event)
        self.events.append(event)
        return event

    # -- validated operations ------------------------------------------------

    def create(self, run_id: str, disease: str, config: dict, columns: list[str]) -> None:
        if self.state.run_id is not None:
            raise LoopError("run already created")
        self._emit(
            "run_created",
            {"run_id": run_id, "disease": disease, "config": config, "columns": columns},
        )

    def assign_queue(self, train: QuadrantSample, test: QuadrantSample) -> None:
        self._emit(
            "queue_assigned", {"train": train.to_payload(), "test": test.to_payload()}
        )

    def record_label(self, admission_id: str, annotator: str, label: bool) -> None:
        if self.state.status in TERMINAL:
            raise ConflictError("run is terminal", required_state=AWAITING_LABELS)
        if admission_id not in self.state.train_sample | self.state.test_sample:
            raise LoopError(f"admission {admission_id!r} is not in the labeling queue")
        self._emit(
            "label_recorded",
            {"admission_id": admission_id, "annotator": annotator, "label": bool(label)},
        )

    def record_verdicts(self, verdicts: dict[str, str], reviewer: str) -> None:
        state = self.state
        if state.status != AWAITING_VERDICTS:
            raise ConflictError(
                f"verdicts only accepted while awaiting review (status {state.status})",
                required_state=AWAITING_VERDICTS,
            )
        if state.verdicts_received:
            raise ConflictError(
                "verdicts for this iteration already recorded", required_state=AWAITING_VERDICTS
            )
        unknown = set(verdicts) - set(state.pending_review)
        if unknown:
            raise LoopError(f"verdicts for features not under review: {sorted(unknown)}")
        bad = {v for v in verdicts.values() if v not in ("Relevant", "Irrelevant")}
        if bad:
            raise LoopError(f"invalid verdict values: {sorted(bad)}")
        removing = {f for f, v in verdicts.items() if v == "Irrelevant"}
        if not state.mask - removing:
            raise LoopError("cannot remove every remaining feature")
        self._emit(
            "verdicts_recorded",
            {
                "verdicts": dict(sorted(verdicts.items())),
                "reviewer": reviewer,
                "iteration": len(state.iterations),
            },
        )

    def require_iteration_allowed(self, min_per_class: int = 10) -> None:
        state = self.state
        if state.status in TERMINAL:
            raise ConflictError("run is terminal", required_state=AWAITING_LABELS)
        if state.iterations and not state.verdicts_received:
            raise ConflictError(
                "feature verdicts for the previous iteration are outstanding",
                required_state=AWAITING_VERDICTS,
            )
        consensus = state.consensus_ids(state.train_sample)
        pos = sum(1 for a in consensus if state.labels[a].consensus)
        neg = len(consensus) - pos
        if pos < min_per_class or neg < min_per_class:
            raise ConflictError(
                f"insufficient consensus labels per class (pos={pos}, neg={neg}, "
                f"need {min_per_class} each)",
                required_state=AWAITING_LABELS,
            )

    def complete_iteration(self, record: IterationRecord, converged: bool) -> None:
        state = self.state
        iteration = len(state.iterations) + 1
        if record.iteration != iteration:
            raise LoopError(f"expected iteration {iteration}, got {record.iteration}")
        max_iterations = int(state.config.get("max_iterations", 3))
        if converged:
            status = CONVERGED
        elif iteration >= max_iterations:
            status = MAX_ITERATIONS
        else:
            status = AWAITING_VERDICTS
        payload = record.to_payload()
        payload["status"] = status
        self._emit("iteration_completed", payload)

    def set_estimate(self, estimate: EvaluationEstimate, sampled_ids: list[str]) -> None:
        payload = estimate.to_dict()
        payload["sampled_ids"] = sampled_ids
        self._emit("estimate_computed", payload)

    def set_report(self, report: dict) -> None:
        self._emit("report_recorded", report)


class LoopRunner:
    """Binds a corpus to the loop protocol and performs the heavy lifting
    (training, sampling, explanation) around a LoopRun."""

    def __init__(
        self,
        corpus: list[EhrAdmission],
        config: LoopConfig,
        run_id: str = "run-1",
        log_path=None,
        model_dir=None,
        matcher=None,
        catalog: StructuredFeatureCatalog | None = None,
    ):
        self.corpus = corpus
        self.config = config
        self.run_id = run_id
        self.model_dir = model_dir
        criteria_map = builtin_criteria()
        if config.disease not in criteria_map:
            raise LoopError(
                f"no built-in criteria for {config.disease!r}; "
                f"choose one of {sorted(criteria_map)}"
            )
        self.criteria = criteria_map[config.disease]
        self.matcher = matcher or default_matcher()
        self.catalog = catalog or StructuredFeatureCatalog.default()

        verdicts = {a.admission_id: apply_icd_criteria(a, self.criteria) for a in corpus}
        self.cohort = [a for a in corpus if verdicts[a.admission_id] is not Verdict.EXCLUDED]
        if not self.cohort:
            raise LoopError("every admission is Excluded under the background condition")
        self.icd_positive = {
            a.admission_id: verdicts[a.admission_id] is Verdict.POSITIVE for a in self.cohort
        }
        self.split = split_by_patient(self.cohort, config.train_fraction, config.seed)
        full = build_matrix(self.cohort, self.matcher, self.catalog)
        if config.feature_scope == "structured_only":
            scope = FeatureMask(frozenset(full.structured_columns))
            self.matrix = full.restrict_columns(scope)
        elif config.feature_scope == "full":
            self.matrix = full
        else:
            raise LoopError(f"unknown feature_scope {config.feature_scope!r}")

        self.run = LoopRun(log_path=log_path)
        self.models: dict[int, TrainedClassifier] = {}
        self.initial_model: TrainedClassifier | None = None

    # -- setup -----------------------------------------------------------------

    @property
    def state(self) -> LoopState:
        return self.run.state

    def _side_ids(self, ids: frozenset[str]) -> list[str]:
        return [a for a in self.matrix.admission_ids if a in ids]

    def setup(self) -> None:
        """Create the run, train the initial ICD-label classifier, and select
        both gold-labeling queues by quadrant sampling."""
        config = self.config
        self.run.create(
            self.run_id,
            config.disease,
            config.to_dict(),
            columns=self.matrix.column_names,
        )
        train_ids = self._side_ids(self.split.train_ids)
        test_ids = self._side_ids(self.split.test_ids)
        train_matrix = self.matrix.restrict_rows(train_ids)
        icd_train = np.array([self.icd_positive[a] for a in train_ids], dtype=int)
        initial, oob = train_initial(train_matrix, icd_train, config.seed)
        self.initial_model = initial

        train_pred = dict(zip(train_ids, oob.tolist()))
        train_icd = {a: self.icd_positive[a] for a in train_ids}
        train_sample = quadrant_sample(
            train_pred, train_icd, config.quota, config.seed, config.threshold
        )
        test_matrix = self.matrix.restrict_rows(test_ids)
        test_pred = dict(zip(test_ids, initial.predict_matrix(test_matrix).tolist()))
        test_icd = {a: self.icd_positive[a] for a in test_ids}
        test_sample = quadrant_sample(
            test_pred, test_icd, config.quota, config.seed + 1, config.threshold
        )
        self.run.assign_queue(train_sample, test_sample)

    # -- labeling ----------------------------------------------------------------

    def record_label(self, admission_id: str, annotator: str, label: bool) -> None:
        self.run.record_label(admission_id, annotator, label)

    def record_verdicts(self, verdicts: dict[str, str], reviewer: str) -> None:
        self.run.record_verdicts(verdicts, reviewer)

    # -- iteration ----------------------------------------------------------------

    def _masked_matrix(self) -> FeatureMatrix:
        return self.matrix.restrict_columns(FeatureMask(frozenset(self.state.mask)))

    def gold_training_data(self) -> tuple[FeatureMatrix, np.ndarray, list[str]]:
        state = self.state
        ids = state.consensus_ids(state.train_sample)
        matrix = self._masked_matrix().restrict_rows(ids)
        y = np.array([state.labels[a].consensus for a in ids], dtype=int)
        return matrix, y, ids

    def run_iteration(self) -> IterationRecord:
        self.run.require_iteration_allowed()
        config = self.config
        matrix, y, gold_ids = self.gold_training_data()
        search = SearchSpace(
            families=config.search.families,
            feature_counts=config.search.feature_counts,
            max_resource=config.search.max_resource,
            eta=config.search.eta,
            budget_seconds=config.search.budget_seconds,
            seed=config.search.seed + len(self.state.iterations),
            cv_folds=config.search.cv_folds,
            selection_method=config.search.selection_method,
            n_jobs=config.search.n_jobs,
        )
        result = run_search(search, matrix, y)
        model = result.model
        iteration = len(self.state.iterations) + 1

        importance = self._global_importance(model, matrix)
        top = [
            (feat, mean_abs, direction)
            for feat, mean_abs, direction, _ in importance.ranking[: config.m_top]
        ]
        model_file = None
        if self.model_dir is not None:
            self.model_dir.mkdir(parents=True, exist_ok=True)
            model_file = str(self.model_dir / f"model-iter{iteration}.json")
            from .automl import save_model

            save_model(model_file, model)

        previous = self.state.last_score()
        converged = previous is not None and abs(result.best_score - previous) < config.epsilon
        record = IterationRecord(
            iteration=iteration,
            score=result.best_score,
            config=result.best_config.to_dict(),
            top_features=top,
            mask_before=tuple(sorted(self.state.mask)),
            model_file=model_file,
            beeswarm=self._beeswarm_payload([f for f, _, _ in top]),
        )
        self.models[iteration] = model
        self.run.complete_iteration(record, converged)
        return record

    def _global_importance(self, model: TrainedClassifier, gold_matrix: FeatureMatrix):
        config = self.config
        prepared = model.prepared_submatrix(gold_matrix)
        rng = random.Random(config.seed + 97)
        ids = list(prepared.admission_ids)
        explain_ids = (
            sorted(rng.sample(ids, config.explain_rows)) if len(ids) > config.explain_rows else ids
        )
        bg_ids = (
            sorted(rng.sample(ids, config.background_rows))
            if len(ids) > config.background_rows
            else ids
        )
        background = prepared.restrict_rows(bg_ids).values
        names = tuple(prepared.column_names)
        d = len(names)
        n_coalitions = config.explain_coalitions
        if n_coalitions is not None:
            n_coalitions = max(d + 2, 2 * d + n_coalitions)
            if d < 31:
                n_coalitions = min(n_coalitions, 2**d)
        explanations = []
        scorer = model.model.predict_proba
        for admission_id in explain_ids:
            row = prepared.row_for(admission_id)
            explanations.append(
                kernel_shap(
                    scorer,
                    row,
                    background,
                    n_coalitions=n_coalitions,
                    seed=config.seed,
                    feature_names=names,
                    admission_id=admission_id,
                )
            )
        self._last_explanations = explanations
        return global_importance(explanations)

    def _beeswarm_payload(self, features: list[str], max_dots: int = 50) -> dict[str, list]:
        """Per-feature (admission, phi, raw value) dots from the explanations
        of the iteration that just ran, small enough to live in the event."""
        explanations = getattr(self, "_last_explanations", [])[:max_dots]
        payload: dict[str, list] = {}
        for feature in features:
            dots = []
            for ex in explanations:
                if feature not in ex.phi:
                    continue
                raw = self.matrix.row_for(ex.admission_id)[self.matrix.column_index(feature)]
                dots.append(
                    [ex.admission_id, ex.phi[feature], None if math.isnan(raw) else float(raw)]
                )
            payload[feature] = dots
        return payload

    def explain_admission(self, admission_id: str, model: TrainedClassifier | None = None):
        """Per-patient explanation against the latest (or given) model."""
        model = model or self.final_model()
        gold_matrix, _, _ = self.gold_training_data()
        prepared_bg = model.prepared_submatrix(gold_matrix)
        rng = random.Random(self.config.seed + 97)
        ids = list(prepared_bg.admission_ids)
        bg_ids = (
            sorted(rng.sample(ids, self.config.background_rows))
            if len(ids) > self.config.background_rows
            else ids
        )
        background = prepared_bg.restrict_rows(bg_ids).values
        target = model.prepared_submatrix(
            self._masked_matrix().restrict_rows([admission_id])
        )
        names = tuple(target.column_names)
        d = len(names)
        n_coalitions = self.config.explain_coalitions
        if n_coalitions is not None:
            n_coalitions = max(d + 2, 2 * d + n_coalitions)
            if d < 31:
                n_coalitions = min(n_coalitions, 2**d)
        return kernel_shap(
            model.model.predict_proba,
            target.values[0],
            background,
            n_coalitions=n_coalitions,
            seed=self.config.seed,
            feature_names=names,
            admission_id=admission_id,
        )

    def final_model(self) -> TrainedClassifier:
        if not self.models:
            raise LoopError("no completed iteration yet")
        return self.models[max(self.models)]

    # -- evaluation ----------------------------------------------------------------

    def structured_baseline_scores(self) -> np.ndarray:
        """The Structured-Data-Only configuration: same gold training labels,
        same search, but only the 17 structured columns as features. Returns
        its scores on the gold testing subset."""
        state = self.state
        train_ids = state.consensus_ids(state.train_sample)
        test_ids = state.consensus_ids(state.test_sample)
        if not train_ids or not test_ids:
            raise LoopError("gold subsets are not labeled yet")
        y = np.array([state.labels[a].consensus for a in train_ids], dtype=int)
        scope = FeatureMask(frozenset(self.matrix.structured_columns))
        sub = self.matrix.restrict_columns(scope)
        search = self.config.search
        space = SearchSpace(
            families=search.families,
            feature_counts=search.feature_counts,
            max_resource=search.max_resource,
            eta=search.eta,
            budget_seconds=search.budget_seconds,
            seed=search.seed + 1009,
            cv_folds=search.cv_folds,
            selection_method=search.selection_method,
            n_jobs=search.n_jobs,
        )
        result = run_search(space, sub.restrict_rows(train_ids), y)
        return result.model.predict_matrix(sub.restrict_rows(test_ids))

    def gold_test_report(self, include_structured_baseline: bool = False) -> EvaluationReport:
        state = self.state
        ids = state.consensus_ids(state.test_sample)
        if not ids:
            raise LoopError("no consensus labels on the gold testing subset")
        y = [state.labels[a].consensus for a in ids]
        matrix = self._masked_matrix().restrict_rows(ids)
        scores = self.final_model().predict_matrix(matrix)
        icd = [self.icd_positive[a] for a in ids]
        extra = None
        if include_structured_baseline:
            extra = {"Structured Data Only": self.structured_baseline_scores()}
        report = gold_report(
            self.config.disease,
            y,
            scores,
            icd,
            extra_rows=extra,
            threshold=self.config.threshold,
        )
        self.run.set_report(report.to_dict())
        return report

    def entire_set_estimate(self, oracle) -> EvaluationEstimate:
        test_ids = self._side_ids(self.split.test_ids)
        matrix = self._masked_matrix().restrict_rows(test_ids)
        estimate, sampled = estimate_entire_set(
            self.final_model(),
            matrix,
            oracle,
            seed=self.config.seed + 2,
            sample_n=self.config.sample_n,
            threshold=self.config.threshold,
        )
        self.run.set_estimate(estimate, sampled)
        return estimate


def run_simulated_loop(
    corpus: list[EhrAdmission],
    ground_truth,
    profile,
    config: LoopConfig,
    log_path=None,
    model_dir=None,
    progress=None,
    include_structured_baseline: bool = False,
) -> dict:
    """Drive the entire protocol with the simulated clinician oracle: label
    both queues, iterate with oracle feature verdicts until the stopping rule
    fires, then produce the gold-subset report and the entire-set estimate."""
    from .synth import oracle_diagnosis, oracle_feature_verdict

    runner = LoopRunner(corpus, config, log_path=log_path, model_dir=model_dir)
    runner.setup()
    say = progress or (lambda msg: None)

    state = runner.state
    for admission_id in state.queue_order:
        runner.record_label(admission_id, "oracle", oracle_diagnosis(ground_truth, admission_id))
    say(f"labeled {len(state.queue_order)} queued admissions with the oracle")

    while state.status not in TERMINAL:
        record = runner.run_iteration()
        say(
            f"iteration {record.iteration}: cv score {record.score:.4f} "
            f"({record.config['family']}, k={record.config['k']})"
        )
        if state.status == AWAITING_VERDICTS:
            verdicts = {
                feat: oracle_feature_verdict(profile, feat)
                for feat, _, _ in record.top_features
            }
            runner.record_verdicts(verdicts, reviewer="oracle")
            rejected = sorted(f for f, v in verdicts.items() if v == "Irrelevant")
            if rejected:
                say(f"oracle rejected: {', '.join(rejected)}")

    report = runner.gold_test_report(include_structured_baseline=include_structured_baseline)
    estimate = runner.entire_set_estimate(
        lambda admission_id: oracle_diagnosis(ground_truth, admission_id)
    )
    return {
        "runner": runner,
        "state": state,
        "report": report,
        "estimate": estimate,
        "iterations": state.iterations,
    }
