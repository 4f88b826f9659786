"""Design-matrix assembly: binary phenotype columns plus aggregated structured
features, with train-fitted mean imputation, z-scoring, and feature selection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .corpus import (
    EhrAdmission,
    Rejected,
    StructuredFeatureCatalog,
    aggregate_admission,
    normalize_observation,
)

__all__ = [
    "FeatureMatrix",
    "FeatureMask",
    "Imputer",
    "SelectionError",
    "build_matrix",
    "fit_imputer",
    "apply_imputer",
    "select_top_k",
]


class SelectionError(ValueError):
    """Feature selection cannot proceed (e.g. constant labels)."""


@dataclass(frozen=True)
class FeatureMask:
    """The active column subset used for training/explanation."""

    active: frozenset[str]

    def __contains__(self, name: str) -> bool:
        return name in self.active

    def __len__(self) -> int:
        return len(self.active)


class FeatureMatrix:
    """Named-column design matrix, one row per admission.

    Phenotype columns (named by HPO id) hold 0/1; structured columns hold the
    admission aggregate with NaN marking missing cells.
    """

    def __init__(
        self,
        admission_ids: list[str],
        phenotype_columns: tuple[str, ...],
        structured_columns: tuple[str, ...],
        values: np.ndarray,
    ):
        if values.shape != (len(admission_ids), len(phenotype_columns) + len(structured_columns)):
            raise ValueError("values shape does not match ids/columns")
        names = list(phenotype_columns) + list(structured_columns)
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        pheno = values[:, : len(phenotype_columns)]
        if pheno.size and not np.isin(pheno[~np.isnan(pheno)], (0.0, 1.0)).all():
            raise ValueError("phenotype columns must contain only 0/1")
        self.admission_ids = list(admission_ids)
        self.phenotype_columns = tuple(phenotype_columns)
        self.structured_columns = tuple(structured_columns)
        self.values = values.astype(float)
        self._row_index = {a: i for i, a in enumerate(self.admission_ids)}

    @property
    def column_names(self) -> list[str]:
        return list(self.phenotype_columns) + list(self.structured_columns)

    @property
    def n_rows(self) -> int:
        return len(self.admission_ids)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r}") from None

    def row_for(self, admission_id: str) -> np.ndarray:
        return self.values[self._row_index[admission_id]]

    def restrict_rows(self, admission_ids: list[str]) -> "FeatureMatrix":
        idx = [self._row_index[a] for a in admission_ids]
        return FeatureMatrix(
            list(admission_ids),
            self.phenotype_columns,
            self.structured_columns,
            self.values[idx].copy(),
        )

    def restrict_columns(self, mask: FeatureMask) -> "FeatureMatrix":
        pheno = tuple(c for c in self.phenotype_columns if c in mask.active)
        struct = tuple(c for c in self.structured_columns if c in mask.active)
        names = self.column_names
        idx = [names.index(c) for c in list(pheno) + list(struct)]
        return FeatureMatrix(self.admission_ids, pheno, struct, self.values[:, idx].copy())

    def full_mask(self) -> FeatureMask:
        return FeatureMask(frozenset(self.column_names))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["admission_id"] + self.column_names)
            for i, admission_id in enumerate(self.admission_ids):
                row = [
                    "" if math.isnan(v) else format(v, ".10g") for v in self.values[i]
                ]
                writer.writerow([admission_id] + row)

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            names = header[1:]
            pheno = tuple(c for c in names if c.startswith("HP:"))
            struct = tuple(c for c in names if not c.startswith("HP:"))
            order = [names.index(c) for c in list(pheno) + list(struct)]
            ids, rows = [], []
            for rec in reader:
                ids.append(rec[0])
                vals = [float(v) if v != "" else math.nan for v in rec[1:]]
                rows.append([vals[j] for j in order])
            values = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
        return cls(ids, pheno, struct, values)


def build_matrix(
    corpus: list[EhrAdmission],
    extractor,
    catalog: StructuredFeatureCatalog,
) -> FeatureMatrix:
    """One row per admission: phenotype column j is 1 iff the extractor's
    non-negated id set contains it; structured columns hold the plausibility-
    screened admission mean (NaN when nothing retained)."""
    pheno_cols = tuple(sorted(extractor.target_ids))
    struct_cols = tuple(catalog.keys)
    pheno_pos = {c: j for j, c in enumerate(pheno_cols)}
    struct_pos = {c: len(pheno_cols) + j for j, c in enumerate(struct_cols)}

    values = np.zeros((len(corpus), len(pheno_cols) + len(struct_cols)))
    values[:, len(pheno_cols):] = np.nan
    ids = []
    for i, adm in enumerate(corpus):
        ids.append(adm.admission_id)
        for hpo_id in extractor.extract(adm.note_text).present_ids:
            if hpo_id in pheno_pos:
                values[i, pheno_pos[hpo_id]] = 1.0
        retained = []
        for obs in adm.observations:
            out = normalize_observation(obs, catalog)
            if not isinstance(out, Rejected):
                retained.append(out)
        for feature, mean in aggregate_admission(retained).items():
            values[i, struct_pos[feature]] = mean
    return FeatureMatrix(ids, pheno_cols, struct_cols, values)


@dataclass(frozen=True)
class Imputer:
    """Train-fitted statistics: per-structured-column imputation mean and
    z-scoring parameters. Phenotype columns pass through untouched."""

    structured_columns: tuple[str, ...]
    impute_means: tuple[float, ...]
    stds: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "structured_columns": list(self.structured_columns),
            "impute_means": list(self.impute_means),
            "stds": list(self.stds),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Imputer":
        return cls(
            tuple(raw["structured_columns"]),
            tuple(float(v) for v in raw["impute_means"]),
            tuple(float(v) for v in raw["stds"]),
        )


def fit_imputer(train: FeatureMatrix) -> Imputer:
    """Fit imputation and standardization statistics from training rows only.
    All-missing columns impute to 0 with stddev treated as 1."""
    if train.n_rows == 0:
        raise ValueError("cannot fit imputer on zero training rows")
    means, stds = [], []
    offset = len(train.phenotype_columns)
    for j in range(len(train.structured_columns)):
        col = train.values[:, offset + j]
        observed = col[~np.isnan(col)]
        if observed.size == 0:
            means.append(0.0)
            stds.append(1.0)
        else:
            means.append(float(observed.mean()))
            stds.append(float(observed.std()))
    return Imputer(train.structured_columns, tuple(means), tuple(stds))


def apply_imputer(imputer: Imputer, matrix: FeatureMatrix) -> FeatureMatrix:
    """Fill structured missing cells with the training mean, then z-score
    structured columns; zero-stddev columns standardize to 0."""
    if matrix.structured_columns != imputer.structured_columns:
        raise ValueError("imputer fitted on different structured columns")
    values = matrix.values.copy()
    offset = len(matrix.phenotype_columns)
    for j, (mean, std) in enumerate(zip(imputer.impute_means, imputer.stds)):
        col = values[:, offset + j]
        col[np.isnan(col)] = mean
        if std == 0.0:
            values[:, offset + j] = 0.0
        else:
            values[:, offset + j] = (col - mean) / std
    return FeatureMatrix(
        matrix.admission_ids, matrix.phenotype_columns, matrix.structured_columns, values
    )


def _quantile_bins(col: np.ndarray, n_bins: int = 10) -> np.ndarray:
    edges = np.unique(np.quantile(col, np.linspace(0, 1, n_bins + 1)[1:-1]))
    return np.digitize(col, edges, right=True)


def _mutual_information(col: np.ndarray, labels: np.ndarray, binary: bool) -> float:
    x = col.astype(int) if binary else _quantile_bins(col)
    n = len(labels)
    mi = 0.0
    for xv in np.unique(x):
        px = (x == xv).mean()
        for yv in (0, 1):
            pxy = ((x == xv) & (labels == yv)).sum() / n
            if pxy > 0:
                py = (labels == yv).mean()
                mi += pxy * math.log(pxy / (px * py))
    return max(mi, 0.0)


def _abs_point_biserial(col: np.ndarray, labels: np.ndarray) -> float:
    if col.std() == 0 or labels.std() == 0:
        return 0.0
    return abs(float(np.corrcoef(col, labels)[0, 1]))


def select_top_k(
    matrix: FeatureMatrix,
    labels: np.ndarray,
    k: int,
    method: str = "mutual_information",
) -> FeatureMask:
    """Rank active columns by dependence on the labels and keep the top k
    (k clamped to the column count); ties break lexicographically by name."""
    if k < 1:
        raise SelectionError("k must be >= 1")
    labels = np.asarray(labels).astype(int)
    if len(labels) != matrix.n_rows:
        raise SelectionError("labels not aligned to matrix rows")
    if labels.min() == labels.max():
        raise SelectionError("labels are constant: no signal to select against")
    if np.isnan(matrix.values).any():
        raise SelectionError("matrix must be imputed before selection")
    if method not in ("mutual_information", "abs_point_biserial"):
        raise SelectionError(f"unknown selection method {method!r}")

    names = matrix.column_names
    n_pheno = len(matrix.phenotype_columns)
    scored = []
    for j, name in enumerate(names):
        col = matrix.values[:, j]
        if method == "mutual_information":
            score = _mutual_information(col, labels, binary=j < n_pheno)
        else:
            score = _abs_point_biserial(col, labels)
        scored.append((-score, name))
    scored.sort()
    keep = min(k, len(names))
    return FeatureMask(frozenset(name for _, name in scored[:keep]))
