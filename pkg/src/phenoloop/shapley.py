"""Shapley-value attribution for arbitrary scorers: exact coalition
enumeration for small feature counts, kernel-weighted least squares for
larger ones, plus global importance summaries and beeswarm/waterfall exports.

The value of a coalition is the interventional expectation: features in the
coalition come from the explained row, the rest from each background row, and
the scorer outputs are averaged over the background.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = [
    "ShapleyError",
    "Explanation",
    "GlobalImportance",
    "exact_shapley",
    "kernel_shap",
    "global_importance",
    "export_beeswarm",
    "export_waterfall",
]

EXACT_MAX_FEATURES = 20


class ShapleyError(ValueError):
    """Explanation cannot be computed as requested."""


@dataclass(frozen=True)
class Explanation:
    """Per-feature attribution for one row: base_value is the mean model
    output over the background, and base_value + sum(phi) recovers the model
    output at the explained row."""

    feature_names: tuple[str, ...]
    base_value: float
    phi: dict[str, float]
    model_output: float
    admission_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "admission_id": self.admission_id,
            "base_value": self.base_value,
            "model_output": self.model_output,
            "phi": dict(self.phi),
        }


def _coalition_values(scorer, row, background, masks, chunk_rows: int = 200_000):
    """v(S) for each mask: mean over background rows of the scorer applied to
    rows where masked-in features come from ``row``."""
    background = np.asarray(background, dtype=float)
    row = np.asarray(row, dtype=float)
    n_bg = len(background)
    values = np.empty(len(masks))
    per_mask = n_bg
    step = max(1, chunk_rows // per_mask)
    for start in range(0, len(masks), step):
        batch = masks[start : start + step]
        composite = np.repeat(background[None, :, :], len(batch), axis=0)
        for b, mask in enumerate(batch):
            composite[b, :, mask] = row[mask, None]
        flat = composite.reshape(-1, background.shape[1])
        scores = np.asarray(scorer(flat), dtype=float).reshape(len(batch), n_bg)
        values[start : start + len(batch)] = scores.mean(axis=1)
    return values


def exact_shapley(
    scorer,
    row,
    background,
    feature_names: tuple[str, ...] | None = None,
    admission_id: str | None = None,
) -> Explanation:
    """Exact Shapley values by full coalition enumeration (<= 20 features)."""
    row = np.asarray(row, dtype=float)
    d = len(row)
    if d > EXACT_MAX_FEATURES:
        raise ShapleyError(
            f"{d} features exceeds the exact-enumeration limit "
            f"({EXACT_MAX_FEATURES}); use kernel_shap"
        )
    names = tuple(feature_names) if feature_names else tuple(f"x{i}" for i in range(d))

    masks = [np.zeros(d, dtype=bool)]
    for size in range(1, d + 1):
        for combo in combinations(range(d), size):
            m = np.zeros(d, dtype=bool)
            m[list(combo)] = True
            masks.append(m)
    index = {tuple(m.tolist()): i for i, m in enumerate(masks)}
    values = _coalition_values(scorer, row, np.asarray(background, dtype=float), masks)

    fact = [math.factorial(i) for i in range(d + 1)]
    weights = [fact[s] * fact[d - 1 - s] / fact[d] for s in range(d)]
    phi = np.zeros(d)
    for i, mask in enumerate(masks):
        size = int(mask.sum())
        for feat in range(d):
            if mask[feat]:
                continue
            with_feat = mask.copy()
            with_feat[feat] = True
            j = index[tuple(with_feat.tolist())]
            phi[feat] += weights[size] * (values[j] - values[i])

    base = float(values[0])
    return Explanation(
        feature_names=names,
        base_value=base,
        phi={names[i]: float(phi[i]) for i in range(d)},
        model_output=base + float(phi.sum()),
        admission_id=admission_id,
    )


def _kernel_weight(d: int, size: int) -> float:
    return (d - 1) / (math.comb(d, size) * size * (d - size))


def _sample_masks(d: int, n_interior: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Interior coalition masks, paired with complements, sizes drawn from the
    Shapley kernel's per-size mass."""
    sizes = np.arange(1, d)
    size_mass = (d - 1) / (sizes * (d - sizes))
    size_prob = size_mass / size_mass.sum()
    seen: set[tuple] = set()
    masks: list[np.ndarray] = []
    attempts = 0
    while len(masks) < n_interior and attempts < n_interior * 20:
        attempts += 1
        size = int(rng.choice(sizes, p=size_prob))
        combo = rng.choice(d, size=size, replace=False)
        m = np.zeros(d, dtype=bool)
        m[combo] = True
        for cand in (m, ~m):
            key = tuple(cand.tolist())
            if key not in seen and 0 < cand.sum() < d and len(masks) < n_interior:
                seen.add(key)
                masks.append(cand.copy())
    return masks


def kernel_shap(
    scorer,
    row,
    background,
    n_coalitions: int | None = None,
    seed: int = 0,
    feature_names: tuple[str, ...] | None = None,
    admission_id: str | None = None,
) -> Explanation:
    """Shapley-kernel weighted least squares over sampled coalitions, with the
    empty and full coalitions always included and local accuracy imposed
    exactly. With n_coalitions >= 2^d every coalition is enumerated and the
    result matches exact enumeration."""
    row = np.asarray(row, dtype=float)
    background = np.asarray(background, dtype=float)
    d = len(row)
    names = tuple(feature_names) if feature_names else tuple(f"x{i}" for i in range(d))
    if n_coalitions is None:
        n_coalitions = min(2 * d + 2048, 2**d) if d < 31 else 2 * d + 2048
    if n_coalitions < d + 2:
        raise ShapleyError(f"n_coalitions must be at least d + 2 = {d + 2}")

    empty = np.zeros(d, dtype=bool)
    full = np.ones(d, dtype=bool)
    v_ends = _coalition_values(scorer, row, background, [empty, full])
    base, fx = float(v_ends[0]), float(v_ends[1])

    if d == 1:
        return Explanation(names, base, {names[0]: fx - base}, fx, admission_id)

    exhaustive = d < 31 and n_coalitions >= 2**d
    if exhaustive:
        interior = []
        for size in range(1, d):
            for combo in combinations(range(d), size):
                m = np.zeros(d, dtype=bool)
                m[list(combo)] = True
                interior.append(m)
    else:
        rng = np.random.default_rng(seed)
        interior = _sample_masks(d, n_coalitions - 2, rng)
        grow = n_coalitions - 2
        while len({tuple(m.tolist()) for m in interior}) < 2 and grow < 4 * n_coalitions:
            grow *= 2
            interior = _sample_masks(d, grow, rng)
        if len({tuple(m.tolist()) for m in interior}) < 2:
            raise ShapleyError("degenerate coalition sample: too few distinct coalitions")

    values = _coalition_values(scorer, row, background, interior)
    Z = np.array(interior, dtype=float)
    w = np.array([_kernel_weight(d, int(m.sum())) for m in interior])

    # Impose base + sum(phi) = fx by eliminating the last coefficient.
    ey = values - base - Z[:, -1] * (fx - base)
    etmp = Z[:, :-1] - Z[:, -1:]
    sw = np.sqrt(w)
    A = etmp * sw[:, None]
    b = ey * sw
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    phi = np.empty(d)
    phi[:-1] = coef
    phi[-1] = (fx - base) - coef.sum()

    return Explanation(
        feature_names=names,
        base_value=base,
        phi={names[i]: float(phi[i]) for i in range(d)},
        model_output=fx,
        admission_id=admission_id,
    )


@dataclass(frozen=True)
class GlobalImportance:
    """Cohort-level summary: per-feature mean |phi| with a signed direction
    label, totally ordered (descending magnitude, lexicographic ties)."""

    ranking: tuple[tuple[str, float, str, float], ...]  # (feature, mean|phi|, direction, mean phi)

    def top(self, m: int) -> list[str]:
        return [feat for feat, _, _, _ in self.ranking[:m]]

    def to_dict(self) -> dict:
        return {
            "ranking": [
                {"feature": f, "mean_abs_phi": a, "direction": s, "mean_phi": m}
                for f, a, s, m in self.ranking
            ]
        }


def _check_shared_mask(explanations: list[Explanation]) -> tuple[str, ...]:
    if not explanations:
        raise ShapleyError("need at least one explanation")
    names = explanations[0].feature_names
    for ex in explanations[1:]:
        if ex.feature_names != names:
            raise ShapleyError("explanations computed over different feature masks")
    return names


def global_importance(explanations: list[Explanation]) -> GlobalImportance:
    names = _check_shared_mask(explanations)
    rows = []
    for name in names:
        phis = np.array([ex.phi[name] for ex in explanations])
        mean_abs = float(np.abs(phis).mean())
        if (phis > 0).any() and (phis < 0).any():
            direction = "mixed"
        elif (phis > 0).any():
            direction = "positive"
        elif (phis < 0).any():
            direction = "negative"
        else:
            direction = "neutral"
        rows.append((name, mean_abs, direction, float(phis.mean())))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return GlobalImportance(tuple(rows))


def export_beeswarm(explanations: list[Explanation], matrix) -> list[dict]:
    """Rows (feature, admission, phi, raw feature value) for beeswarm plots.
    ``matrix`` must contain every explained admission and feature column."""
    names = _check_shared_mask(explanations)
    rows = []
    for ex in explanations:
        raw = matrix.row_for(ex.admission_id) if ex.admission_id else None
        for name in names:
            value = None
            if raw is not None:
                value = float(raw[matrix.column_index(name)])
                if math.isnan(value):
                    value = None
            rows.append(
                {
                    "feature": name,
                    "admission_id": ex.admission_id,
                    "phi": ex.phi[name],
                    "value": value,
                }
            )
    return rows


def export_waterfall(explanation: Explanation) -> list[dict]:
    """Contributions sorted by |phi| descending with a cumulative sum that
    starts at the base value and ends at the model output."""
    items = sorted(explanation.phi.items(), key=lambda kv: (-abs(kv[1]), kv[0]))
    cumulative = explanation.base_value
    rows = []
    for name, phi in items:
        cumulative += phi
        rows.append({"feature": name, "phi": phi, "cumulative": cumulative})
    return rows


def write_beeswarm_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "admission_id", "phi", "value"])
        for r in rows:
            writer.writerow(
                [r["feature"], r["admission_id"] or "", f"{r['phi']:.10g}",
                 "" if r["value"] is None else f"{r['value']:.10g}"]
            )


def write_waterfall_csv(path, explanation: Explanation) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "phi", "cumulative"])
        writer.writerow(["<base>", "", f"{explanation.base_value:.10g}"])
        for r in export_waterfall(explanation):
            writer.writerow([r["feature"], f"{r['phi']:.10g}", f"{r['cumulative']:.10g}"])
