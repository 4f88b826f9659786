"""
Shapley attributions: exact enumeration vs the kernel solver
============================================================

For small feature counts the exact coalition enumeration is affordable and
serves as the oracle; the kernel-weighted least-squares path scales further
and reproduces it exactly under full enumeration.
"""

import numpy as np

from phenoloop.shapley import (
    exact_shapley,
    export_waterfall,
    global_importance,
    kernel_shap,
)

# A linear scorer has a closed-form answer: phi_i = w_i * (x_i - background_i).
scorer = lambda X: np.asarray(X) @ np.array([2.0, 3.0, 0.0])
row = np.array([1.0, 1.0, 5.0])
background = np.zeros((1, 3))

exact = exact_shapley(scorer, row, background, feature_names=("a", "b", "dummy"))
print("exact phi:", {k: round(v, 6) for k, v in exact.phi.items()})
# the dummy feature (weight 0) gets exactly zero attribution

kernel = kernel_shap(scorer, row, background, n_coalitions=8, feature_names=("a", "b", "dummy"))
print("kernel phi:", {k: round(v, 6) for k, v in kernel.phi.items()})

# Local accuracy: base + sum(phi) telescopes to the model output.
rows = export_waterfall(exact)
print("waterfall:")
for r in rows:
    print(f"  {r['feature']:>6}  phi={r['phi']:+.3f}  cumulative={r['cumulative']:.3f}")
print("model output:", exact.model_output)

# Cohort-level ranking: mean |phi| with a direction summary.
batch = [
    kernel_shap(scorer, r, background, n_coalitions=8, feature_names=("a", "b", "dummy"))
    for r in np.random.default_rng(0).normal(size=(20, 3))
]
ranking = global_importance(batch)
for feature, mean_abs, direction, _ in ranking.ranking:
    print(f"  {feature:>6}  mean|phi|={mean_abs:.3f}  {direction}")
