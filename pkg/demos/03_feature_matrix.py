"""
From admissions to a design matrix
==================================

Generates a small synthetic corpus, assembles the named-column matrix
(binary phenotype columns + aggregated structured features), fits the
train-only imputer, and ranks columns by mutual information with the labels.
"""

import numpy as np

from phenoloop.corpus import StructuredFeatureCatalog
from phenoloop.features import apply_imputer, build_matrix, fit_imputer, select_top_k
from phenoloop.ontology import default_matcher
from phenoloop.synth import builtin_profile, generate_corpus

profile = builtin_profile("Ovarian Cancer")
corpus, truth = generate_corpus(profile, n_admissions=200, prevalence=0.2, seed=3)

matrix = build_matrix(corpus, default_matcher(), StructuredFeatureCatalog.default())
print(f"matrix: {matrix.n_rows} rows x {len(matrix.column_names)} columns")
print(f"structured missingness: {matrix.missing.mean():.1%} of all cells")

# Imputation statistics come from training rows only; applying them leaves no
# missing cells and z-scores the structured columns.
train = matrix.restrict_rows(matrix.admission_ids[:150])
imputer = fit_imputer(train)
completed = apply_imputer(imputer, matrix)
assert not np.isnan(completed.values).any()

labels = np.array([truth.true_label(a) for a in matrix.admission_ids], dtype=int)
mask = select_top_k(completed, labels, k=8, method="mutual_information")
print("top-8 columns by mutual information:")
for name in sorted(mask.active):
    marker = "  <- profile phenotype" if name in profile.positive_ids else ""
    print(f"  {name}{marker}")
