"""phenoloop: a patient-identification workbench combining ICD rule cohorts,
ontology-based phenotype extraction, AutoML search, Shapley explanations, and
a clinician-in-the-loop gold-labeling protocol."""

__version__ = "0.1.0"
