"""
Cohort selection from ICD codes and leakage-safe splitting
==========================================================

Walks the corpus layer: parsing newline-delimited admission records,
normalizing units, applying the built-in disease rule sets, and producing a
patient-disjoint train/test split.
"""

import json

from phenoloop.corpus import (
    StructuredFeatureCatalog,
    StructuredObservation,
    apply_icd_criteria,
    builtin_criteria,
    normalize_observation,
    parse_corpus,
    split_by_patient,
)

# A corpus file is one JSON object per line. Build three small records inline.
records = [
    {
        "admission_id": "A1",
        "patient_id": "P1",
        "icd_codes": ["162.9", "799.4"],
        "note_text": "Patient reports cachexia and weight loss.",
        "observations": [{"feature": "temperature", "t": 0, "value": 98.6, "unit": "F"}],
    },
    {
        "admission_id": "A2",
        "patient_id": "P1",
        "icd_codes": ["162.9"],
        "note_text": "Feeling well. No weight loss.",
        "observations": [{"feature": "weight", "t": 0, "value": 154.32, "unit": "lb"}],
    },
    {
        "admission_id": "A3",
        "patient_id": "P2",
        "icd_codes": ["799.4"],
        "note_text": "",
        "observations": [],
    },
]
corpus = parse_corpus(json.dumps(r) for r in records)
print(f"parsed {len(corpus)} admissions")

# Unit normalization converts aliases to the canonical unit and rejects
# implausible values (negative temperatures, tonne-scale weights).
catalog = StructuredFeatureCatalog.default()
fahrenheit = StructuredObservation("temperature", 0, 98.6, "F")
print("98.6 F ->", normalize_observation(fahrenheit, catalog).value, "C")
junk = StructuredObservation("temperature", 0, -3_000_000.0, "C")
print("junk value ->", normalize_observation(junk, catalog))

# The cachexia rule set needs a cancer code as background: A1 is Positive
# (cancer + cachexia code), A2 Negative (cancer only), A3 Excluded (no
# background), so it lands in neither cohort.
criteria = builtin_criteria()["Cancer Cachexia"]
for adm in corpus:
    print(adm.admission_id, sorted(adm.icd_codes), "->", apply_icd_criteria(adm, criteria).value)

# Patient-disjoint split: both of P1's admissions land on the same side.
split = split_by_patient(corpus, train_fraction=0.5, seed=7)
print("train:", sorted(split.train_ids), "test:", sorted(split.test_ids))
