"""Deterministic synthetic EHR corpus generator and simulated clinician oracle.

Notes are assembled from a template bank whose surface forms come from the
same ontology/lexicon fixtures the default extractor uses, so extractor
recall on generated sentences is exactly measurable.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources

from .corpus import EhrAdmission, StructuredObservation
from .ontology import default_matcher, default_ontology

__all__ = [
    "SynthConfigError",
    "DiseaseProfile",
    "GroundTruth",
    "generate_corpus",
    "oracle_diagnosis",
    "oracle_feature_verdict",
    "load_profile",
    "builtin_profile",
    "BUILTIN_PROFILE_FILES",
]


class SynthConfigError(ValueError):
    """Invalid generator configuration."""


# Baseline Gaussians for the 17 structured features (canonical units).
STRUCTURED_BASELINES: dict[str, tuple[float, float]] = {
    "capillary_refill": (0.5, 0.2),
    "diastolic_bp": (70.0, 12.0),
    "systolic_bp": (120.0, 18.0),
    "mean_bp": (85.0, 12.0),
    "fio2": (0.5, 0.12),
    "gcs_eye": (3.5, 0.6),
    "gcs_motor": (5.5, 0.7),
    "gcs_verbal": (4.0, 0.8),
    "gcs_total": (13.0, 1.5),
    "glucose": (130.0, 40.0),
    "heart_rate": (85.0, 15.0),
    "height": (170.0, 12.0),
    "o2_saturation": (95.0, 2.5),
    "ph": (7.4, 0.08),
    "respiratory_rate": (18.0, 4.0),
    "temperature": (37.0, 0.7),
    "weight": (80.0, 15.0),
}

# Alias-unit emission: (alias unit, canonical -> alias transform).
_ALIAS_EMITTERS = {
    "temperature": ("F", lambda c: c * 9.0 / 5.0 + 32.0),
    "weight": ("lb", lambda kg: kg / 0.45359237),
    "height": ("in", lambda cm: cm / 2.54),
}

_AFFIRM_TEMPLATES = (
    "Patient reports {p}.",
    "Exam notable for {p}.",
    "Clinical course complicated by {p}.",
    "Assessment documents {p} during the stay.",
    "Interval development of {p}.",
    "Findings consistent with {p}.",
)

_NEGATED_TEMPLATES = (
    "No evidence of {p}.",
    "Patient denies {p}.",
    "No {p} on imaging.",
    "Without {p}.",
)

_FILLER_SENTENCES = (
    "Vital signs reviewed overnight.",
    "Medications reconciled at discharge.",
    "Plan discussed with the family.",
    "Follow up arranged with primary care.",
    "Tolerating a regular diet.",
    "Ambulating independently in the hallway.",
)

_FILLER_ICD_CODES = ("401.9", "428.0", "276.2", "285.9", "584.9", "250.0", "272.4", "599.0")


@dataclass(frozen=True)
class DiseaseProfile:
    """Generative model for one disease: what positives and negatives look
    like in notes, observations, and (noisily) in ICD codes."""

    disease: str
    criteria_key: str
    positive_phenotypes: tuple[tuple[str, float], ...]
    distractor_phenotypes: tuple[tuple[str, float], ...]
    structured_shift: dict[str, float] = field(default_factory=dict)
    icd_positive_codes: tuple[str, ...] = ()
    icd_background_codes: tuple[str, ...] = ()
    miscode_fn_rate: float = 0.0
    miscode_fp_rate: float = 0.0
    oracle_noise: float = 0.0

    def __post_init__(self) -> None:
        for _, p in self.positive_phenotypes + self.distractor_phenotypes:
            if not 0.0 <= p <= 1.0:
                raise SynthConfigError(f"emission probability {p} outside [0, 1]")
        for rate in (self.miscode_fn_rate, self.miscode_fp_rate, self.oracle_noise):
            if not 0.0 <= rate <= 1.0:
                raise SynthConfigError(f"rate {rate} outside [0, 1]")
        pos = {h for h, _ in self.positive_phenotypes}
        dis = {h for h, _ in self.distractor_phenotypes}
        if pos & dis:
            raise SynthConfigError(f"phenotype sets overlap: {sorted(pos & dis)}")

    @property
    def positive_ids(self) -> frozenset[str]:
        return frozenset(h for h, _ in self.positive_phenotypes)

    @property
    def distractor_ids(self) -> frozenset[str]:
        return frozenset(h for h, _ in self.distractor_phenotypes)

    def to_dict(self) -> dict:
        return {
            "disease": self.disease,
            "criteria": self.criteria_key,
            "positive_phenotypes": [[h, p] for h, p in self.positive_phenotypes],
            "distractor_phenotypes": [[h, p] for h, p in self.distractor_phenotypes],
            "structured_shift": dict(self.structured_shift),
            "icd_positive_codes": list(self.icd_positive_codes),
            "icd_background_codes": list(self.icd_background_codes),
            "miscode_fn_rate": self.miscode_fn_rate,
            "miscode_fp_rate": self.miscode_fp_rate,
            "oracle_noise": self.oracle_noise,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DiseaseProfile":
        return cls(
            disease=raw["disease"],
            criteria_key=raw.get("criteria", raw["disease"]),
            positive_phenotypes=tuple((h, float(p)) for h, p in raw["positive_phenotypes"]),
            distractor_phenotypes=tuple(
                (h, float(p)) for h, p in raw.get("distractor_phenotypes", [])
            ),
            structured_shift={k: float(v) for k, v in raw.get("structured_shift", {}).items()},
            icd_positive_codes=tuple(raw.get("icd_positive_codes", [])),
            icd_background_codes=tuple(raw.get("icd_background_codes", [])),
            miscode_fn_rate=float(raw.get("miscode_fn_rate", 0.0)),
            miscode_fp_rate=float(raw.get("miscode_fp_rate", 0.0)),
            oracle_noise=float(raw.get("oracle_noise", 0.0)),
        )


@dataclass
class GroundTruth:
    """Per-admission generation record: the label the simulated clinicians
    answer with, the phenotypes actually written into the note, and whether
    the ICD codes were corrupted."""

    records: dict[str, dict]
    oracle_noise: float = 0.0
    seed: int = 0

    def __contains__(self, admission_id: str) -> bool:
        return admission_id in self.records

    def true_label(self, admission_id: str) -> bool:
        return bool(self.records[admission_id]["true_label"])

    def to_dict(self) -> dict:
        return {"oracle_noise": self.oracle_noise, "seed": self.seed, "records": self.records}

    @classmethod
    def from_dict(cls, raw: dict) -> "GroundTruth":
        return cls(
            records=raw["records"],
            oracle_noise=float(raw.get("oracle_noise", 0.0)),
            seed=int(raw.get("seed", 0)),
        )


def _surface_forms() -> dict[str, list[str]]:
    """hpo id -> usable surface phrases, from the shared fixture data."""
    forms: dict[str, list[str]] = {}
    for term in default_ontology().terms.values():
        forms.setdefault(term.id, []).append(term.name)
        forms[term.id].extend(term.synonyms)
    data = resources.files("phenoloop.data")
    for raw in data.joinpath("lexicon.tsv").read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        phrase, hpo_id = raw.split("\t")
        forms.setdefault(hpo_id.strip(), []).append(phrase.strip())
    return forms


def _affirm_sentence(rng: random.Random, forms: dict[str, list[str]], hpo_id: str) -> str:
    phrase = rng.choice(forms[hpo_id])
    return rng.choice(_AFFIRM_TEMPLATES).format(p=phrase)


def _negated_sentence(rng: random.Random, forms: dict[str, list[str]], hpo_id: str) -> str:
    phrase = rng.choice(forms[hpo_id])
    return rng.choice(_NEGATED_TEMPLATES).format(p=phrase)


def generate_corpus(
    profile: DiseaseProfile, n_admissions: int, prevalence: float, seed: int
) -> tuple[list[EhrAdmission], GroundTruth]:
    """Generate ``n_admissions`` synthetic admissions with
    ``floor(prevalence * n)`` true positives, fully deterministic under seed."""
    if n_admissions < 1:
        raise SynthConfigError("n_admissions must be >= 1")
    if not 0.0 < prevalence < 1.0:
        raise SynthConfigError("prevalence must be in (0, 1)")
    n_pos = math.floor(prevalence * n_admissions)
    if n_pos < 1:
        raise SynthConfigError(
            f"prevalence {prevalence} on {n_admissions} admissions yields no positives"
        )

    rng = random.Random(seed)
    forms = _surface_forms()
    positive_slots = set(rng.sample(range(n_admissions), n_pos))

    admissions: list[EhrAdmission] = []
    records: dict[str, dict] = {}
    patient_ids: list[str] = []

    for i in range(n_admissions):
        admission_id = f"A{i:06d}"
        # ~12% of admissions are repeat visits of an earlier patient
        if patient_ids and rng.random() < 0.12:
            patient_id = rng.choice(patient_ids)
        else:
            patient_id = f"P{len(patient_ids):06d}"
            patient_ids.append(patient_id)

        positive = i in positive_slots
        sentences = ["Discharge summary."]
        emitted: list[str] = []

        if positive:
            for hpo_id, p in profile.positive_phenotypes:
                if rng.random() < p:
                    sentences.append(_affirm_sentence(rng, forms, hpo_id))
                    emitted.append(hpo_id)
            for hpo_id, _ in profile.distractor_phenotypes:
                if rng.random() < 0.3:
                    sentences.append(_negated_sentence(rng, forms, hpo_id))
        else:
            for hpo_id, p in profile.distractor_phenotypes:
                if rng.random() < p:
                    sentences.append(_affirm_sentence(rng, forms, hpo_id))
                    emitted.append(hpo_id)
            for hpo_id, _ in profile.positive_phenotypes:
                if rng.random() < 0.25:
                    sentences.append(_negated_sentence(rng, forms, hpo_id))

        for _ in range(rng.randint(1, 3)):
            sentences.append(rng.choice(_FILLER_SENTENCES))
        note = " ".join(sentences)

        observations: list[StructuredObservation] = []
        t = 0
        for feature, (mean, sd) in STRUCTURED_BASELINES.items():
            if rng.random() >= 0.75:
                continue  # feature unobserved this admission
            shift = profile.structured_shift.get(feature, 0.0) if positive else 0.0
            for _ in range(rng.randint(1, 3)):
                value = rng.gauss(mean + shift, sd)
                unit = None
                if feature in _ALIAS_EMITTERS and rng.random() < 0.25:
                    alias, transform = _ALIAS_EMITTERS[feature]
                    observations.append(
                        StructuredObservation(feature, t, round(transform(value), 4), alias)
                    )
                else:
                    observations.append(StructuredObservation(feature, t, round(value, 4), ""))
                t += 1
        # occasional data-entry junk, removed later by plausibility screening
        if rng.random() < 0.01:
            observations.append(StructuredObservation("temperature", t, -3000000.0, ""))
            t += 1

        codes: set[str] = set(profile.icd_background_codes)
        miscoded = False
        if positive:
            if rng.random() < profile.miscode_fn_rate:
                miscoded = True  # positive codes dropped
            else:
                codes.update(profile.icd_positive_codes)
        else:
            if rng.random() < profile.miscode_fp_rate:
                codes.update(profile.icd_positive_codes)
                miscoded = True
        for _ in range(rng.randint(0, 2)):
            codes.add(rng.choice(_FILLER_ICD_CODES))

        admissions.append(
            EhrAdmission(
                admission_id=admission_id,
                patient_id=patient_id,
                icd_codes=frozenset(codes),
                note_text=note,
                observations=tuple(observations),
            )
        )
        records[admission_id] = {
            "true_label": positive,
            "phenotypes": sorted(set(emitted)),
            "miscoded": miscoded,
        }

    gt = GroundTruth(records=records, oracle_noise=profile.oracle_noise, seed=seed)
    return admissions, gt


def oracle_diagnosis(gt: GroundTruth, admission_id: str) -> bool:
    """Simulated clinician consensus: the generative label, optionally flipped
    with the configured oracle noise (deterministic per admission)."""
    if admission_id not in gt.records:
        raise KeyError(f"unknown admission {admission_id!r}")
    label = gt.true_label(admission_id)
    if gt.oracle_noise > 0.0:
        digest = hashlib.sha256(f"{gt.seed}:{admission_id}".encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2**64
        if u < gt.oracle_noise:
            label = not label
    return label


def oracle_feature_verdict(profile: DiseaseProfile, feature_name: str) -> str:
    """Relevant for positive-profile phenotypes and shifted structured
    features; Irrelevant for everything else (including distractors)."""
    if feature_name in profile.positive_ids:
        return "Relevant"
    if profile.structured_shift.get(feature_name, 0.0) != 0.0:
        return "Relevant"
    return "Irrelevant"


BUILTIN_PROFILE_FILES = {
    "Ovarian Cancer": "ovarian_cancer.json",
    "Lung Cancer": "lung_cancer.json",
    "Cancer Cachexia": "cancer_cachexia.json",
    "Lupus Nephritis": "lupus_nephritis.json",
}


def builtin_profile(disease: str) -> DiseaseProfile:
    try:
        fname = BUILTIN_PROFILE_FILES[disease]
    except KeyError:
        raise SynthConfigError(
            f"no built-in profile for {disease!r}; choose one of {sorted(BUILTIN_PROFILE_FILES)}"
        ) from None
    raw = resources.files("phenoloop.data.profiles").joinpath(fname).read_text(encoding="utf-8")
    return DiseaseProfile.from_dict(json.loads(raw))


def load_profile(path) -> DiseaseProfile:
    with open(path, encoding="utf-8") as fh:
        return DiseaseProfile.from_dict(json.load(fh))
