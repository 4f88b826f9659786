"""EHR corpus model: admissions, ICD cohort criteria, unit normalization,
admission-level aggregation, and patient-disjoint train/test splitting.

Corpus files are UTF-8 newline-delimited JSON, one admission per line with
fields ``admission_id``, ``patient_id``, ``icd_codes``, ``note_text`` and
``observations`` (list of ``{feature, t, value, unit}``).
"""

from __future__ import annotations

import json
import random
import re
import warnings
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Callable, Iterable, TextIO

__all__ = [
    "CorpusError",
    "CatalogError",
    "UnitError",
    "Rejected",
    "Verdict",
    "StructuredObservation",
    "CatalogEntry",
    "StructuredFeatureCatalog",
    "EhrAdmission",
    "DiseaseCriteria",
    "DatasetSplit",
    "normalize_icd_code",
    "is_subcode",
    "parse_corpus",
    "load_corpus_file",
    "normalize_observation",
    "aggregate_admission",
    "apply_icd_criteria",
    "builtin_criteria",
    "split_by_patient",
]


class CorpusError(ValueError):
    """Malformed corpus input (bad line, duplicate admission, bad code)."""


class CatalogError(KeyError):
    """Feature key not present in the structured-feature catalog."""


class UnitError(ValueError):
    """Unit tag is neither canonical nor a registered alias."""


# ICD-9 style: three leading characters (all digits, or V/E plus digits),
# optionally a dot and one or two further digits.
_ICD_RE = re.compile(r"^(?:\d{3}|[VE]\d{2})(?:\.\d{1,2})?$")


def normalize_icd_code(code: str) -> str:
    """Uppercase, strip whitespace, and validate an ICD-9 code string."""
    norm = "".join(code.split()).upper()
    if not _ICD_RE.match(norm):
        raise CorpusError(f"invalid ICD code: {code!r}")
    return norm


def is_subcode(code: str, parent: str) -> bool:
    """True when ``code`` equals ``parent`` or refines it under dotted-prefix
    semantics: "162.9" is a subcode of "162", "1629" is not, and "580.81"
    is a subcode of "580.8"."""
    c_root, _, c_sub = code.partition(".")
    p_root, _, p_sub = parent.partition(".")
    return c_root == p_root and c_sub.startswith(p_sub)


def _root_in_range(code: str, lo: int, hi: int) -> bool:
    root = code.partition(".")[0]
    return root.isdigit() and lo <= int(root) <= hi


@dataclass(frozen=True)
class StructuredObservation:
    """One timestamped numeric measurement inside an admission."""

    feature: str
    t: int
    value: float
    unit: str


@dataclass(frozen=True)
class Rejected:
    """Outcome of normalization when the converted value is implausible."""

    observation: StructuredObservation
    reason: str


@dataclass(frozen=True)
class CatalogEntry:
    key: str
    canonical_unit: str
    lo: float
    hi: float
    # alias unit -> (scale, offset): canonical = value * scale + offset
    aliases: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise CatalogError(f"{self.key}: plausible range must satisfy lo < hi")
        for alias, (scale, _) in self.aliases.items():
            if scale == 0:
                raise CatalogError(f"{self.key}: alias {alias!r} has scale 0")


class StructuredFeatureCatalog:
    """The configured set of structured clinical features with units,
    plausibility ranges and convertible unit aliases."""

    def __init__(self, entries: Iterable[CatalogEntry]):
        self.entries: dict[str, CatalogEntry] = {}
        for entry in entries:
            if entry.key in self.entries:
                raise CatalogError(f"duplicate catalog key {entry.key!r}")
            self.entries[entry.key] = entry

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def keys(self) -> list[str]:
        return list(self.entries)

    def __getitem__(self, key: str) -> CatalogEntry:
        try:
            return self.entries[key]
        except KeyError:
            raise CatalogError(f"unknown structured feature {key!r}") from None

    @classmethod
    def from_dict(cls, raw: dict) -> "StructuredFeatureCatalog":
        entries = []
        for item in raw["entries"]:
            entries.append(
                CatalogEntry(
                    key=item["key"],
                    canonical_unit=item["unit"],
                    lo=float(item["range"][0]),
                    hi=float(item["range"][1]),
                    aliases={
                        u: (float(s), float(o))
                        for u, (s, o) in item.get("aliases", {}).items()
                    },
                )
            )
        return cls(entries)

    @classmethod
    def from_file(cls, path) -> "StructuredFeatureCatalog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "StructuredFeatureCatalog":
        raw = resources.files("phenoloop.data").joinpath("structured_catalog.json")
        return cls.from_dict(json.loads(raw.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class EhrAdmission:
    """One hospital admission: ICD codes, a discharge-summary style note,
    and raw structured observations."""

    admission_id: str
    patient_id: str
    icd_codes: frozenset[str]
    note_text: str
    observations: tuple[StructuredObservation, ...]

    def __post_init__(self) -> None:
        if not self.patient_id:
            raise CorpusError(f"admission {self.admission_id!r}: empty patient_id")

    def to_record(self) -> dict:
        return {
            "admission_id": self.admission_id,
            "patient_id": self.patient_id,
            "icd_codes": sorted(self.icd_codes),
            "note_text": self.note_text,
            "observations": [
                {"feature": o.feature, "t": o.t, "value": o.value, "unit": o.unit}
                for o in self.observations
            ],
        }


def _admission_from_record(rec: dict) -> EhrAdmission:
    codes = frozenset(normalize_icd_code(c) for c in rec["icd_codes"])
    obs = tuple(
        StructuredObservation(
            feature=o["feature"], t=int(o["t"]), value=float(o["value"]), unit=o["unit"]
        )
        for o in rec.get("observations", [])
    )
    return EhrAdmission(
        admission_id=str(rec["admission_id"]),
        patient_id=str(rec["patient_id"]),
        icd_codes=codes,
        note_text=rec.get("note_text", ""),
        observations=obs,
    )


def parse_corpus(stream: Iterable[str] | TextIO) -> list[EhrAdmission]:
    """Parse newline-delimited admission records, preserving input order.

    Raises CorpusError with the offending line number on malformed input,
    and on duplicate admission ids.
    """
    admissions: list[EhrAdmission] = []
    seen: set[str] = set()
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            adm = _admission_from_record(rec)
        except CorpusError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"line {lineno}: malformed record ({exc})") from exc
        if adm.admission_id in seen:
            raise CorpusError(f"line {lineno}: duplicate admission_id {adm.admission_id!r}")
        seen.add(adm.admission_id)
        admissions.append(adm)
    return admissions


def load_corpus_file(path) -> list[EhrAdmission]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def write_corpus_file(path, admissions: Iterable[EhrAdmission]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for adm in admissions:
            fh.write(json.dumps(adm.to_record(), sort_keys=True) + "\n")


def normalize_observation(
    obs: StructuredObservation, catalog: StructuredFeatureCatalog
) -> StructuredObservation | Rejected:
    """Convert an observation to its catalog's canonical unit.

    An empty unit tag is taken as already-canonical. Values landing outside
    the plausible range after conversion come back as Rejected; unknown
    features or units raise.
    """
    entry = catalog[obs.feature]
    if obs.unit == entry.canonical_unit or obs.unit == "":
        value = obs.value
    elif obs.unit in entry.aliases:
        scale, offset = entry.aliases[obs.unit]
        value = obs.value * scale + offset
    else:
        raise UnitError(f"{obs.feature}: unknown unit {obs.unit!r}")
    converted = StructuredObservation(obs.feature, obs.t, value, entry.canonical_unit)
    if not entry.lo <= value <= entry.hi:
        return Rejected(converted, f"out-of-range value {value!r} for {obs.feature}")
    return converted


def aggregate_admission(observations: Iterable[StructuredObservation]) -> dict[str, float]:
    """Arithmetic mean per feature over already-normalized observations.

    Features with no retained observations are simply absent (imputed later).
    """
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for obs in observations:
        sums[obs.feature] = sums.get(obs.feature, 0.0) + obs.value
        counts[obs.feature] = counts.get(obs.feature, 0) + 1
    return {k: sums[k] / counts[k] for k in sums}


class Verdict(Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    EXCLUDED = "Excluded"


CodePredicate = Callable[[frozenset[str]], bool]


@dataclass(frozen=True)
class DiseaseCriteria:
    """ICD rule set defining a disease cohort.

    Admissions failing the background predicate (when present) are Excluded
    from both cohorts; otherwise the inclusion predicate decides Positive vs
    Negative.
    """

    disease: str
    inclusion: CodePredicate
    exclusion: CodePredicate
    background: CodePredicate | None = None


def apply_icd_criteria(admission: EhrAdmission, criteria: DiseaseCriteria) -> Verdict:
    codes = admission.icd_codes
    if criteria.background is not None and not criteria.background(codes):
        return Verdict.EXCLUDED
    if criteria.inclusion(codes):
        return Verdict.POSITIVE
    return Verdict.NEGATIVE


def _any_subcode(root: str) -> CodePredicate:
    return lambda codes: any(is_subcode(c, root) for c in codes)


def _has_cancer_code(codes: frozenset[str]) -> bool:
    return any(_root_in_range(c, 140, 239) for c in codes)


def _cachexia_codes(codes: frozenset[str]) -> bool:
    return any(is_subcode(c, "799.3") or is_subcode(c, "799.4") for c in codes)


def _lupus_nephritis(codes: frozenset[str]) -> bool:
    return any(is_subcode(c, "710.0") for c in codes) and any(
        is_subcode(c, "580") for c in codes
    )


def builtin_criteria() -> dict[str, DiseaseCriteria]:
    """The four built-in disease rule sets, keyed by disease name."""
    ovarian = _any_subcode("183.0")
    lung = _any_subcode("162")
    return {
        "Ovarian Cancer": DiseaseCriteria(
            "Ovarian Cancer",
            inclusion=ovarian,
            exclusion=lambda c: not ovarian(c),
        ),
        "Lung Cancer": DiseaseCriteria(
            "Lung Cancer",
            inclusion=lung,
            exclusion=lambda c: not lung(c),
        ),
        "Cancer Cachexia": DiseaseCriteria(
            "Cancer Cachexia",
            inclusion=lambda c: _has_cancer_code(c) and _cachexia_codes(c),
            exclusion=lambda c: _has_cancer_code(c) and not _cachexia_codes(c),
            background=_has_cancer_code,
        ),
        "Lupus Nephritis": DiseaseCriteria(
            "Lupus Nephritis",
            inclusion=_lupus_nephritis,
            exclusion=lambda c: not _lupus_nephritis(c),
        ),
    }


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: frozenset[str]
    test_ids: frozenset[str]


def split_by_patient(
    corpus: list[EhrAdmission], train_fraction: float, seed: int
) -> DatasetSplit:
    """Patient-disjoint split: patients are shuffled deterministically by seed
    and packed greedily into the training side until its admission count
    reaches ``train_fraction`` of the total."""
    if not corpus:
        raise CorpusError("cannot split an empty corpus")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")

    by_patient: dict[str, list[str]] = {}
    for adm in corpus:
        by_patient.setdefault(adm.patient_id, []).append(adm.admission_id)

    patients = sorted(by_patient)
    if len(patients) == 1:
        warnings.warn(
            "single-patient corpus: degenerate split, all admissions assigned to train",
            stacklevel=2,
        )
        return DatasetSplit(frozenset(a.admission_id for a in corpus), frozenset())

    random.Random(seed).shuffle(patients)
    target = train_fraction * len(corpus)
    train: set[str] = set()
    test: set[str] = set()
    count = 0
    for patient in patients:
        if count < target:
            train.update(by_patient[patient])
            count += len(by_patient[patient])
        else:
            test.update(by_patient[patient])
    return DatasetSplit(frozenset(train), frozenset(test))
