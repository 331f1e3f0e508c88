"""Tabular clinical records: codebooks, synthetic sampling, and encoding.

The five features are age, race, injury mechanism, loss of consciousness and
amnesia. The synthetic sampler draws from the fixed label-conditional table
below (also documented in docs/synthetic_data.md); only the two binary
symptoms carry label signal, which makes the clinical-only Bayes-optimal
accuracy computable in closed form (0.75 at prevalence 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnknownCategory

RACE_CODEBOOK = ("A", "B", "C", "D")
MECHANISM_CODEBOOK = ("fall", "assault", "motor-vehicle", "sports", "other")

# Label-conditional probabilities of the two informative binary features.
P_LOC = {1: 0.70, 0: 0.20}       # P(loss_of_consciousness = 1 | label)
P_AMNESIA = {1: 0.60, 0: 0.25}   # P(amnesia = 1 | label)

# Label-independent nuisance features.
AGE_RANGE = (7, 90)  # uniform integers, inclusive
RACE_PROBS = (0.25, 0.25, 0.25, 0.25)
MECHANISM_PROBS = (0.30, 0.15, 0.25, 0.20, 0.10)


@dataclass
class ClinicalRecord:
    age: int
    race: str
    injury_mechanism: str
    loss_of_consciousness: int
    amnesia: int

    def __post_init__(self):
        if self.age < 7:
            raise ValueError(f"age must be >= 7, got {self.age}")
        if self.race not in RACE_CODEBOOK:
            raise UnknownCategory(f"race {self.race!r} not in codebook")
        if self.injury_mechanism not in MECHANISM_CODEBOOK:
            raise UnknownCategory(f"mechanism {self.injury_mechanism!r} not in codebook")
        if self.loss_of_consciousness not in (0, 1):
            raise ValueError("loss_of_consciousness must be 0 or 1")
        if self.amnesia not in (0, 1):
            raise ValueError("amnesia must be 0 or 1")

    def to_dict(self) -> dict:
        return {
            "age": int(self.age),
            "race": self.race,
            "injury_mechanism": self.injury_mechanism,
            "loss_of_consciousness": int(self.loss_of_consciousness),
            "amnesia": int(self.amnesia),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClinicalRecord":
        return cls(
            age=int(d["age"]),
            race=d["race"],
            injury_mechanism=d["injury_mechanism"],
            loss_of_consciousness=int(d["loss_of_consciousness"]),
            amnesia=int(d["amnesia"]),
        )


def generate_clinical(label: int, seed) -> ClinicalRecord:
    """Sample one record from the documented label-conditional table.

    ``seed`` may be an int or a numpy SeedSequence. Draw order is fixed
    (age, race, mechanism, LOC, amnesia) so records are reproducible.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    age = int(rng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1))
    race = RACE_CODEBOOK[rng.choice(len(RACE_CODEBOOK), p=RACE_PROBS)]
    mech = MECHANISM_CODEBOOK[rng.choice(len(MECHANISM_CODEBOOK), p=MECHANISM_PROBS)]
    loc = int(rng.random() < P_LOC[label])
    amnesia = int(rng.random() < P_AMNESIA[label])
    return ClinicalRecord(age, race, mech, loc, amnesia)


def bayes_optimal_accuracy(prevalence: float = 0.5) -> float:
    """Closed-form accuracy of the optimal clinical-only classifier.

    Age, race and mechanism are label-independent by construction, so the
    optimum depends only on the (LOC, amnesia) cell: sum over cells of
    max(prev * P(cell|+), (1-prev) * P(cell|-)).
    """
    acc = 0.0
    for loc in (0, 1):
        for amn in (0, 1):
            p_pos = (P_LOC[1] if loc else 1 - P_LOC[1]) * (
                P_AMNESIA[1] if amn else 1 - P_AMNESIA[1]
            )
            p_neg = (P_LOC[0] if loc else 1 - P_LOC[0]) * (
                P_AMNESIA[0] if amn else 1 - P_AMNESIA[0]
            )
            acc += max(prevalence * p_pos, (1 - prevalence) * p_neg)
    return acc


@dataclass
class EncodingSchema:
    """Feature-vector layout: scaled age, one-hot race/mechanism, two binaries."""

    age_bounds: tuple[float, float] = (7.0, 100.0)
    race_codebook: tuple[str, ...] = RACE_CODEBOOK
    mechanism_codebook: tuple[str, ...] = MECHANISM_CODEBOOK

    @property
    def length(self) -> int:
        return 1 + len(self.race_codebook) + len(self.mechanism_codebook) + 2

    def to_dict(self) -> dict:
        return {
            "age_bounds": list(self.age_bounds),
            "race_codebook": list(self.race_codebook),
            "mechanism_codebook": list(self.mechanism_codebook),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingSchema":
        return cls(
            age_bounds=tuple(d["age_bounds"]),
            race_codebook=tuple(d["race_codebook"]),
            mechanism_codebook=tuple(d["mechanism_codebook"]),
        )


def encode_clinical(
    record: ClinicalRecord, schema: EncodingSchema | None = None
) -> np.ndarray:
    """Encode a record as a float vector: [age, race 1-hot, mech 1-hot, LOC, amnesia]."""
    s = schema or EncodingSchema()
    lo, hi = s.age_bounds
    vec = np.zeros(s.length, dtype=np.float64)
    vec[0] = (record.age - lo) / (hi - lo)
    try:
        r = s.race_codebook.index(record.race)
    except ValueError:
        raise UnknownCategory(f"race {record.race!r} not in schema codebook")
    vec[1 + r] = 1.0
    try:
        m = s.mechanism_codebook.index(record.injury_mechanism)
    except ValueError:
        raise UnknownCategory(
            f"mechanism {record.injury_mechanism!r} not in schema codebook"
        )
    vec[1 + len(s.race_codebook) + m] = 1.0
    vec[-2] = float(record.loss_of_consciousness)
    vec[-1] = float(record.amnesia)
    return vec
