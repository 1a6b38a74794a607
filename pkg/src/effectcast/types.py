"""Shared domain vocabulary: estimates, queries, structured representations,
predictions, and the significance classifier.

Everything here is an immutable value object, safe to share between threads.
The JSON field names used by ``to_dict``/``from_dict`` are the interchange
schema consumed and produced by every other module.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping


class SignificanceClass(str, Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NON_SIGNIFICANT = "NonSignificant"


def classify_significance(ci_lower: float, ci_upper: float) -> SignificanceClass:
    """Three-way significance class of a 95% confidence interval.

    Positive iff the whole interval is above zero, Negative iff below zero,
    NonSignificant iff the interval contains zero (boundaries included).
    """
    if ci_lower > ci_upper:
        raise ValueError(f"malformed interval: ci_lower {ci_lower} > ci_upper {ci_upper}")
    if ci_lower > 0:
        return SignificanceClass.POSITIVE
    if ci_upper < 0:
        return SignificanceClass.NEGATIVE
    return SignificanceClass.NON_SIGNIFICANT


_LEVEL_NAMES = ("I", "A", "U")


class Implicitness(str, Enum):
    I0 = "I0"
    I1 = "I1"
    I2 = "I2"
    I3 = "I3"


class Abstraction(str, Enum):
    A0 = "A0"
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"


class Ambiguity(str, Enum):
    U0 = "U0"
    U1 = "U1"
    U2 = "U2"
    U3 = "U3"


@dataclass(frozen=True)
class SpecificityProfile:
    """Point in the implicitness/abstraction/ambiguity grid.

    Arbitrary combinations are representable; the generation pipeline only
    ever produces the four canonical diagonals (level 0..3).
    """

    implicitness: Implicitness
    abstraction: Abstraction
    ambiguity: Ambiguity

    @classmethod
    def canonical(cls, level: int) -> "SpecificityProfile":
        if level not in (0, 1, 2, 3):
            raise ValueError(f"no canonical profile for level {level}")
        return cls(
            Implicitness(f"I{level}"),
            Abstraction(f"A{level}"),
            Ambiguity(f"U{level}"),
        )

    @property
    def is_canonical(self) -> bool:
        return (
            self.implicitness.value[1]
            == self.abstraction.value[1]
            == self.ambiguity.value[1]
        )

    @property
    def level(self) -> int | None:
        """Shared diagonal index, or None for non-canonical combinations."""
        return int(self.implicitness.value[1]) if self.is_canonical else None

    @classmethod
    def from_codes(cls, implicitness: str, abstraction: str, ambiguity: str) -> "SpecificityProfile":
        try:
            return cls(Implicitness(implicitness), Abstraction(abstraction), Ambiguity(ambiguity))
        except ValueError as exc:
            raise ValueError(f"unknown specificity code: {exc}") from None

    def to_dict(self) -> dict[str, str]:
        return {
            "implicitness": self.implicitness.value,
            "abstraction": self.abstraction.value,
            "ambiguity": self.ambiguity.value,
        }


CANONICAL_PROFILES = tuple(SpecificityProfile.canonical(level) for level in range(4))


@dataclass(frozen=True)
class Estimate:
    """One RCT intervention-outcome pair with its standardized effect size.

    ``ci_lower``/``ci_upper`` are optional because aggregate gold sets (the
    templated meta-analysis benchmark) report effect sizes without intervals;
    significance scoring is skipped for such estimates.
    ``intervention_count``/``outcome_count`` carry the ingest-schema arm
    annotation (absent means single-arm).
    """

    estimate_id: str
    rct_id: str
    intervention_desc: str
    outcome_desc: str
    effect_size: float
    ci_lower: float | None = None
    ci_upper: float | None = None
    sector: str = ""
    intervention_name: str | None = None
    outcome_name: str | None = None
    sample_size: int | None = None
    intervention_count: int | None = None
    outcome_count: int | None = None

    def has_ci(self) -> bool:
        return self.ci_lower is not None and self.ci_upper is not None

    def is_single_arm(self) -> bool:
        return (self.intervention_count or 1) == 1 and (self.outcome_count or 1) == 1

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "estimate_id": self.estimate_id,
            "rct_id": self.rct_id,
            "intervention_desc": self.intervention_desc,
            "outcome_desc": self.outcome_desc,
            "effect_size": self.effect_size,
            "sector": self.sector,
        }
        for name in (
            "ci_lower",
            "ci_upper",
            "intervention_name",
            "outcome_name",
            "sample_size",
            "intervention_count",
            "outcome_count",
        ):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "Estimate":
        def _opt_int(key: str) -> int | None:
            value = record.get(key)
            return None if value is None or value == "" else int(value)

        def _opt_float(key: str) -> float | None:
            value = record.get(key)
            return None if value is None or value == "" else float(value)

        def _opt_str(key: str) -> str | None:
            value = record.get(key)
            return None if value is None or value == "" else str(value)

        missing = [k for k in ("estimate_id", "rct_id", "intervention_desc", "outcome_desc", "effect_size") if record.get(k) in (None, "")]
        if missing:
            raise DataFieldError(f"missing required field(s): {', '.join(missing)}")
        return cls(
            estimate_id=str(record["estimate_id"]),
            rct_id=str(record["rct_id"]),
            intervention_desc=str(record["intervention_desc"]),
            outcome_desc=str(record["outcome_desc"]),
            effect_size=float(record["effect_size"]),
            ci_lower=_opt_float("ci_lower"),
            ci_upper=_opt_float("ci_upper"),
            sector=str(record.get("sector", "") or ""),
            intervention_name=_opt_str("intervention_name"),
            outcome_name=_opt_str("outcome_name"),
            sample_size=_opt_int("sample_size"),
            intervention_count=_opt_int("intervention_count"),
            outcome_count=_opt_int("outcome_count"),
        )


class DataFieldError(ValueError):
    """A record is structurally unusable (missing or non-numeric fields)."""


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validating one estimate; empty violations means valid."""

    estimate_id: str
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_estimate(e: Estimate) -> ValidationReport:
    """List every violated estimate invariant (empty report iff valid).

    Gold CI ordering is checked non-strictly: real corpora contain rounded,
    degenerate intervals and those remain usable.
    """
    violations: list[str] = []
    if not e.estimate_id:
        violations.append("empty estimate_id")
    if not e.rct_id:
        violations.append("empty rct_id")
    if not e.intervention_desc.strip():
        violations.append("empty description: intervention_desc")
    if not e.outcome_desc.strip():
        violations.append("empty description: outcome_desc")
    if (e.ci_lower is None) != (e.ci_upper is None):
        violations.append("CI bounds must be both present or both absent")
    if e.has_ci() and not (e.ci_lower <= e.effect_size <= e.ci_upper):
        violations.append(
            f"CI ordering: expected ci_lower <= effect_size <= ci_upper, got "
            f"[{e.ci_lower}, {e.effect_size}, {e.ci_upper}]"
        )
    if e.sample_size is not None and e.sample_size <= 0:
        violations.append("sample_size must be positive")
    for name in ("intervention_count", "outcome_count"):
        value = getattr(e, name)
        if value is not None and value < 1:
            violations.append(f"{name} must be >= 1")
    return ValidationReport(estimate_id=e.estimate_id, violations=tuple(violations))


def query_id_for(estimate_id: str, level: int) -> str:
    return f"{estimate_id}-L{level}"


def parse_query_id(query_id: str) -> tuple[str, int]:
    """Split a query id back into (estimate_id, level)."""
    m = re.fullmatch(r"(?s)(.+)-L(\d)", query_id)
    if not m:
        raise ValueError(f"query_id {query_id!r} does not follow '<estimate_id>-L<level>'")
    return m.group(1), int(m.group(2))


@dataclass(frozen=True)
class GeneratedQuery:
    """A natural-language query tied to its source estimate and specificity."""

    query_id: str
    estimate_id: str
    text: str
    profile: SpecificityProfile
    level: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text must be non-empty")
        if self.profile.level != self.level:
            raise ValueError(
                f"level {self.level} does not match profile "
                f"{self.profile.implicitness.value}{self.profile.abstraction.value}{self.profile.ambiguity.value}"
            )

    @classmethod
    def build(cls, estimate_id: str, text: str, profile: SpecificityProfile) -> "GeneratedQuery":
        level = profile.level
        if level is None:
            raise ValueError("generated queries must use a canonical specificity profile")
        return cls(
            query_id=query_id_for(estimate_id, level),
            estimate_id=estimate_id,
            text=text,
            profile=profile,
            level=level,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "estimate_id": self.estimate_id,
            "text": self.text,
            "profile": self.profile.to_dict(),
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "GeneratedQuery":
        profile = SpecificityProfile.from_codes(
            record["profile"]["implicitness"],
            record["profile"]["abstraction"],
            record["profile"]["ambiguity"],
        )
        return cls(
            query_id=str(record["query_id"]),
            estimate_id=str(record["estimate_id"]),
            text=str(record["text"]),
            profile=profile,
            level=int(record["level"]),
        )


# Strings hosted models emit instead of honest nulls; normalized to "absent".
PLACEHOLDER_TOKENS = frozenset({"", "unknown", "n/a", "na", "none", "null", "unspecified", "not specified"})


def is_placeholder(value: str | None) -> bool:
    return value is None or value.strip().lower() in PLACEHOLDER_TOKENS


@dataclass(frozen=True)
class SyntheticRCT:
    """Minimal structured representation: intervention and outcome descriptions."""

    intervention: str | None = None
    outcome: str | None = None

    def __post_init__(self) -> None:
        for name in ("intervention", "outcome"):
            value = getattr(self, name)
            if value is not None and is_placeholder(value):
                raise ValueError(f"{name} must be substantive text or None, got {value!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"intervention": self.intervention, "outcome": self.outcome}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "SyntheticRCT":
        return cls(intervention=record.get("intervention"), outcome=record.get("outcome"))


@dataclass(frozen=True)
class EffectPrediction:
    """Predicted effect size with confidence bounds for one query.

    ``ci_valid`` is the Table-10-style strict ordering check: the pipeline's
    own predictors refuse to emit invalid triples, but predictions loaded
    from external files are scored as-is and audited via the validity rate.
    """

    effect: float
    ci_lower: float
    ci_upper: float
    predictor_id: str
    query_id: str
    flags: tuple[str, ...] = ()

    @property
    def ci_valid(self) -> bool:
        return self.ci_lower < self.effect < self.ci_upper

    def significance(self) -> SignificanceClass:
        return classify_significance(self.ci_lower, self.ci_upper)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "effect": self.effect,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "predictor_id": self.predictor_id,
            "query_id": self.query_id,
        }
        if self.flags:
            out["flags"] = list(self.flags)
        return out

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "EffectPrediction":
        return cls(
            effect=float(record["effect"]),
            ci_lower=float(record["ci_lower"]),
            ci_upper=float(record["ci_upper"]),
            predictor_id=str(record["predictor_id"]),
            query_id=str(record["query_id"]),
            flags=tuple(record.get("flags", ())),
        )


# Sentence-boundary heuristic. The single-sentence constraint is enforced by
# prompt, not by parser, so violations are reported as warnings upstream.

_ABBREVIATIONS = frozenset(
    {"e.g", "i.e", "etc", "vs", "cf", "al", "dr", "mr", "mrs", "ms", "no", "fig", "st", "approx", "dept", "est"}
)
_TERMINAL = ".?!"


def sentence_count(text: str) -> int:
    """Conservative count of sentence boundaries in ``text``.

    A terminal mark ('.', '?', '!') closes a sentence unless it belongs to a
    decimal number, an allowlisted abbreviation, or a run of terminal marks
    (counted once).
    """
    text = text.strip()
    count = 0
    for i, ch in enumerate(text):
        if ch not in _TERMINAL:
            continue
        if i + 1 < len(text) and text[i + 1] in _TERMINAL:
            continue  # close the run at its last mark
        if ch == "." and 0 < i < len(text) - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
            continue  # decimal point
        if ch == ".":
            word = re.split(r"\s", text[:i])[-1].lstrip("(\"'").lower()
            if word.rstrip(".") in _ABBREVIATIONS or (word and len(word) == 1):
                continue  # abbreviation or initial
        tail = text[i + 1 :].lstrip()
        if not tail or tail[0].isupper() or tail[0] == '"' or tail[0].isdigit():
            count += 1
    return count


def is_single_sentence(text: str) -> bool:
    """True when the text ends with exactly one terminal mark and contains
    no interior sentence boundary."""
    text = text.strip()
    if not text or text[-1] not in _TERMINAL:
        return False
    if len(text) >= 2 and text[-2] in _TERMINAL:
        return False
    return sentence_count(text) == 1


def duplicate_estimate_ids(estimates: Iterable[Estimate]) -> list[str]:
    """IDs appearing more than once, in first-seen order."""
    seen: dict[str, int] = {}
    for e in estimates:
        seen[e.estimate_id] = seen.get(e.estimate_id, 0) + 1
    return [k for k, v in seen.items() if v > 1]
