"""Corpus ingestion, preprocessing filters, leakage-safe splitting, corpus
statistics, and the two out-of-domain evaluation constructions (templated
aggregate queries, averaged-effect targets)."""

from __future__ import annotations

import csv
import json
import random
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, DataError
from .types import (
    DataFieldError,
    Estimate,
    GeneratedQuery,
    SpecificityProfile,
    duplicate_estimate_ids,
    validate_estimate,
)

SPLIT_NAMES = ("train", "val", "test_id", "test_ood")

# Proportions implied by the benchmark's published split sizes.
DEFAULT_RATIOS = (0.76, 0.09, 0.15)

AGGREGATE_QUERY_TEMPLATE = "What is the impact of {intervention} on {outcome}?"


@dataclass(frozen=True)
class EstimateCorpus:
    estimates: tuple[Estimate, ...]
    source_label: str = ""

    def __post_init__(self) -> None:
        dupes = duplicate_estimate_ids(self.estimates)
        if dupes:
            raise DataError(f"duplicate estimate_id(s): {', '.join(dupes[:5])}")
        missing_rct = [e.estimate_id for e in self.estimates if not e.rct_id]
        if missing_rct:
            raise DataError(f"estimates without rct_id: {', '.join(missing_rct[:5])}")

    def __len__(self) -> int:
        return len(self.estimates)

    def __iter__(self):
        return iter(self.estimates)

    def by_id(self) -> dict[str, Estimate]:
        return {e.estimate_id: e for e in self.estimates}

    def sectors(self) -> set[str]:
        return {e.sector for e in self.estimates}


@dataclass(frozen=True)
class IngestError:
    line: int
    message: str

    def to_dict(self) -> dict:
        return {"line": self.line, "message": self.message}


@dataclass(frozen=True)
class LoadResult:
    corpus: EstimateCorpus
    errors: tuple[IngestError, ...]


def _record_from_csv_row(row: Mapping[str, str]) -> dict:
    return {k: v for k, v in row.items() if v not in (None, "")}


def load_corpus(path: Path | str, fmt: str = "jsonl", source_label: str | None = None) -> LoadResult:
    """Load an estimate corpus from line-delimited JSON or CSV.

    Records that fail to parse or violate estimate invariants are collected
    into the error report with their line numbers instead of being silently
    dropped. A file where malformed records exceed 10% (with a one-record
    grace, so a single bad line still yields a usable report) aborts.
    """
    path = Path(path)
    if fmt not in ("jsonl", "csv"):
        raise ConfigError(f"unknown corpus format {fmt!r}, expected jsonl or csv")
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")

    estimates: list[Estimate] = []
    errors: list[IngestError] = []
    total = 0

    def _ingest(lineno: int, record: Mapping) -> None:
        nonlocal total
        total += 1
        try:
            estimate = Estimate.from_dict(record)
        except (DataFieldError, ValueError, TypeError, KeyError) as exc:
            errors.append(IngestError(lineno, f"unparseable record: {exc}"))
            return
        report = validate_estimate(estimate)
        if not report.ok:
            errors.append(IngestError(lineno, "; ".join(report.violations)))
            return
        estimates.append(estimate)

    if fmt == "jsonl":
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    errors.append(IngestError(lineno, f"invalid JSON: {exc.msg}"))
                    total += 1
                    continue
                if not isinstance(record, Mapping):
                    errors.append(IngestError(lineno, "record is not a JSON object"))
                    total += 1
                    continue
                _ingest(lineno, record)
    else:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):  # header is line 1
                _ingest(lineno, _record_from_csv_row(row))

    if len(errors) >= 2 and len(errors) / max(total, 1) > 0.10:
        summary = "; ".join(f"line {e.line}: {e.message}" for e in errors[:5])
        raise DataError(
            f"{path}: {len(errors)} of {total} records malformed (>10%). First errors: {summary}"
        )

    label = source_label if source_label is not None else path.name
    return LoadResult(
        corpus=EstimateCorpus(estimates=tuple(estimates), source_label=label),
        errors=tuple(errors),
    )


def filter_single_arm(corpus: EstimateCorpus) -> EstimateCorpus:
    """Keep only estimates with a single intervention and a single outcome.

    An absent arm-count annotation means single-arm. Input order is preserved
    and the operation is idempotent.
    """
    kept = tuple(e for e in corpus if e.is_single_arm())
    return EstimateCorpus(estimates=kept, source_label=corpus.source_label)


@dataclass(frozen=True)
class SplitAssignment:
    assignment: Mapping[str, str]  # estimate_id -> split name
    seed: int
    ratios: tuple[float, float, float]
    in_domain_sector: str

    def ids_for(self, split: str) -> list[str]:
        return [eid for eid, s in self.assignment.items() if s == split]

    def split_of(self, estimate_id: str) -> str:
        return self.assignment[estimate_id]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "in_domain_sector": self.in_domain_sector,
            "assignment": dict(self.assignment),
        }

    @classmethod
    def from_dict(cls, record: Mapping) -> "SplitAssignment":
        return cls(
            assignment=dict(record["assignment"]),
            seed=int(record["seed"]),
            ratios=tuple(record["ratios"]),
            in_domain_sector=str(record["in_domain_sector"]),
        )


def split_by_rct(
    corpus: EstimateCorpus,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    in_domain_sector: str = "health",
) -> SplitAssignment:
    """Group-atomic train/val/test split with a sector-based OOD holdout.

    Estimates outside ``in_domain_sector`` go wholesale to ``test_ood``.
    In-domain RCT groups are shuffled by seed, then packed largest-first into
    the currently most under-filled split so estimate-level counts approach
    the requested ratios without ever splitting an RCT.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")

    in_domain = [e for e in corpus if e.sector == in_domain_sector]
    if not in_domain:
        raise DataError(f"corpus has no estimates in sector {in_domain_sector!r}")

    assignment: dict[str, str] = {
        e.estimate_id: "test_ood" for e in corpus if e.sector != in_domain_sector
    }

    groups: dict[str, list[str]] = {}
    for e in in_domain:
        groups.setdefault(e.rct_id, []).append(e.estimate_id)

    order = sorted(groups)
    random.Random(seed).shuffle(order)
    # Stable sort keeps the shuffled order among equal-sized groups.
    order.sort(key=lambda rct: len(groups[rct]), reverse=True)

    n_total = len(in_domain)
    targets = [r * n_total for r in ratios]
    filled = [0, 0, 0]
    split_names = ("train", "val", "test_id")
    for rct in order:
        deficits = [targets[i] - filled[i] for i in range(3)]
        dest = max(range(3), key=lambda i: (deficits[i], -i))
        for eid in groups[rct]:
            assignment[eid] = split_names[dest]
        filled[dest] += len(groups[rct])

    return SplitAssignment(
        assignment=assignment,
        seed=seed,
        ratios=tuple(ratios),
        in_domain_sector=in_domain_sector,
    )


@dataclass(frozen=True)
class CorpusStats:
    n_estimates: int
    mean_effect: float
    variance_effect: float
    std_effect: float
    median_sample_size: int | None = None
    n_queries_per_level: tuple[int, int, int, int] | None = None
    avg_query_chars_per_level: tuple[float | None, float | None, float | None, float | None] | None = None
    empty: bool = False

    def to_dict(self) -> dict:
        out: dict = {
            "n_estimates": self.n_estimates,
            "mean_effect": self.mean_effect,
            "variance_effect": self.variance_effect,
            "std_effect": self.std_effect,
            "empty": self.empty,
        }
        if self.median_sample_size is not None:
            out["median_sample_size"] = self.median_sample_size
        if self.n_queries_per_level is not None:
            out["n_queries_per_level"] = list(self.n_queries_per_level)
        if self.avg_query_chars_per_level is not None:
            out["avg_query_chars_per_level"] = list(self.avg_query_chars_per_level)
        return out


def corpus_stats(corpus: EstimateCorpus, queries: Sequence[GeneratedQuery] | None = None) -> CorpusStats:
    """Effect-size distribution statistics, plus per-level query counts and
    average character lengths (whitespace included) when queries are given.

    Uses the population variance convention (divide by N).
    """
    if len(corpus) == 0:
        return CorpusStats(0, 0.0, 0.0, 0.0, empty=True)

    effects = [e.effect_size for e in corpus]
    mean = sum(effects) / len(effects)
    variance = sum((x - mean) ** 2 for x in effects) / len(effects)
    std = variance ** 0.5

    sizes = sorted(e.sample_size for e in corpus if e.sample_size is not None)
    median_n = int(statistics.median_low(sizes)) if sizes else None

    counts = None
    avg_chars = None
    if queries is not None:
        per_level: dict[int, list[int]] = {0: [], 1: [], 2: [], 3: []}
        for q in queries:
            per_level[q.level].append(len(q.text))
        counts = tuple(len(per_level[i]) for i in range(4))
        avg_chars = tuple(
            (sum(per_level[i]) / len(per_level[i])) if per_level[i] else None for i in range(4)
        )

    return CorpusStats(
        n_estimates=len(corpus),
        mean_effect=mean,
        variance_effect=variance,
        std_effect=std,
        median_sample_size=median_n,
        n_queries_per_level=counts,
        avg_query_chars_per_level=avg_chars,
    )


def render_stats_block(stats: CorpusStats) -> str:
    """The training-distribution paragraph injected into forecast prompts.

    Values print at 4 decimals; the median sample-size sentence is dropped
    when the corpus carries no sample sizes.
    """
    lines = [
        "Training data effect size distribution:",
        f"Mean: {stats.mean_effect:.4f}",
        f"Variance: {stats.variance_effect:.4f}",
        f"Standard Deviation: {stats.std_effect:.4f}",
        "",
        "Therefore most values will be close to the mean value.",
    ]
    if stats.median_sample_size is not None:
        lines += [
            "",
            f"Additionally, the typical (median) sample size in the training data is {stats.median_sample_size}.",
        ]
    return "\n".join(lines)


def render_stats_markdown(stats: CorpusStats) -> str:
    """Human-readable corpus statistics table."""
    lines = [
        "| Statistic | Value |",
        "|---|---|",
        f"| Estimates | {stats.n_estimates} |",
        f"| Mean effect | {stats.mean_effect:.4f} |",
        f"| Effect variance (population) | {stats.variance_effect:.4f} |",
        f"| Effect std | {stats.std_effect:.4f} |",
    ]
    if stats.median_sample_size is not None:
        lines.append(f"| Median sample size | {stats.median_sample_size} |")
    if stats.n_queries_per_level is not None:
        for level, count in enumerate(stats.n_queries_per_level):
            avg = stats.avg_query_chars_per_level[level]
            avg_text = f"{avg:.1f}" if avg is not None else "-"
            lines.append(f"| Queries lvl-{level} (count / avg chars) | {count} / {avg_text} |")
    if stats.empty:
        lines.append("| Empty corpus | yes |")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AggregatePair:
    intervention_name: str
    outcome_name: str
    effect_size: float


@dataclass(frozen=True)
class AggregateQuerySet:
    """Templated level-3 queries plus CI-free gold estimates for aggregate
    intervention-outcome pairs."""

    queries: tuple[GeneratedQuery, ...]
    estimates: tuple[Estimate, ...]


def build_aggregate_queries(
    pairs: Sequence[AggregatePair | tuple[str, str, float]],
    sector: str = "development",
    id_prefix: str = "agg",
) -> AggregateQuerySet:
    """Turn (intervention name, outcome name, effect) rows into one templated
    level-3 query each, with a synthetic CI-free gold estimate.

    Duplicate (intervention, outcome) pairs are rejected; significance
    metrics are skipped downstream because the golds carry no intervals.
    """
    norm_pairs = [p if isinstance(p, AggregatePair) else AggregatePair(*p) for p in pairs]
    seen: set[tuple[str, str]] = set()
    queries: list[GeneratedQuery] = []
    estimates: list[Estimate] = []
    for i, pair in enumerate(norm_pairs):
        if not pair.intervention_name.strip() or not pair.outcome_name.strip():
            raise DataError(f"pair {i}: intervention and outcome names must be non-empty")
        key = (_normalize_name(pair.intervention_name), _normalize_name(pair.outcome_name))
        if key in seen:
            raise DataError(
                f"duplicate intervention-outcome pair: ({pair.intervention_name!r}, {pair.outcome_name!r})"
            )
        seen.add(key)
        estimate_id = f"{id_prefix}-{i:04d}"
        text = AGGREGATE_QUERY_TEMPLATE.format(
            intervention=pair.intervention_name, outcome=pair.outcome_name
        )
        estimates.append(
            Estimate(
                estimate_id=estimate_id,
                rct_id=estimate_id,
                intervention_desc=pair.intervention_name,
                outcome_desc=pair.outcome_name,
                effect_size=pair.effect_size,
                sector=sector,
                intervention_name=pair.intervention_name,
                outcome_name=pair.outcome_name,
            )
        )
        queries.append(GeneratedQuery.build(estimate_id, text, SpecificityProfile.canonical(3)))
    return AggregateQuerySet(queries=tuple(queries), estimates=tuple(estimates))


def _normalize_name(name: str) -> str:
    return " ".join(name.split()).casefold()


@dataclass(frozen=True)
class AveragedTarget:
    query_id: str
    matched_estimate_ids: tuple[str, ...]
    averaged_effect: float

    def __post_init__(self) -> None:
        if not self.matched_estimate_ids:
            raise ValueError("an averaged target needs at least one matched estimate")

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "matched_estimate_ids": list(self.matched_estimate_ids),
            "averaged_effect": self.averaged_effect,
        }

    @classmethod
    def from_dict(cls, record: Mapping) -> "AveragedTarget":
        return cls(
            query_id=str(record["query_id"]),
            matched_estimate_ids=tuple(record["matched_estimate_ids"]),
            averaged_effect=float(record["averaged_effect"]),
        )


@dataclass(frozen=True)
class AveragedTargetsResult:
    targets: tuple[AveragedTarget, ...]
    n_excluded: int
    avg_matched_size: float | None

    def to_dict(self) -> dict:
        return {
            "targets": [t.to_dict() for t in self.targets],
            "n_excluded": self.n_excluded,
            "avg_matched_size": self.avg_matched_size,
        }


def build_averaged_targets(
    level3_queries: Sequence[GeneratedQuery],
    corpus: EstimateCorpus,
    parents: EstimateCorpus | None = None,
) -> AveragedTargetsResult:
    """Swap each unspecific query's target for the mean effect of all corpus
    estimates sharing its parent's intervention and outcome names.

    Name matching is case-insensitive with internal whitespace collapsed.
    Queries whose parent names match nothing are excluded and counted; that
    only happens when ``parents`` (where parent estimates are looked up,
    default: the matching corpus itself) is a different set than ``corpus``,
    since a parent inside the corpus always matches at least itself.
    """
    by_id = (parents if parents is not None else corpus).by_id()
    by_names: dict[tuple[str, str], list[Estimate]] = {}
    for e in corpus:
        if e.intervention_name and e.outcome_name:
            key = (_normalize_name(e.intervention_name), _normalize_name(e.outcome_name))
            by_names.setdefault(key, []).append(e)

    targets: list[AveragedTarget] = []
    n_excluded = 0
    for q in level3_queries:
        parent = by_id.get(q.estimate_id)
        if parent is None:
            raise DataError(f"query {q.query_id}: parent estimate {q.estimate_id} not in corpus")
        if not parent.intervention_name or not parent.outcome_name:
            raise DataError(
                f"query {q.query_id}: parent estimate lacks intervention_name/outcome_name"
            )
        key = (_normalize_name(parent.intervention_name), _normalize_name(parent.outcome_name))
        matched = by_names.get(key, [])
        if not matched:
            n_excluded += 1
            continue
        mean = sum(m.effect_size for m in matched) / len(matched)
        targets.append(
            AveragedTarget(
                query_id=q.query_id,
                matched_estimate_ids=tuple(m.estimate_id for m in matched),
                averaged_effect=mean,
            )
        )

    avg_size = (
        sum(len(t.matched_estimate_ids) for t in targets) / len(targets) if targets else None
    )
    return AveragedTargetsResult(targets=tuple(targets), n_excluded=n_excluded, avg_matched_size=avg_size)
