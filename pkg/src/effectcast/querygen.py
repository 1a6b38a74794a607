"""Generation of the four specificity-leveled queries per estimate.

The model is asked for one query per canonical profile using the checked-in
template; responses are parsed strictly, re-rolled on format violations only,
and soft constraint violations (multi-sentence text, quantities not present
in the source estimate) are recorded as warnings, never retried, so the
generated dataset is not biased by selective re-rolling.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ResponseFormatError
from .llm import ChatClient, ChatRequest
from .modelout import extract_json_objects
from .prompts import QUERY_GENERATION, load_template, render_template
from .types import (
    CANONICAL_PROFILES,
    Estimate,
    GeneratedQuery,
    SpecificityProfile,
    is_single_sentence,
    sentence_count,
)

SECTOR_DEFAULT = "unspecified"

_NUMERIC_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?")


@dataclass(frozen=True)
class QueryGenResponse:
    """Exactly four (text, profile) entries, canonical diagonals in order."""

    entries: tuple[tuple[str, SpecificityProfile], ...]


@dataclass(frozen=True)
class QueryWarning:
    query_id: str
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "kind": self.kind, "detail": self.detail}


@dataclass(frozen=True)
class QueryGenerationResult:
    queries: tuple[GeneratedQuery, ...]
    warnings: tuple[QueryWarning, ...]
    render_flags: tuple[str, ...] = ()
    retries: int = 0


def render_query_prompt(e: Estimate) -> str:
    """Fill the generation template with the estimate's descriptions.

    An absent sector fills the slot with "unspecified" so the template stays
    structurally intact.
    """
    return render_template(
        load_template(QUERY_GENERATION),
        {
            "intervention_description": e.intervention_desc,
            "outcome_description": e.outcome_desc,
            "sector": e.sector or SECTOR_DEFAULT,
        },
    )


def parse_query_response(raw: str) -> QueryGenResponse:
    """Validate the model payload into four canonical (text, profile) entries.

    Structural problems (bad JSON, wrong entry count, unknown or out-of-order
    difficulty codes, missing fields) are retryable format violations; a
    well-formed entry with empty query text is a content violation and is not
    retried.
    """
    entries = extract_json_objects(raw)
    if len(entries) != 4:
        raise ResponseFormatError(f"expected 4 query entries, got {len(entries)}", raw=raw)

    parsed: list[tuple[str, SpecificityProfile]] = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ResponseFormatError(f"entry {i} is not an object", raw=raw)
        extra = set(entry) - {"query", "difficulty"}
        missing = {"query", "difficulty"} - set(entry)
        if extra or missing:
            raise ResponseFormatError(
                f"entry {i} fields mismatch (missing {sorted(missing)}, extra {sorted(extra)})",
                raw=raw,
            )
        difficulty = entry["difficulty"]
        if not isinstance(difficulty, dict) or set(difficulty) != {
            "implicitness",
            "abstraction",
            "ambiguity",
        }:
            raise ResponseFormatError(f"entry {i} difficulty fields mismatch", raw=raw)
        try:
            profile = SpecificityProfile.from_codes(
                difficulty["implicitness"], difficulty["abstraction"], difficulty["ambiguity"]
            )
        except ValueError as exc:
            raise ResponseFormatError(f"entry {i}: {exc}", raw=raw) from None
        text = entry["query"]
        if not isinstance(text, str):
            raise ResponseFormatError(f"entry {i} query is not a string", raw=raw)
        if not text.strip():
            raise ResponseFormatError(
                f"entry {i} query text is empty", retryable=False, raw=raw
            )
        parsed.append((text.strip(), profile))

    profiles = tuple(p for _, p in parsed)
    if profiles != CANONICAL_PROFILES:
        got = ", ".join(
            f"{p.implicitness.value}{p.abstraction.value}{p.ambiguity.value}" for p in profiles
        )
        raise ResponseFormatError(
            f"profiles must be the four canonical diagonals in order, got {got}", raw=raw
        )
    return QueryGenResponse(entries=tuple(parsed))


def _source_numeric_tokens(e: Estimate) -> set[str]:
    source = " ".join(
        filter(None, (e.intervention_desc, e.outcome_desc, e.intervention_name, e.outcome_name, e.sector))
    )
    return set(_NUMERIC_TOKEN_RE.findall(source))


def constraint_warnings(e: Estimate, queries: tuple[GeneratedQuery, ...]) -> tuple[QueryWarning, ...]:
    """Soft checks on generated text: single-sentence form and no numeric
    tokens absent from the source estimate (hallucinated-quantity heuristic)."""
    allowed = _source_numeric_tokens(e)
    warnings: list[QueryWarning] = []
    for q in queries:
        if not is_single_sentence(q.text):
            note = f"not a single sentence (heuristic count: {sentence_count(q.text)})"
            warnings.append(QueryWarning(q.query_id, "single_sentence", note))
        for token in _NUMERIC_TOKEN_RE.findall(q.text):
            if token not in allowed:
                warnings.append(QueryWarning(q.query_id, "hallucinated_quantity", token))
    return tuple(warnings)


def generate_queries(
    e: Estimate,
    client: ChatClient,
    model_id: str,
    temperature: float = 0.0,
    max_output_tokens: int = 1024,
    max_format_retries: int = 2,
) -> QueryGenerationResult:
    """Render, complete, and parse one estimate's four queries.

    Format violations re-ask the model with the cache bypassed, up to
    ``max_format_retries`` fresh attempts; content violations and exhaustion
    propagate with the raw payload attached for audit.
    """
    prompt = render_query_prompt(e)
    req = ChatRequest(
        model_id=model_id,
        prompt=prompt,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        request_tag="querygen",
    )

    retries = 0
    raw = client.complete(req)
    while True:
        try:
            response = parse_query_response(raw)
            break
        except ResponseFormatError as err:
            if not err.retryable or retries >= max_format_retries:
                raise
            retries += 1
            raw = client.complete(req, refresh=True)

    queries = tuple(
        GeneratedQuery.build(e.estimate_id, text, profile) for text, profile in response.entries
    )
    flags = ("sector_defaulted",) if not e.sector else ()
    return QueryGenerationResult(
        queries=queries,
        warnings=constraint_warnings(e, queries),
        render_flags=flags,
        retries=retries,
    )
