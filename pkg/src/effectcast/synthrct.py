"""First stage of the two-step pipeline: map a query to a structured
intervention/outcome representation and linearize it for the predictor.

The linearized form is shared with the gold-description path so that the
upper-bound comparison uses the identical rendering.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ResponseFormatError
from .llm import ChatClient, ChatRequest
from .modelout import extract_json_value
from .prompts import SYNTHETIC_RCT, load_template, render_template
from .types import GeneratedQuery, SyntheticRCT, is_placeholder

ABSENT_TOKEN = "unspecified"
INTERVENTION_LABEL = "Intervention: "
OUTCOME_LABEL = "Outcome: "


def render_synthrct_prompt(query: GeneratedQuery | str) -> str:
    """Fill the extraction template with the query text (braces escaped)."""
    text = query.text if isinstance(query, GeneratedQuery) else query
    if not text.strip():
        raise ValueError("query text must be non-empty")
    return render_template(load_template(SYNTHETIC_RCT), {"query": text})


def parse_synthrct_response_verbose(raw: str) -> tuple[SyntheticRCT, tuple[str, ...]]:
    """Parse the model payload, returning the representation plus warnings
    for any placeholder strings that were normalized to absent."""
    payload = extract_json_value(raw)
    if not isinstance(payload, dict):
        raise ResponseFormatError("payload is not a JSON object", raw=raw)
    missing = {"intervention", "outcome"} - set(payload)
    if missing:
        raise ResponseFormatError(f"missing key(s): {sorted(missing)}", raw=raw)
    extra = set(payload) - {"intervention", "outcome"}
    if extra:
        raise ResponseFormatError(f"extra key(s) not in schema: {sorted(extra)}", raw=raw)

    values: dict[str, str | None] = {}
    warnings: list[str] = []
    for key in ("intervention", "outcome"):
        value = payload[key]
        if value is not None and not isinstance(value, str):
            raise ResponseFormatError(f"{key} must be a string or null", raw=raw)
        if value is not None and is_placeholder(value):
            warnings.append(f"{key}: placeholder {value!r} normalized to absent")
            value = None
        values[key] = value.strip() if isinstance(value, str) else None
    return SyntheticRCT(intervention=values["intervention"], outcome=values["outcome"]), tuple(warnings)


def parse_synthrct_response(raw: str) -> SyntheticRCT:
    return parse_synthrct_response_verbose(raw)[0]


def linearize_synthrct(s: SyntheticRCT) -> str:
    """Deterministic two-line rendering consumed by effect predictors."""
    if s.intervention is None and s.outcome is None:
        raise ValueError("cannot linearize a representation with both fields absent")
    return (
        f"{INTERVENTION_LABEL}{s.intervention if s.intervention is not None else ABSENT_TOKEN}\n"
        f"{OUTCOME_LABEL}{s.outcome if s.outcome is not None else ABSENT_TOKEN}"
    )


def parse_linearized(text: str) -> SyntheticRCT:
    """Inverse of ``linearize_synthrct`` up to field presence."""
    lines = text.split("\n")
    if len(lines) < 2 or not lines[0].startswith(INTERVENTION_LABEL.rstrip()) or not any(
        ln.startswith(OUTCOME_LABEL.rstrip()) for ln in lines[1:]
    ):
        raise ValueError("text is not a linearized intervention/outcome rendering")
    outcome_at = next(i for i, ln in enumerate(lines) if i > 0 and ln.startswith(OUTCOME_LABEL.rstrip()))
    intervention = "\n".join(lines[:outcome_at])[len(INTERVENTION_LABEL):].strip()
    outcome = "\n".join(lines[outcome_at:])[len(OUTCOME_LABEL):].strip()
    return SyntheticRCT(
        intervention=None if is_placeholder(intervention) else intervention,
        outcome=None if is_placeholder(outcome) else outcome,
    )


@dataclass(frozen=True)
class SynthesisOutcome:
    query_id: str
    rct: SyntheticRCT
    warnings: tuple[str, ...]
    retries: int = 0

    def to_dict(self) -> dict:
        out = {"query_id": self.query_id, "synthetic_rct": self.rct.to_dict()}
        if self.warnings:
            out["warnings"] = list(self.warnings)
        return out


def synthesize(
    q: GeneratedQuery,
    client: ChatClient,
    model_id: str,
    temperature: float = 0.0,
    max_output_tokens: int = 768,
    max_format_retries: int = 2,
) -> SynthesisOutcome:
    """Render, complete, and parse the structured representation for one query.

    Format violations re-ask the model with the cache bypassed; exhaustion
    propagates with the raw payload attached.
    """
    prompt = render_synthrct_prompt(q)
    req = ChatRequest(
        model_id=model_id,
        prompt=prompt,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        request_tag="synthrct",
    )
    retries = 0
    raw = client.complete(req)
    while True:
        try:
            rct, warnings = parse_synthrct_response_verbose(raw)
            break
        except ResponseFormatError as err:
            if not err.retryable or retries >= max_format_retries:
                raise
            retries += 1
            raw = client.complete(req, refresh=True)
    return SynthesisOutcome(query_id=q.query_id, rct=rct, warnings=warnings, retries=retries)
