"""The pluggable prediction layer.

Four implementations of one contract (text in, strict effect triple out):

* mean_effect: constant triple of training-set means.
* retrieval_lookup: BM25 nearest neighbor over train/val items, answering
  with the neighbor's gold triple.
* prompted: few-shot LLM forecaster using the checked-in template.
* external_regressor: HTTP client for a separately trained regression
  endpoint (the model itself lives behind the wire contract).

Plus the three-term squared-error loss used to validate external trainers.
"""

from __future__ import annotations

import math
import re
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx

from .dataset import CorpusStats, render_stats_block
from .errors import (
    ConfigError,
    EndpointContractError,
    PredictionError,
    ResponseFormatError,
    UpstreamError,
)
from .llm import RETRYABLE_STATUSES, ChatClient, ChatRequest
from .modelout import extract_json_value
from .prompts import EFFECT_FORECAST, load_template, render_template
from .types import Estimate, EffectPrediction, SignificanceClass, classify_significance


@dataclass(frozen=True)
class PredictorInput:
    query_id: str
    text: str
    level: int | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("predictor input text must be non-empty")


class Predictor(Protocol):
    predictor_id: str

    def predict(self, p: PredictorInput) -> EffectPrediction: ...


def _checked(prediction: EffectPrediction) -> EffectPrediction:
    if not prediction.ci_valid:
        raise PredictionError(
            f"invalid triple (need ci_lower < effect < ci_upper): "
            f"[{prediction.ci_lower}, {prediction.effect}, {prediction.ci_upper}]",
            query_id=prediction.query_id,
        )
    return prediction


# --- mean-effect baseline ---------------------------------------------------


@dataclass(frozen=True)
class MeanEffectModel:
    mean_effect: float
    mean_ci_lower: float
    mean_ci_upper: float
    n_train: int


def fit_mean_effect(train: Sequence[Estimate]) -> MeanEffectModel:
    """Componentwise arithmetic means of the training effects and CI bounds."""
    if not train:
        raise ConfigError("cannot fit mean-effect model on an empty training set")
    with_ci = [e for e in train if e.has_ci()]
    if not with_ci:
        raise ConfigError("mean-effect model needs at least one training estimate with a CI")
    return MeanEffectModel(
        mean_effect=sum(e.effect_size for e in train) / len(train),
        mean_ci_lower=sum(e.ci_lower for e in with_ci) / len(with_ci),
        mean_ci_upper=sum(e.ci_upper for e in with_ci) / len(with_ci),
        n_train=len(train),
    )


class MeanEffectPredictor:
    predictor_id = "mean_effect"

    def __init__(self, model: MeanEffectModel):
        self.model = model

    def predict(self, p: PredictorInput) -> EffectPrediction:
        return _checked(
            EffectPrediction(
                effect=self.model.mean_effect,
                ci_lower=self.model.mean_ci_lower,
                ci_upper=self.model.mean_ci_upper,
                predictor_id=self.predictor_id,
                query_id=p.query_id,
            )
        )


# --- BM25 retrieval lookup ---------------------------------------------------

# Tokenization: lowercase, punctuation stripped, whitespace split, minus a
# fixed stopword list so degenerate all-stopword queries tokenize to nothing.
STOPWORDS = frozenset(
    """a an and are as at be by do does for from has have how in is it of on or
    that the to was were what when which will with""".split()
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in STOPWORDS]


@dataclass(frozen=True)
class Bm25Item:
    text: str
    effect: float
    ci_lower: float
    ci_upper: float
    level: int | None = None


class Bm25Index:
    """Standard BM25 with +0.5-smoothed IDF over gold-labeled documents."""

    def __init__(self, items: Sequence[Bm25Item], k1: float = 1.2, b: float = 0.75):
        if not items:
            raise ConfigError("BM25 index needs at least one document")
        self.items = tuple(items)
        self.k1 = k1
        self.b = b
        self._term_freqs = [Counter(tokenize(item.text)) for item in items]
        self._doc_lens = [sum(tf.values()) for tf in self._term_freqs]
        self.avgdl = sum(self._doc_lens) / len(items) or 1.0
        df: Counter[str] = Counter()
        for tf in self._term_freqs:
            df.update(tf.keys())
        n = len(items)
        self.idf = {t: math.log((n - d + 0.5) / (d + 0.5) + 1) for t, d in df.items()}

    def score(self, query_tokens: Sequence[str], doc: int) -> float:
        tf = self._term_freqs[doc]
        dl = self._doc_lens[doc]
        norm = self.k1 * (1 - self.b + self.b * dl / self.avgdl)
        s = 0.0
        for t in query_tokens:
            f = tf.get(t, 0)
            if f == 0:
                continue
            s += self.idf.get(t, 0.0) * f * (self.k1 + 1) / (f + norm)
        return s

    def top1(self, query_tokens: Sequence[str], candidates: Sequence[int]) -> tuple[int, float]:
        """Best-scoring candidate; ties go to the lowest document ordinal."""
        best, best_score = candidates[0], -1.0
        for doc in candidates:
            s = self.score(query_tokens, doc)
            if s > best_score:
                best, best_score = doc, s
        return best, best_score

    def mean_triple(self) -> tuple[float, float, float]:
        n = len(self.items)
        return (
            sum(i.effect for i in self.items) / n,
            sum(i.ci_lower for i in self.items) / n,
            sum(i.ci_upper for i in self.items) / n,
        )


def build_bm25_index(items: Sequence[Bm25Item], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    return Bm25Index(items, k1=k1, b=b)


def retrieval_lookup(idx: Bm25Index, p: PredictorInput) -> EffectPrediction:
    """Answer with the gold triple of the top-scoring indexed document.

    Documents sharing the input's specificity level are preferred when the
    input carries one; a query with no scorable terms falls back to the
    index-wide mean triple, flagged in the prediction.
    """
    candidates = list(range(len(idx.items)))
    if p.level is not None:
        leveled = [i for i in candidates if idx.items[i].level == p.level]
        if leveled:
            candidates = leveled

    tokens = tokenize(p.text)
    if not tokens:
        effect, cl, cu = idx.mean_triple()
        return _checked(
            EffectPrediction(
                effect=effect,
                ci_lower=cl,
                ci_upper=cu,
                predictor_id="retrieval_lookup",
                query_id=p.query_id,
                flags=("fallback_mean_triple",),
            )
        )

    doc, _ = idx.top1(tokens, candidates)
    item = idx.items[doc]
    return _checked(
        EffectPrediction(
            effect=item.effect,
            ci_lower=item.ci_lower,
            ci_upper=item.ci_upper,
            predictor_id="retrieval_lookup",
            query_id=p.query_id,
        )
    )


class RetrievalLookupPredictor:
    predictor_id = "retrieval_lookup"

    def __init__(self, index: Bm25Index):
        self.index = index

    def predict(self, p: PredictorInput) -> EffectPrediction:
        return retrieval_lookup(self.index, p)


# --- prompted LLM forecaster --------------------------------------------------


@dataclass(frozen=True)
class ForecastExemplar:
    query: str
    effect: float
    ci_lower: float
    ci_upper: float

    @property
    def significance(self) -> SignificanceClass:
        return classify_significance(self.ci_lower, self.ci_upper)


# The three few-shot exemplars shipped with the forecast template, one per
# significance class.
DEFAULT_FORECAST_EXEMPLARS = (
    ForecastExemplar(
        query=(
            "Does providing EMDR sessions help alleviate trauma symptoms "
            "reported by parents for affected children?"
        ),
        effect=1.5956,
        ci_lower=0.9756,
        ci_upper=2.2156,
    ),
    ForecastExemplar(
        query=(
            "How does the regular I-2 Newcastle disease vaccination affect "
            "chick mortality from disease?"
        ),
        effect=-1.1956,
        ci_lower=-1.6002,
        ci_upper=-0.791,
    ),
    ForecastExemplar(
        query=(
            "How does providing immediate ART during home-based HIV testing "
            "influence overall patient well-being and care effectiveness?"
        ),
        effect=0.0602,
        ci_lower=-0.1807,
        ci_upper=0.3011,
    ),
)

_CLASS_LABELS = {
    SignificanceClass.POSITIVE: "Positive + Statistically significant",
    SignificanceClass.NEGATIVE: "Negative + Statistically significant",
    SignificanceClass.NON_SIGNIFICANT: "Statistically insignificant",
}

EFFECT_RANGE = (-2.0, 2.0)


def _fmt(x: float) -> str:
    return format(x, "g")


def _exemplar_block(n: int, ex: ForecastExemplar) -> str:
    return (
        f"Example {n} ({_CLASS_LABELS[ex.significance]}):\n"
        f'"{ex.query}"\n'
        "\n"
        "Output:\n"
        f'{{"Hedges_g": {_fmt(ex.effect)},\n'
        f' "Hedges_g_ci_lower": {_fmt(ex.ci_lower)},\n'
        f' "Hedges_g_ci_upper": {_fmt(ex.ci_upper)},\n'
        "}"
    )


def render_forecast_prompt(
    p: PredictorInput,
    exemplars: Sequence[ForecastExemplar] = DEFAULT_FORECAST_EXEMPLARS,
    stats: CorpusStats | None = None,
) -> str:
    """Fill the forecast template with three exemplars, the optional
    training-distribution block, and the input text.

    The three exemplars must cover the three significance classes. Omitting
    ``stats`` omits the whole training-information block (the out-of-domain
    convention).
    """
    if len(exemplars) != 3:
        raise ConfigError(f"exactly three exemplars required, got {len(exemplars)}")
    classes = {ex.significance for ex in exemplars}
    if classes != set(SignificanceClass):
        raise ConfigError(
            "exemplars must cover Positive, Negative, and NonSignificant; got "
            + ", ".join(sorted(c.value for c in classes))
        )
    examples = "\n\n".join(_exemplar_block(i + 1, ex) for i, ex in enumerate(exemplars))
    training_info = (render_stats_block(stats) + "\n\n") if stats is not None else ""
    template = load_template(EFFECT_FORECAST)
    out = render_template(template, {"query": p.text})
    out = render_template(out, {"examples": examples, "training_info": training_info}, escape=False)
    return out


def parse_forecast_response(
    raw: str,
    query_id: str = "",
    predictor_id: str = "prompted",
    effect_range: tuple[float, float] = EFFECT_RANGE,
) -> EffectPrediction:
    """Extract the Hedges_g triple, enforcing the advertised range and strict
    CI ordering. Violations are retryable format errors, never clamped."""
    payload = extract_json_value(raw)
    if not isinstance(payload, dict):
        raise ResponseFormatError("payload is not a JSON object", raw=raw)
    values: dict[str, float] = {}
    for key in ("Hedges_g", "Hedges_g_ci_lower", "Hedges_g_ci_upper"):
        if key not in payload:
            raise ResponseFormatError(f"missing key {key}", raw=raw)
        value = payload[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ResponseFormatError(f"{key} is not numeric", raw=raw)
        values[key] = float(value)
    effect = values["Hedges_g"]
    lo, hi = effect_range
    if not (lo <= effect <= hi):
        raise ResponseFormatError(f"Hedges_g {effect} outside [{lo}, {hi}]", raw=raw)
    if not (values["Hedges_g_ci_lower"] < effect < values["Hedges_g_ci_upper"]):
        raise ResponseFormatError(
            f"CI must satisfy lower < effect < upper, got "
            f"[{values['Hedges_g_ci_lower']}, {effect}, {values['Hedges_g_ci_upper']}]",
            raw=raw,
        )
    return EffectPrediction(
        effect=effect,
        ci_lower=values["Hedges_g_ci_lower"],
        ci_upper=values["Hedges_g_ci_upper"],
        predictor_id=predictor_id,
        query_id=query_id,
    )


class PromptedForecaster:
    predictor_id = "prompted"

    def __init__(
        self,
        client: ChatClient,
        model_id: str,
        exemplars: Sequence[ForecastExemplar] = DEFAULT_FORECAST_EXEMPLARS,
        stats: CorpusStats | None = None,
        effect_range: tuple[float, float] = EFFECT_RANGE,
        temperature: float = 0.0,
        max_output_tokens: int = 256,
        max_format_retries: int = 1,
    ):
        self.client = client
        self.model_id = model_id
        self.exemplars = tuple(exemplars)
        self.stats = stats
        self.effect_range = effect_range
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.max_format_retries = max_format_retries

    def predict(self, p: PredictorInput) -> EffectPrediction:
        prompt = render_forecast_prompt(p, self.exemplars, self.stats)
        req = ChatRequest(
            model_id=self.model_id,
            prompt=prompt,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            request_tag="forecast",
        )
        raw = self.client.complete(req)
        for attempt in range(self.max_format_retries + 1):
            try:
                return parse_forecast_response(
                    raw, query_id=p.query_id, predictor_id=self.predictor_id,
                    effect_range=self.effect_range,
                )
            except ResponseFormatError as err:
                if not err.retryable or attempt >= self.max_format_retries:
                    raise PredictionError(
                        f"forecast output unusable after {attempt} retry(ies): {err}",
                        query_id=p.query_id,
                        raw=err.raw,
                    ) from err
                raw = self.client.complete(req, refresh=True)
        raise AssertionError("unreachable")


# --- external regressor endpoint ----------------------------------------------


class ExternalRegressorClient:
    """Client for a separately served supervised regressor.

    Wire contract: POST {query_id, text} -> {effect, ci_lower, ci_upper},
    compact JSON both ways. Transient failures retry with the same backoff
    discipline as the chat client; a well-formed response with an invalid
    triple is a hard contract violation, never retried.
    """

    predictor_id = "external_regressor"

    def __init__(
        self,
        endpoint: str,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise ConfigError("external regressor endpoint is not configured")
        self.endpoint = endpoint
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def predict(self, p: PredictorInput) -> EffectPrediction:
        payload = self._post_with_retry({"query_id": p.query_id, "text": p.text})
        try:
            effect = float(payload["effect"])
            ci_lower = float(payload["ci_lower"])
            ci_upper = float(payload["ci_upper"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EndpointContractError(f"regressor payload missing/invalid fields: {exc}") from exc
        if not (ci_lower < effect < ci_upper):
            raise EndpointContractError(
                f"regressor returned invalid triple [{ci_lower}, {effect}, {ci_upper}]"
            )
        return EffectPrediction(
            effect=effect,
            ci_lower=ci_lower,
            ci_upper=ci_upper,
            predictor_id=self.predictor_id,
            query_id=p.query_id,
        )

    def _post_with_retry(self, body: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                self._sleep(min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))
            try:
                response = self._client.post(self.endpoint, json=body)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = UpstreamError(f"transport failure: {exc}", retries=attempt)
                continue
            if response.status_code in RETRYABLE_STATUSES:
                last_error = UpstreamError(
                    f"transient regressor status {response.status_code}",
                    status=response.status_code,
                    retries=attempt,
                )
                continue
            if response.status_code >= 400:
                raise UpstreamError(
                    f"permanent regressor status {response.status_code}: {response.text[:500]}",
                    status=response.status_code,
                )
            try:
                return response.json()
            except ValueError as exc:
                raise EndpointContractError(f"regressor payload is not JSON: {exc}") from exc
        assert last_error is not None
        raise last_error


# --- training loss --------------------------------------------------------------


def mse_loss(pred: EffectPrediction, gold: Estimate) -> float:
    """Three-term squared error over effect and both confidence bounds."""
    if not gold.has_ci():
        raise ValueError("gold estimate lacks confidence bounds")
    return (
        (gold.effect_size - pred.effect) ** 2
        + (gold.ci_lower - pred.ci_lower) ** 2
        + (gold.ci_upper - pred.ci_upper) ** 2
    )
