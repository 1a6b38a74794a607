"""Thin HTTP facade over the pipeline for interactive what-if analysis.

Endpoints (all bodies compact JSON, error envelope {code, message, detail}):

    POST /synth-rct   {query_text} -> {synthetic_rct, warnings, retries}
    POST /forecast    {query_text, synthetic_rct?, predictor_id, session?}
                      -> {prediction, significance_class,
                          economically_meaningful, pipeline_trace}
    GET  /history     ?session=... -> newest-first forecast log
    GET  /predictors  -> {predictors: [...]} (what the registry exposes, so
                         the console never hard-codes predictor names)

No authentication: deploy behind a trusted boundary. Cross-origin requests
are allowed only from the configured console origin.

Run with:  python -m effectcast.service --config service.json --port 8765
"""

from __future__ import annotations

import datetime as _dt
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .dataset import EstimateCorpus, corpus_stats
from .errors import (
    ConfigError,
    EffectcastError,
    PredictionError,
    ResponseFormatError,
    UpstreamError,
)
from .fileio import read_json, read_jsonl, stable_dumps
from .llm import ChatClient, ChatRequest
from .metrics import is_economically_meaningful
from .predictors import (
    Bm25Item,
    ExternalRegressorClient,
    MeanEffectPredictor,
    PredictorInput,
    PromptedForecaster,
    RetrievalLookupPredictor,
    build_bm25_index,
    fit_mean_effect,
)
from .synthrct import (
    linearize_synthrct,
    parse_synthrct_response_verbose,
    render_synthrct_prompt,
)
from .types import Estimate, SyntheticRCT, is_placeholder

_SESSION_RE = re.compile(r"[A-Za-z0-9_-]{1,64}")


@dataclass(frozen=True)
class ServiceSettings:
    llm_base_url: str
    synthrct_model: str
    history_dir: str
    predictors: Mapping[str, Mapping[str, Any]]
    mode: str = "synthetic_rct"  # or end_to_end: /forecast without user edits skips synth
    console_origin: str = "http://127.0.0.1:5173"
    cache_dir: str = ""
    max_format_retries: int = 2
    llm_max_retries: int = 4
    llm_backoff_base: float = 0.25

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceSettings":
        raw = read_json(path)
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"invalid service config: {exc}") from exc


def _load_estimates(path: str) -> list[Estimate]:
    return [Estimate.from_dict(record) for _, record in read_jsonl(path)]


def build_registry(settings: ServiceSettings, client: ChatClient) -> dict[str, Any]:
    """Construct every configured predictor up front; bad config fails fast."""
    registry: dict[str, Any] = {}
    for pid, spec in settings.predictors.items():
        if pid == "mean_effect":
            registry[pid] = MeanEffectPredictor(fit_mean_effect(_load_estimates(spec["train_estimates"])))
        elif pid == "retrieval_lookup":
            items = [
                Bm25Item(
                    text=r["text"],
                    effect=float(r["effect"]),
                    ci_lower=float(r["ci_lower"]),
                    ci_upper=float(r["ci_upper"]),
                    level=r.get("level"),
                )
                for _, r in read_jsonl(spec["items"])
            ]
            registry[pid] = RetrievalLookupPredictor(
                build_bm25_index(items, k1=spec.get("k1", 1.2), b=spec.get("b", 0.75))
            )
        elif pid == "prompted":
            stats = None
            if spec.get("train_estimates"):
                estimates = _load_estimates(spec["train_estimates"])
                stats = corpus_stats(EstimateCorpus(tuple(estimates), "train"))
            registry[pid] = PromptedForecaster(
                client,
                spec["model"],
                stats=stats,
                effect_range=tuple(spec.get("effect_range", (-2.0, 2.0))),
            )
        elif pid == "external_regressor":
            registry[pid] = ExternalRegressorClient(spec["endpoint"])
        else:
            raise ConfigError(f"unknown predictor id in registry: {pid!r}")
    if not registry:
        raise ConfigError("predictor registry is empty")
    return registry


class HistoryStore:
    """Append-only per-session JSONL logs, replayed on read."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, session: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session, threading.Lock())

    def _path(self, session: str) -> Path:
        return self.root / f"{session}.jsonl"

    def append(self, session: str, entry: Mapping[str, Any]) -> None:
        with self._lock(session):
            with open(self._path(session), "a", encoding="utf-8") as fh:
                fh.write(stable_dumps(entry) + "\n")

    def entries(self, session: str) -> list[dict]:
        path = self._path(session)
        if not path.exists():
            return []
        out = [record for _, record in read_jsonl(path)]
        out.reverse()  # newest first
        return out


class SynthRctBody(BaseModel):
    query_text: str = ""


class EditedRct(BaseModel):
    intervention: str | None = None
    outcome: str | None = None


class ForecastBody(BaseModel):
    query_text: str = ""
    predictor_id: str = ""
    synthetic_rct: EditedRct | None = None
    session: str = "default"


def _error(status: int, code: str, message: str, detail: Any = None) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"code": code, "message": message, "detail": detail}
    )


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Any = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


def create_app(settings: ServiceSettings, client: ChatClient | None = None) -> FastAPI:
    client = client or ChatClient(
        base_url=settings.llm_base_url,
        cache_dir=settings.cache_dir or None,
        max_retries=settings.llm_max_retries,
        backoff_base=settings.llm_backoff_base,
    )
    registry = build_registry(settings, client)
    history = HistoryStore(settings.history_dir)

    app = FastAPI(title="effectcast service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[settings.console_origin],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError) -> JSONResponse:
        return _error(exc.status, exc.code, exc.message, exc.detail)

    @app.exception_handler(EffectcastError)
    async def _uncaught(_request: Request, exc: EffectcastError) -> JSONResponse:
        return _error(500, "internal_error", str(exc))

    def _synthesize_text(query_text: str) -> tuple[SyntheticRCT, list[str], int]:
        prompt = render_synthrct_prompt(query_text)
        req = ChatRequest(
            model_id=settings.synthrct_model,
            prompt=prompt,
            request_tag="synthrct",
        )
        retries = 0
        try:
            raw = client.complete(req)
            while True:
                try:
                    rct, warnings = parse_synthrct_response_verbose(raw)
                    return rct, list(warnings), retries
                except ResponseFormatError as err:
                    if not err.retryable or retries >= settings.max_format_retries:
                        raise
                    retries += 1
                    raw = client.complete(req, refresh=True)
        except ResponseFormatError as err:
            raise ServiceError(
                502,
                "upstream_format",
                f"model output unusable after {retries} retry(ies)",
                detail={"raw": err.raw, "retries": retries},
            ) from err
        except UpstreamError as err:
            raise ServiceError(
                502,
                "upstream_unavailable",
                str(err),
                detail={"retries": err.retries},
            ) from err

    @app.post("/synth-rct")
    async def synth_rct(body: SynthRctBody) -> dict:
        if not body.query_text.strip():
            raise ServiceError(400, "empty_query", "query_text must be non-empty")
        rct, warnings, retries = _synthesize_text(body.query_text)
        return {
            "synthetic_rct": rct.to_dict(),
            "warnings": warnings,
            "retries": retries,
        }

    @app.post("/forecast")
    async def forecast(body: ForecastBody) -> dict:
        if not body.query_text.strip():
            raise ServiceError(400, "empty_query", "query_text must be non-empty")
        predictor = registry.get(body.predictor_id)
        if predictor is None:
            raise ServiceError(
                400,
                "unknown_predictor",
                f"predictor {body.predictor_id!r} is not registered",
                detail={"registered": sorted(registry)},
            )
        if not _SESSION_RE.fullmatch(body.session):
            raise ServiceError(400, "bad_session", "session must match [A-Za-z0-9_-]{1,64}")

        trace: list[dict] = []
        rct_for_history: SyntheticRCT | None = None
        if body.synthetic_rct is not None:
            # Human-edited path: the representation is used verbatim, no synth stage.
            edited = body.synthetic_rct
            try:
                rct_for_history = SyntheticRCT(
                    intervention=None if is_placeholder(edited.intervention) else edited.intervention,
                    outcome=None if is_placeholder(edited.outcome) else edited.outcome,
                )
                text = linearize_synthrct(rct_for_history)
            except ValueError as exc:
                raise ServiceError(422, "empty_representation", str(exc))
            trace.append(
                {
                    "stage": "representation",
                    "source": "user-edited",
                    "intervention": edited.intervention,
                    "outcome": edited.outcome,
                    "text_used": text,
                }
            )
        elif settings.mode == "synthetic_rct":
            rct, warnings, retries = _synthesize_text(body.query_text)
            try:
                text = linearize_synthrct(rct)
            except ValueError as exc:
                raise ServiceError(422, "empty_representation", str(exc))
            rct_for_history = rct
            trace.append(
                {
                    "stage": "representation",
                    "source": "generated",
                    "intervention": rct.intervention,
                    "outcome": rct.outcome,
                    "warnings": warnings,
                    "retries": retries,
                    "text_used": text,
                }
            )
        else:
            text = body.query_text

        try:
            prediction = predictor.predict(
                PredictorInput(query_id=f"interactive-{body.session}", text=text)
            )
        except PredictionError as exc:
            raise ServiceError(
                422,
                "prediction_failed",
                str(exc),
                detail={"raw": exc.raw},
            ) from exc
        except UpstreamError as exc:
            raise ServiceError(502, "upstream_unavailable", str(exc), detail={"retries": exc.retries}) from exc

        trace.append(
            {
                "stage": "predict",
                "predictor_id": prediction.predictor_id,
                "input_text": text,
                "effect": prediction.effect,
                "ci_lower": prediction.ci_lower,
                "ci_upper": prediction.ci_upper,
            }
        )
        significance = prediction.significance().value
        meaningful = is_economically_meaningful(prediction.effect)
        entry = {
            "query_text": body.query_text,
            "synthetic_rct": rct_for_history.to_dict() if rct_for_history else None,
            "prediction": prediction.to_dict(),
            "significance_class": significance,
            "economically_meaningful": meaningful,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        history.append(body.session, entry)
        return {
            "prediction": prediction.to_dict(),
            "significance_class": significance,
            "economically_meaningful": meaningful,
            "pipeline_trace": trace,
        }

    @app.get("/history")
    async def get_history(session: str = Query(default="default")) -> dict:
        if not _SESSION_RE.fullmatch(session):
            raise ServiceError(400, "bad_session", "session must match [A-Za-z0-9_-]{1,64}")
        return {"session": session, "entries": history.entries(session)}

    @app.get("/predictors")
    async def list_predictors() -> dict:
        return {"predictors": sorted(registry)}

    return app


def main(argv: list[str] | None = None) -> None:
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="Serve the interactive forecasting API")
    parser.add_argument("--config", required=True, help="service settings JSON")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    args = parser.parse_args(argv)

    settings = ServiceSettings.from_file(args.config)
    uvicorn.run(create_app(settings), host=args.host, port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
