"""Named, resumable pipeline runs.

A run executes ingest -> split -> query generation -> (synth stage) ->
predict -> evaluate, persisting each stage's output under one directory with
a manifest of content hashes. Re-running with an unchanged config resumes
after the last stage whose signature and outputs still match, so a warm run
touches no upstream service at all.
"""

from __future__ import annotations

import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Sequence

from . import __version__
from .dataset import (
    DEFAULT_RATIOS,
    EstimateCorpus,
    SplitAssignment,
    build_averaged_targets,
    corpus_stats,
    filter_single_arm,
    load_corpus,
    split_by_rct,
)
from .errors import ConfigError, DataError, EffectcastError, PredictionError
from .fileio import read_json, read_jsonl, sha256_file, sha256_text, stable_dumps, write_json, write_jsonl
from .llm import ChatClient
from .metrics import EvaluationConfig, MetricReport, evaluate, report_markdown
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
from .querygen import generate_queries
from .synthrct import linearize_synthrct, synthesize
from .types import Estimate, EffectPrediction, GeneratedQuery, SyntheticRCT, parse_query_id

PIPELINE_MODES = ("end_to_end", "synthetic_rct", "gold_rct")
PREDICTOR_IDS = ("mean_effect", "retrieval_lookup", "prompted", "external_regressor")


class RunStageError(EffectcastError):
    """A stage failed; carries the stage name and offending item."""

    def __init__(self, stage: str, item_id: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed on item {item_id!r}: {cause}")
        self.stage = stage
        self.item_id = item_id
        self.cause = cause


@dataclass(frozen=True)
class LlmSettings:
    base_url: str = ""
    cache_dir: str = ""
    max_in_flight: int = 4
    max_retries: int = 4
    backoff_base: float = 0.5
    timeout: float = 60.0


@dataclass(frozen=True)
class PredictorSpec:
    id: str = "mean_effect"
    model: str = ""
    k1: float = 1.2
    b: float = 0.75
    index_target: str = "queries"  # or "descriptions"
    include_train_stats: bool = False
    effect_range: tuple[float, float] = (-2.0, 2.0)
    endpoint: str = ""

    def validate(self) -> None:
        if self.id not in PREDICTOR_IDS:
            raise ConfigError(f"unknown predictor id {self.id!r}, expected one of {PREDICTOR_IDS}")
        if self.id == "prompted" and not self.model:
            raise ConfigError("prompted predictor needs a model id")
        if self.id == "external_regressor" and not self.endpoint:
            raise ConfigError("external_regressor predictor needs an endpoint")
        if self.index_target not in ("queries", "descriptions"):
            raise ConfigError(f"unknown index_target {self.index_target!r}")


@dataclass(frozen=True)
class RunConfig:
    corpus_path: str
    out_dir: str
    corpus_format: str = "jsonl"
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    seed: int = 0
    in_domain_sector: str = "health"
    eval_split: str = "test_id"
    mode: str = "end_to_end"
    predictor: PredictorSpec = field(default_factory=PredictorSpec)
    querygen_model: str = ""
    synthrct_model: str = ""
    querygen_temperature: float = 0.0
    max_format_retries: int = 2
    levels: tuple[int, ...] = (0,)
    averaged_targets: bool = False
    llm: LlmSettings = field(default_factory=LlmSettings)

    def validate(self) -> None:
        if self.mode not in PIPELINE_MODES:
            raise ConfigError(f"unknown pipeline mode {self.mode!r}, expected one of {PIPELINE_MODES}")
        if self.eval_split not in ("train", "val", "test_id", "test_ood"):
            raise ConfigError(f"unknown eval split {self.eval_split!r}")
        if not self.levels or any(l not in (0, 1, 2, 3) for l in self.levels):
            raise ConfigError(f"levels must be a non-empty subset of 0..3, got {self.levels}")
        if self.averaged_targets and 3 not in self.levels:
            raise ConfigError("averaged-target mode requires level 3 among the scored levels")
        self.predictor.validate()
        # Query generation always needs the LLM endpoint, whatever the mode.
        if not self.llm.base_url:
            raise ConfigError("llm.base_url is required (query generation is LLM-backed)")
        if not self.querygen_model:
            raise ConfigError("querygen_model is required")
        if self.mode == "synthetic_rct" and not self.synthrct_model:
            raise ConfigError("synthrct_model is required in synthetic_rct mode")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        known = {
            "corpus_path", "out_dir", "corpus_format", "ratios", "seed", "in_domain_sector",
            "eval_split", "mode", "predictor", "querygen_model", "synthrct_model",
            "querygen_temperature", "max_format_retries", "levels", "averaged_targets", "llm",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        data = dict(raw)
        if "predictor" in data:
            data["predictor"] = PredictorSpec(**{
                **data["predictor"],
                **(
                    {"effect_range": tuple(data["predictor"]["effect_range"])}
                    if "effect_range" in data["predictor"]
                    else {}
                ),
            })
        if "llm" in data:
            data["llm"] = LlmSettings(**data["llm"])
        if "ratios" in data:
            data["ratios"] = tuple(data["ratios"])
        if "levels" in data:
            data["levels"] = tuple(data["levels"])
        try:
            config = cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        try:
            return cls.from_dict(read_json(path))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except ValueError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        out = {
            "corpus_path": self.corpus_path,
            "out_dir": self.out_dir,
            "corpus_format": self.corpus_format,
            "ratios": list(self.ratios),
            "seed": self.seed,
            "in_domain_sector": self.in_domain_sector,
            "eval_split": self.eval_split,
            "mode": self.mode,
            "predictor": {
                "id": self.predictor.id,
                "model": self.predictor.model,
                "k1": self.predictor.k1,
                "b": self.predictor.b,
                "index_target": self.predictor.index_target,
                "include_train_stats": self.predictor.include_train_stats,
                "effect_range": list(self.predictor.effect_range),
                "endpoint": self.predictor.endpoint,
            },
            "querygen_model": self.querygen_model,
            "synthrct_model": self.synthrct_model,
            "querygen_temperature": self.querygen_temperature,
            "max_format_retries": self.max_format_retries,
            "levels": list(self.levels),
            "averaged_targets": self.averaged_targets,
            "llm": {
                "base_url": self.llm.base_url,
                "cache_dir": self.llm.cache_dir,
                "max_in_flight": self.llm.max_in_flight,
                "max_retries": self.llm.max_retries,
                "backoff_base": self.llm.backoff_base,
                "timeout": self.llm.timeout,
            },
        }
        return out


class RunManifest:
    """Per-run record of config, stage signatures, output hashes, and timing."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / "manifest.json"
        self.data: dict = {"tool_version": __version__, "stages": {}}
        if self.path.exists():
            self.data = read_json(self.path)

    def stage(self, name: str) -> dict | None:
        return self.data["stages"].get(name)

    def drop_stage(self, name: str) -> None:
        if self.data["stages"].pop(name, None) is not None:
            write_json(self.path, self.data)

    def record_stage(self, name: str, signature: str, outputs: Mapping[str, str], elapsed: float) -> None:
        self.data["stages"][name] = {
            "signature": signature,
            "outputs": dict(outputs),
            "elapsed_s": round(elapsed, 4),
        }
        write_json(self.path, self.data)

    def set_config(self, config: RunConfig) -> None:
        self.data["config"] = config.to_dict()
        self.data["config_hash"] = sha256_text(stable_dumps(config.to_dict()))
        write_json(self.path, self.data)


def _signature(parts: Mapping[str, Any]) -> str:
    return sha256_text(stable_dumps(parts))


def _outputs_fresh(run_dir: Path, entry: Mapping | None, signature: str) -> bool:
    if not entry or entry.get("signature") != signature:
        return False
    for rel, digest in entry["outputs"].items():
        path = run_dir / rel
        if not path.exists() or sha256_file(path) != digest:
            return False
    return True


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> Iterator:
    """Apply ``fn`` across items, yielding results in input order.

    Results stream as they complete so a failing item still leaves every
    earlier item's output written (partial stage outputs are retained)."""
    if workers <= 1 or len(items) <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, items)


class PipelineRun:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.run_dir = Path(config.out_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(self.run_dir)
        self.manifest.set_config(config)
        cache_dir = config.llm.cache_dir or str(self.run_dir.parent / "llm_cache")
        self.client = ChatClient(
            base_url=config.llm.base_url,
            cache_dir=cache_dir,
            max_retries=config.llm.max_retries,
            backoff_base=config.llm.backoff_base,
            max_in_flight=config.llm.max_in_flight,
            timeout=config.llm.timeout,
        )

    # -- stage plumbing -----------------------------------------------------

    def _fresh_dir(self, name: str) -> Path:
        """Stage output directory, cleared of any previous contents so a
        recompute never leaves stale files behind."""
        out = self.run_dir / name
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        return out

    def _run_stage(
        self,
        name: str,
        signature_parts: Mapping[str, Any],
        outputs: Sequence[str],
        compute: Callable[[], None],
    ) -> str:
        signature = _signature(signature_parts)
        entry = self.manifest.stage(name)
        if _outputs_fresh(self.run_dir, entry, signature):
            return signature
        started = time.perf_counter()
        compute()
        hashes = {rel: sha256_file(self.run_dir / rel) for rel in outputs}
        self.manifest.record_stage(name, signature, hashes, time.perf_counter() - started)
        return signature

    # -- stages ---------------------------------------------------------------

    def run(self) -> Path:
        try:
            return self._run_all()
        finally:
            self.client.close()

    def _run_all(self) -> Path:
        config = self.config
        corpus_hash = sha256_file(config.corpus_path) if Path(config.corpus_path).exists() else ""
        if not corpus_hash:
            raise ConfigError(f"corpus file not found: {config.corpus_path}")

        # ingest
        ingest_outputs = ["corpus/estimates.jsonl", "corpus/ingest_errors.jsonl"]

        def _ingest() -> None:
            self._fresh_dir("corpus")
            result = load_corpus(config.corpus_path, config.corpus_format)
            corpus = filter_single_arm(result.corpus)
            write_jsonl(self.run_dir / "corpus/estimates.jsonl", (e.to_dict() for e in corpus))
            write_jsonl(self.run_dir / "corpus/ingest_errors.jsonl", (e.to_dict() for e in result.errors))

        self._run_stage(
            "ingest",
            {"corpus": corpus_hash, "format": config.corpus_format, "filter": "single_arm"},
            ingest_outputs,
            _ingest,
        )
        corpus = self._load_estimates()
        estimates_hash = sha256_file(self.run_dir / "corpus/estimates.jsonl")

        # split
        def _split() -> None:
            self._fresh_dir("splits")
            assignment = split_by_rct(corpus, config.ratios, config.seed, config.in_domain_sector)
            write_json(self.run_dir / "splits/assignment.json", assignment.to_dict())

        self._run_stage(
            "split",
            {
                "estimates": estimates_hash,
                "ratios": list(config.ratios),
                "seed": config.seed,
                "sector": config.in_domain_sector,
            },
            ["splits/assignment.json"],
            _split,
        )
        assignment = SplitAssignment.from_dict(read_json(self.run_dir / "splits/assignment.json"))

        # query generation (all estimates, so indexes and eval always have text)
        def _queries() -> None:
            self._generate_all_queries(corpus)

        self._run_stage(
            "queries",
            {
                "estimates": estimates_hash,
                "model": config.querygen_model,
                "temperature": config.querygen_temperature,
                "retries": config.max_format_retries,
            },
            ["queries/queries.jsonl", "queries/warnings.jsonl"],
            _queries,
        )
        queries = self._load_queries()
        queries_hash = sha256_file(self.run_dir / "queries/queries.jsonl")

        scored = [
            q
            for q in queries
            if q.level in config.levels and assignment.split_of(q.estimate_id) == config.eval_split
        ]
        if not scored:
            raise DataError(
                f"no queries to score: split {config.eval_split!r} levels {list(config.levels)}"
            )

        if config.mode == "gold_rct":
            missing = [e.estimate_id for e in corpus if not e.intervention_desc.strip() or not e.outcome_desc.strip()]
            if missing:
                raise ConfigError(f"gold_rct mode needs gold descriptions; missing for {missing[:5]}")

        # synth stage
        synth_hash = ""
        synth_by_query: dict[str, SyntheticRCT] = {}
        if config.mode != "synthetic_rct":
            # a mode switch in a reused run dir must not leave a stale stage
            self.manifest.drop_stage("synthrct")
            if (self.run_dir / "synthrct").exists():
                shutil.rmtree(self.run_dir / "synthrct")
        if config.mode == "synthetic_rct":
            def _synth() -> None:
                self._synthesize_scored(scored)

            self._run_stage(
                "synthrct",
                {
                    "queries": queries_hash,
                    "model": config.synthrct_model,
                    "retries": config.max_format_retries,
                    "scored": sorted(q.query_id for q in scored),
                },
                ["synthrct/synthrct.jsonl"],
                _synth,
            )
            synth_hash = sha256_file(self.run_dir / "synthrct/synthrct.jsonl")
            for _, record in read_jsonl(self.run_dir / "synthrct/synthrct.jsonl"):
                synth_by_query[record["query_id"]] = SyntheticRCT.from_dict(record["synthetic_rct"])

        # predict
        def _predict() -> None:
            self._predict_scored(scored, corpus, assignment, queries, synth_by_query)

        self._run_stage(
            "predict",
            {
                "queries": queries_hash,
                "synth": synth_hash,
                "mode": config.mode,
                "eval_split": config.eval_split,
                "levels": list(config.levels),
                "predictor": config.to_dict()["predictor"],
            },
            ["predictions/predictions.jsonl", "predictions/failures.jsonl"],
            _predict,
        )
        predictions_hash = sha256_file(self.run_dir / "predictions/predictions.jsonl")

        # evaluate
        def _evaluate() -> None:
            self._evaluate(corpus, assignment, queries)

        report_outputs = [f"report/metrics_L{l}.json" for l in sorted(set(config.levels))]
        if config.averaged_targets:
            report_outputs.append("report/metrics_L3_averaged.json")
        report_outputs.append("report/metrics.md")
        self._run_stage(
            "report",
            {
                "predictions": predictions_hash,
                "estimates": estimates_hash,
                "averaged": config.averaged_targets,
                "eval_split": config.eval_split,
            },
            report_outputs,
            _evaluate,
        )
        return self.run_dir

    # -- stage bodies --------------------------------------------------------

    def _load_estimates(self) -> EstimateCorpus:
        estimates = tuple(
            Estimate.from_dict(record) for _, record in read_jsonl(self.run_dir / "corpus/estimates.jsonl")
        )
        if not estimates:
            raise DataError("ingest produced an empty corpus")
        return EstimateCorpus(estimates=estimates, source_label=Path(self.config.corpus_path).name)

    def _load_queries(self) -> list[GeneratedQuery]:
        return [GeneratedQuery.from_dict(r) for _, r in read_jsonl(self.run_dir / "queries/queries.jsonl")]

    def _generate_all_queries(self, corpus: EstimateCorpus) -> None:
        config = self.config
        self._fresh_dir("queries")
        out_path = self.run_dir / "queries/queries.jsonl"
        warn_path = self.run_dir / "queries/warnings.jsonl"

        def _one(e: Estimate):
            try:
                return generate_queries(
                    e,
                    self.client,
                    config.querygen_model,
                    temperature=config.querygen_temperature,
                    max_format_retries=config.max_format_retries,
                )
            except EffectcastError as exc:
                raise RunStageError("queries", e.estimate_id, exc) from exc

        with open(out_path, "w", encoding="utf-8") as out, open(warn_path, "w", encoding="utf-8") as warn:
            for result in _map_ordered(_one, corpus.estimates, config.llm.max_in_flight):
                for q in result.queries:
                    out.write(stable_dumps(q.to_dict()) + "\n")
                for w in result.warnings:
                    warn.write(stable_dumps(w.to_dict()) + "\n")

    def _synthesize_scored(self, scored: Sequence[GeneratedQuery]) -> None:
        config = self.config
        self._fresh_dir("synthrct")
        out_path = self.run_dir / "synthrct/synthrct.jsonl"

        def _one(q: GeneratedQuery):
            try:
                return synthesize(
                    q, self.client, config.synthrct_model, max_format_retries=config.max_format_retries
                )
            except EffectcastError as exc:
                raise RunStageError("synthrct", q.query_id, exc) from exc

        with open(out_path, "w", encoding="utf-8") as fh:
            for outcome in _map_ordered(_one, list(scored), config.llm.max_in_flight):
                fh.write(stable_dumps(outcome.to_dict()) + "\n")

    def _build_predictor(
        self,
        corpus: EstimateCorpus,
        assignment: SplitAssignment,
        queries: Sequence[GeneratedQuery],
    ):
        spec = self.config.predictor
        by_id = corpus.by_id()
        train_ids = set(assignment.ids_for("train"))
        val_ids = set(assignment.ids_for("val"))
        if spec.id == "mean_effect":
            train = [e for e in corpus if e.estimate_id in train_ids]
            return MeanEffectPredictor(fit_mean_effect(train))
        if spec.id == "retrieval_lookup":
            items = []
            for q in queries:
                if q.estimate_id not in train_ids and q.estimate_id not in val_ids:
                    continue
                gold = by_id[q.estimate_id]
                if not gold.has_ci():
                    continue
                text = (
                    q.text
                    if spec.index_target == "queries"
                    else linearize_synthrct(
                        SyntheticRCT(intervention=gold.intervention_desc, outcome=gold.outcome_desc)
                    )
                )
                items.append(
                    Bm25Item(
                        text=text,
                        effect=gold.effect_size,
                        ci_lower=gold.ci_lower,
                        ci_upper=gold.ci_upper,
                        level=q.level,
                    )
                )
            if not items:
                raise DataError("retrieval predictor has no indexable train/val items with CIs")
            return RetrievalLookupPredictor(build_bm25_index(items, k1=spec.k1, b=spec.b))
        if spec.id == "prompted":
            stats = None
            if spec.include_train_stats:
                train = [e for e in corpus if e.estimate_id in train_ids]
                stats = corpus_stats(EstimateCorpus(tuple(train), corpus.source_label))
            return PromptedForecaster(
                self.client,
                spec.model,
                stats=stats,
                effect_range=spec.effect_range,
                max_format_retries=1,
            )
        return ExternalRegressorClient(spec.endpoint)

    def _predict_scored(
        self,
        scored: Sequence[GeneratedQuery],
        corpus: EstimateCorpus,
        assignment: SplitAssignment,
        queries: Sequence[GeneratedQuery],
        synth_by_query: Mapping[str, SyntheticRCT],
    ) -> None:
        config = self.config
        by_id = corpus.by_id()
        predictor = self._build_predictor(corpus, assignment, queries)
        self._fresh_dir("predictions")
        pred_path = self.run_dir / "predictions/predictions.jsonl"
        fail_path = self.run_dir / "predictions/failures.jsonl"

        def _input_text(q: GeneratedQuery) -> str:
            if config.mode == "end_to_end":
                return q.text
            if config.mode == "gold_rct":
                gold = by_id[q.estimate_id]
                return linearize_synthrct(
                    SyntheticRCT(intervention=gold.intervention_desc, outcome=gold.outcome_desc)
                )
            rct = synth_by_query.get(q.query_id)
            if rct is None:
                raise PredictionError("no synthetic representation", query_id=q.query_id)
            return linearize_synthrct(rct)

        def _one(q: GeneratedQuery):
            try:
                text = _input_text(q)
                pred = predictor.predict(PredictorInput(query_id=q.query_id, text=text, level=q.level))
                return ("ok", pred)
            except (PredictionError, ValueError) as exc:
                return ("failed", {"query_id": q.query_id, "reason": str(exc)})

        with open(pred_path, "w", encoding="utf-8") as ok_fh, open(fail_path, "w", encoding="utf-8") as fail_fh:
            for status, payload in _map_ordered(_one, list(scored), config.llm.max_in_flight):
                if status == "ok":
                    ok_fh.write(stable_dumps(payload.to_dict()) + "\n")
                else:
                    fail_fh.write(stable_dumps(payload) + "\n")

    def _evaluate(
        self,
        corpus: EstimateCorpus,
        assignment: SplitAssignment,
        queries: Sequence[GeneratedQuery],
    ) -> None:
        config = self.config
        self._fresh_dir("report")
        preds = [
            EffectPrediction.from_dict(r)
            for _, r in read_jsonl(self.run_dir / "predictions/predictions.jsonl")
        ]
        failures = [r for _, r in read_jsonl(self.run_dir / "predictions/failures.jsonl")]
        golds = [e for e in corpus if assignment.split_of(e.estimate_id) == config.eval_split]

        def _level_of(query_id: str) -> int:
            return parse_query_id(query_id)[1]

        reports: list[MetricReport] = []
        documents: list[dict] = []
        for level in sorted(set(config.levels)):
            level_preds = [p for p in preds if _level_of(p.query_id) == level]
            level_failures = sum(1 for f in failures if _level_of(f["query_id"]) == level)
            label = f"{config.predictor.id} {config.eval_split} L{level}"
            report = evaluate(
                level_preds,
                golds=golds,
                n_failures=level_failures,
                config=EvaluationConfig(label=label),
            )
            reports.append(report)
            documents.append(
                {
                    "level": level,
                    "averaged": False,
                    "mode": config.mode,
                    "split": config.eval_split,
                    "metrics": report.to_dict(),
                }
            )
            write_json(self.run_dir / f"report/metrics_L{level}.json", documents[-1])

        if config.averaged_targets:
            level3_queries = [
                q
                for q in queries
                if q.level == 3 and assignment.split_of(q.estimate_id) == config.eval_split
            ]
            targets_result = build_averaged_targets(level3_queries, corpus)
            level_preds = [p for p in preds if _level_of(p.query_id) == 3]
            level_failures = sum(1 for f in failures if _level_of(f["query_id"]) == 3)
            label = f"{config.predictor.id} {config.eval_split} L3 averaged"
            report = evaluate(
                level_preds,
                averaged_targets=targets_result.targets,
                n_failures=level_failures,
                config=EvaluationConfig(label=label),
            )
            reports.append(report)
            doc = {
                "level": 3,
                "averaged": True,
                "mode": config.mode,
                "split": config.eval_split,
                "n_zero_match_excluded": targets_result.n_excluded,
                "avg_matched_size": targets_result.avg_matched_size,
                "metrics": report.to_dict(),
            }
            documents.append(doc)
            write_json(self.run_dir / "report/metrics_L3_averaged.json", doc)

        md_path = self.run_dir / "report/metrics.md"
        header = (
            f"# Run report\n\n"
            f"predictor: {config.predictor.id}; mode: {config.mode}; split: {config.eval_split}; "
            f"variance convention: population (divide by N)\n\n"
        )
        md_path.write_text(header + report_markdown(reports, mark_best=False), encoding="utf-8")


def run(config: RunConfig) -> Path:
    """Execute (or resume) the configured pipeline; returns the run directory."""
    return PipelineRun(config).run()


# -- cross-run reporting -------------------------------------------------------


def _load_run_reports(run_dir: Path) -> list[dict]:
    report_dir = run_dir / "report"
    if not report_dir.is_dir():
        raise DataError(f"{run_dir} has no report directory")
    docs = []
    for path in sorted(report_dir.glob("metrics_*.json")):
        doc = read_json(path)
        doc["run"] = run_dir.name
        docs.append(doc)
    return docs


def compare(run_dirs: Sequence[Path | str]) -> tuple[list[dict], str]:
    """One row per (run, report) in the standard column order, best value per
    column marked. Rows with a mode/level mix unlike the first row are flagged."""
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    docs: list[dict] = []
    for run_dir in sorted(Path(d) for d in run_dirs):
        docs.extend(_load_run_reports(run_dir))
    if not docs:
        raise DataError("no reports found in the given run directories")

    docs.sort(key=lambda d: (d["run"], d["level"], d["averaged"]))
    reference = (docs[0]["mode"], docs[0]["level"], docs[0]["averaged"])
    rows = []
    reports = []
    for doc in docs:
        flags = []
        if (doc["mode"], doc["level"], doc["averaged"]) != reference:
            flags.append("mode/level mix differs from first row")
        m = doc["metrics"]
        label = f"{doc['run']}: {m['predictor_id']} L{doc['level']}" + (
            " averaged" if doc["averaged"] else ""
        )
        rows.append({**doc, "row_label": label, "row_flags": flags})
        reports.append(
            MetricReport(
                n_scored=m["n_scored"],
                n_excluded=m["n_excluded"],
                rmse=m["rmse"],
                mae=m["mae"],
                r2=m["r2"],
                pearson=m["pearson"],
                spearman=m["spearman"],
                direction_acc=m["direction_acc"],
                econ_acc=m["econ_acc"],
                stat_sig_f1=m["stat_sig_f1"],
                stat_sig_acc=m["stat_sig_acc"],
                ci_valid_rate=m["ci_valid_rate"],
                degeneracy_flags=tuple(m["degeneracy_flags"]),
                predictor_id=m["predictor_id"],
                label=label,
            )
        )
    markdown = report_markdown(reports, mark_best=len(reports) > 1)
    flagged = [r for r in rows if r["row_flags"]]
    if flagged:
        markdown += "\nFlagged rows:\n" + "\n".join(
            f"- {r['row_label']}: {'; '.join(r['row_flags'])}" for r in flagged
        ) + "\n"
    return rows, markdown


CURVE_METRICS = ("rmse", "mae", "r2", "pearson", "spearman", "direction_acc", "econ_acc", "stat_sig_f1")


def degradation_curve(run_dirs: Sequence[Path | str]) -> tuple[list[dict], str]:
    """Per-predictor (level -> metrics) series as row dicts plus a plot-ready
    CSV string; levels never scored are simply absent."""
    rows: list[dict] = []
    for run_dir in sorted(Path(d) for d in run_dirs):
        for doc in _load_run_reports(run_dir):
            if doc["averaged"]:
                continue
            m = doc["metrics"]
            rows.append(
                {
                    "predictor_id": m["predictor_id"],
                    "run": doc["run"],
                    "level": doc["level"],
                    **{k: m[k] for k in CURVE_METRICS},
                }
            )
    if not rows:
        raise DataError("no level reports found")
    rows.sort(key=lambda r: (r["predictor_id"], r["run"], r["level"]))
    header = ["predictor_id", "run", "level", *CURVE_METRICS]
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join("" if row[k] is None else str(row[k]) for k in header)
        )
    return rows, "\n".join(lines) + "\n"
