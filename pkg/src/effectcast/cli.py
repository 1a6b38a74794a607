"""Command-line interface.

Exit codes: 0 success, 1 config error, 2 data error, 3 upstream-service
failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import __version__
from .dataset import (
    AveragedTarget,
    EstimateCorpus,
    build_averaged_targets,
    corpus_stats,
    filter_single_arm,
    load_corpus,
    render_stats_markdown,
    split_by_rct,
)
from .errors import (
    ConfigError,
    DataError,
    EffectcastError,
    PredictionError,
    ResponseFormatError,
    UpstreamError,
)
from .fileio import read_json, read_jsonl, write_json, write_jsonl
from .llm import ChatClient
from .metrics import EvaluationConfig, evaluate, report_markdown
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
from .runner import RunConfig, RunStageError, compare as compare_runs, degradation_curve, run as run_pipeline
from .synthrct import synthesize
from .types import Estimate, EffectPrediction, GeneratedQuery


def _load_estimates(path: str) -> list[Estimate]:
    return [Estimate.from_dict(record) for _, record in read_jsonl(path)]


def _load_queries(path: str) -> list[GeneratedQuery]:
    return [GeneratedQuery.from_dict(record) for _, record in read_jsonl(path)]


def _client(base_url: str | None, cache_dir: str | None) -> ChatClient:
    if base_url:
        return ChatClient(base_url=base_url, cache_dir=cache_dir)
    return ChatClient.from_env(cache_dir=cache_dir)


def _resolve_model(model: str | None) -> str:
    resolved = model or ChatClient.default_model()
    if not resolved:
        raise ConfigError("no model id given: pass --model or set EFFECTCAST_LLM_MODEL")
    return resolved


@click.group()
@click.version_option(version=__version__)
def cli() -> None:
    """Forecast standardized causal effect sizes from natural-language queries."""


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=False))
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--errors", "errors_path", type=click.Path(), default=None)
@click.option("--stats", "stats_dir", type=click.Path(), default=None,
              help="also write corpus statistics (stats.json + stats.md)")
@click.option("--single-arm/--no-single-arm", default=True, help="keep only single intervention/outcome estimates")
def ingest(
    corpus_path: str, fmt: str, out_path: str, errors_path: str | None,
    stats_dir: str | None, single_arm: bool,
) -> None:
    """Load, validate, and filter an estimate corpus."""
    result = load_corpus(corpus_path, fmt)
    corpus = filter_single_arm(result.corpus) if single_arm else result.corpus
    write_jsonl(out_path, (e.to_dict() for e in corpus))
    if errors_path:
        write_jsonl(errors_path, (e.to_dict() for e in result.errors))
    if stats_dir:
        stats = corpus_stats(corpus)
        write_json(Path(stats_dir) / "stats.json", stats.to_dict())
        (Path(stats_dir) / "stats.md").write_text(render_stats_markdown(stats), encoding="utf-8")
    click.echo(
        f"ingested {len(corpus)} estimates ({len(result.errors)} malformed record(s) reported)"
    )


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--ratios", default="0.76,0.09,0.15", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sector", default="health", show_default=True, help="in-domain sector")
@click.option("--out", "out_path", required=True, type=click.Path())
def split(corpus_path: str, ratios: str, seed: int, sector: str, out_path: str) -> None:
    """Produce a leakage-safe split manifest (groups never straddle splits)."""
    try:
        parts = tuple(float(x) for x in ratios.split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse ratios {ratios!r}: {exc}") from exc
    corpus = EstimateCorpus(tuple(_load_estimates(corpus_path)), Path(corpus_path).name)
    assignment = split_by_rct(corpus, parts, seed, sector)
    write_json(out_path, assignment.to_dict())
    counts: dict[str, int] = {}
    for split_name in assignment.assignment.values():
        counts[split_name] = counts.get(split_name, 0) + 1
    click.echo("split sizes: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))


@cli.command("generate-queries")
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--model", default=None, help="model id (default: EFFECTCAST_LLM_MODEL)")
@click.option("--warnings", "warnings_path", type=click.Path(), default=None)
@click.option("--temperature", type=float, default=0.0, show_default=True)
@click.option("--base-url", default=None, help="LLM endpoint (default: EFFECTCAST_LLM_BASE_URL)")
@click.option("--cache-dir", default=None, type=click.Path())
def generate_queries_cmd(
    corpus_path: str,
    out_path: str,
    model: str | None,
    warnings_path: str | None,
    temperature: float,
    base_url: str | None,
    cache_dir: str | None,
) -> None:
    """Generate the four specificity-leveled queries for every estimate."""
    model = _resolve_model(model)
    estimates = _load_estimates(corpus_path)
    queries: list[dict] = []
    warnings: list[dict] = []
    with _client(base_url, cache_dir) as client:
        for e in estimates:
            result = generate_queries(e, client, model, temperature=temperature)
            queries.extend(q.to_dict() for q in result.queries)
            warnings.extend(w.to_dict() for w in result.warnings)
    write_jsonl(out_path, queries)
    if warnings_path:
        write_jsonl(warnings_path, warnings)
    click.echo(f"generated {len(queries)} queries ({len(warnings)} warning(s))")


@cli.command("synth-rct")
@click.option("--queries", "queries_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--model", default=None, help="model id (default: EFFECTCAST_LLM_MODEL)")
@click.option("--base-url", default=None)
@click.option("--cache-dir", default=None, type=click.Path())
def synth_rct_cmd(queries_path: str, out_path: str, model: str | None, base_url: str | None, cache_dir: str | None) -> None:
    """Map queries to structured intervention/outcome representations."""
    model = _resolve_model(model)
    queries = _load_queries(queries_path)
    with _client(base_url, cache_dir) as client:
        outcomes = [synthesize(q, client, model).to_dict() for q in queries]
    write_jsonl(out_path, outcomes)
    click.echo(f"synthesized {len(outcomes)} representations")


@cli.command()
@click.option("--inputs", "inputs_path", required=True, type=click.Path(),
              help="jsonl of {query_id, text, level} or generated-query records")
@click.option("--predictor", "predictor_id",
              type=click.Choice(["mean_effect", "retrieval_lookup", "prompted", "external_regressor"]),
              required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--failures", "failures_path", type=click.Path(), default=None)
@click.option("--train-estimates", type=click.Path(), default=None,
              help="estimates jsonl for mean_effect fitting / prompted stats")
@click.option("--index-items", type=click.Path(), default=None,
              help="jsonl of {text, effect, ci_lower, ci_upper, level?} for retrieval_lookup")
@click.option("--with-train-stats", is_flag=True, default=False)
@click.option("--model", default=None, help="model id for the prompted predictor")
@click.option("--endpoint", default=None, help="external regressor URL")
@click.option("--k1", type=float, default=1.2, show_default=True)
@click.option("--b", type=float, default=0.75, show_default=True)
@click.option("--base-url", default=None)
@click.option("--cache-dir", default=None, type=click.Path())
def predict(
    inputs_path: str,
    predictor_id: str,
    out_path: str,
    failures_path: str | None,
    train_estimates: str | None,
    index_items: str | None,
    with_train_stats: bool,
    model: str | None,
    endpoint: str | None,
    k1: float,
    b: float,
    base_url: str | None,
    cache_dir: str | None,
) -> None:
    """Predict effect triples for a file of inputs with one predictor."""
    inputs = [
        PredictorInput(query_id=str(r["query_id"]), text=str(r["text"]), level=r.get("level"))
        for _, r in read_jsonl(inputs_path)
    ]

    client = None
    if predictor_id == "mean_effect":
        if not train_estimates:
            raise ConfigError("mean_effect needs --train-estimates")
        predictor = MeanEffectPredictor(fit_mean_effect(_load_estimates(train_estimates)))
    elif predictor_id == "retrieval_lookup":
        if not index_items:
            raise ConfigError("retrieval_lookup needs --index-items")
        items = [
            Bm25Item(
                text=r["text"],
                effect=float(r["effect"]),
                ci_lower=float(r["ci_lower"]),
                ci_upper=float(r["ci_upper"]),
                level=r.get("level"),
            )
            for _, r in read_jsonl(index_items)
        ]
        predictor = RetrievalLookupPredictor(build_bm25_index(items, k1=k1, b=b))
    elif predictor_id == "prompted":
        model = _resolve_model(model)
        stats = None
        if with_train_stats:
            if not train_estimates:
                raise ConfigError("--with-train-stats needs --train-estimates")
            stats = corpus_stats(EstimateCorpus(tuple(_load_estimates(train_estimates)), "train"))
        client = _client(base_url, cache_dir)
        predictor = PromptedForecaster(client, model, stats=stats)
    else:
        if not endpoint:
            raise ConfigError("external_regressor needs --endpoint")
        predictor = ExternalRegressorClient(endpoint)

    predictions: list[dict] = []
    failures: list[dict] = []
    try:
        for p in inputs:
            try:
                predictions.append(predictor.predict(p).to_dict())
            except PredictionError as exc:
                failures.append({"query_id": p.query_id, "reason": str(exc)})
    finally:
        if client is not None:
            client.close()
    write_jsonl(out_path, predictions)
    if failures_path:
        write_jsonl(failures_path, failures)
    click.echo(f"predicted {len(predictions)} triples ({len(failures)} failure(s))")


@cli.command("evaluate")
@click.option("--preds", "preds_path", required=True, type=click.Path())
@click.option("--golds", "golds_path", type=click.Path(), default=None)
@click.option("--averaged-targets", "targets_path", type=click.Path(), default=None)
@click.option("--failures", "failures_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--label", default="")
def evaluate_cmd(
    preds_path: str,
    golds_path: str | None,
    targets_path: str | None,
    failures_path: str | None,
    out_dir: str,
    label: str,
) -> None:
    """Score a prediction file against gold estimates or averaged targets."""
    preds = [EffectPrediction.from_dict(r) for _, r in read_jsonl(preds_path)]
    n_failures = sum(1 for _ in read_jsonl(failures_path)) if failures_path else 0
    if (golds_path is None) == (targets_path is None):
        raise ConfigError("provide exactly one of --golds or --averaged-targets")
    if targets_path is not None:
        targets = [AveragedTarget.from_dict(r) for _, r in read_jsonl(targets_path)]
        report = evaluate(preds, averaged_targets=targets, n_failures=n_failures,
                          config=EvaluationConfig(label=label))
    else:
        golds = _load_estimates(golds_path)
        report = evaluate(preds, golds=golds, n_failures=n_failures,
                          config=EvaluationConfig(label=label))
    out = Path(out_dir)
    write_json(out / "metrics.json", report.to_dict())
    (out / "metrics.md").write_text(report_markdown([report], mark_best=False), encoding="utf-8")
    click.echo(report_markdown([report], mark_best=False))


@cli.command("averaged-targets")
@click.option("--queries", "queries_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def averaged_targets_cmd(queries_path: str, corpus_path: str, out_path: str) -> None:
    """Build averaged-effect targets for level-3 queries."""
    queries = [q for q in _load_queries(queries_path) if q.level == 3]
    corpus = EstimateCorpus(tuple(_load_estimates(corpus_path)), Path(corpus_path).name)
    result = build_averaged_targets(queries, corpus)
    write_jsonl(out_path, (t.to_dict() for t in result.targets))
    click.echo(
        f"{len(result.targets)} targets; {result.n_excluded} queries matched nothing; "
        f"avg matched-set size: {result.avg_matched_size}"
    )


@cli.command("run")
@click.option("--config", "config_path", required=True, type=click.Path())
def run_cmd(config_path: str) -> None:
    """Execute (or resume) a full pipeline run from a config file."""
    config = RunConfig.from_file(config_path)
    run_dir = run_pipeline(config)
    click.echo(f"run complete: {run_dir}")


@cli.command("compare")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None)
def compare_cmd(run_dirs: tuple[str, ...], out_path: str | None) -> None:
    """Tabulate reports across runs, best value per column marked."""
    _rows, markdown = compare_runs(list(run_dirs))
    if out_path:
        Path(out_path).write_text(markdown, encoding="utf-8")
    click.echo(markdown)


@cli.command("curve")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def curve_cmd(run_dirs: tuple[str, ...], out_path: str) -> None:
    """Emit per-level metric series (plot-ready CSV plus JSON rows)."""
    rows, csv_text = degradation_curve(list(run_dirs))
    Path(out_path).write_text(csv_text, encoding="utf-8")
    write_json(Path(out_path).with_suffix(".json"), rows)
    click.echo(f"wrote {len(rows)} series points to {out_path}")


def main(argv: list[str] | None = None) -> None:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"config error: {exc.format_message()}", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except RunStageError as exc:
        click.echo(f"run error: {exc}", err=True)
        sys.exit(3 if isinstance(exc.cause, (UpstreamError, ResponseFormatError)) else 2)
    except (UpstreamError, ResponseFormatError) as exc:
        click.echo(f"upstream error: {exc}", err=True)
        sys.exit(3)
    except (DataError, EffectcastError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
