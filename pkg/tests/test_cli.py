import json

import pytest

from effectcast.cli import main
from effectcast.fileio import read_json, read_jsonl

from conftest import make_estimate
from test_runner import base_config, desk_corpus


def run_main(argv) -> int:
    try:
        main(argv)
    except SystemExit as exc:
        return exc.code or 0
    return 0


def _write_corpus(tmp_path, estimates, name="corpus.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(json.dumps(e.to_dict()) for e in estimates) + "\n")
    return path


class TestVerbFlows:
    def test_ingest_split_flow(self, tmp_path, capsys):
        estimates = [make_estimate(f"e{i}", rct_id=f"r{i % 4}") for i in range(12)]
        corpus = _write_corpus(tmp_path, estimates)
        out = tmp_path / "clean.jsonl"
        stats_dir = tmp_path / "stats"
        code = run_main(
            ["ingest", "--corpus", str(corpus), "--out", str(out), "--stats", str(stats_dir)]
        )
        assert code == 0
        assert sum(1 for _ in read_jsonl(out)) == 12
        assert read_json(stats_dir / "stats.json")["n_estimates"] == 12
        assert "| Mean effect |" in (stats_dir / "stats.md").read_text()

        split_path = tmp_path / "split.json"
        code = run_main(
            ["split", "--corpus", str(out), "--out", str(split_path),
             "--ratios", "0.5,0.25,0.25", "--seed", "3"]
        )
        assert code == 0
        assignment = read_json(split_path)
        assert set(assignment["assignment"]) == {f"e{i}" for i in range(12)}

    def test_generate_synth_predict_evaluate_flow(self, tmp_path, chat_server):
        estimates = [
            make_estimate(
                f"e{i}",
                rct_id=f"r{i}",
                intervention_desc=f"a bed net program wave {i}",
                outcome_desc=f"malaria incidence cohort {i}",
                effect_size=0.1 * i - 0.2,
                ci_lower=0.1 * i - 0.3,
                ci_upper=0.1 * i - 0.1,
            )
            for i in range(4)
        ]
        corpus = _write_corpus(tmp_path, estimates)
        queries = tmp_path / "queries.jsonl"
        code = run_main(
            ["generate-queries", "--corpus", str(corpus), "--out", str(queries),
             "--model", "mock-gen", "--base-url", chat_server.base_url,
             "--cache-dir", str(tmp_path / "cache")]
        )
        assert code == 0
        assert sum(1 for _ in read_jsonl(queries)) == 16

        synth = tmp_path / "synth.jsonl"
        code = run_main(
            ["synth-rct", "--queries", str(queries), "--out", str(synth),
             "--model", "mock-synth", "--base-url", chat_server.base_url,
             "--cache-dir", str(tmp_path / "cache")]
        )
        assert code == 0
        assert sum(1 for _ in read_jsonl(synth)) == 16

        preds = tmp_path / "preds.jsonl"
        code = run_main(
            ["predict", "--inputs", str(queries), "--predictor", "mean_effect",
             "--train-estimates", str(corpus), "--out", str(preds)]
        )
        assert code == 0

        report_dir = tmp_path / "report"
        code = run_main(
            ["evaluate", "--preds", str(preds), "--golds", str(corpus),
             "--out", str(report_dir)]
        )
        assert code == 0
        report = read_json(report_dir / "metrics.json")
        assert report["n_scored"] == 16

    def test_run_compare_curve_flow(self, tmp_path, chat_server):
        config = base_config(tmp_path, chat_server, name="cli_run", levels=(0, 1))
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config.to_dict()))
        assert run_main(["run", "--config", str(config_path)]) == 0

        table_path = tmp_path / "table.md"
        assert run_main(["compare", str(tmp_path / "cli_run"), "--out", str(table_path)]) == 0
        assert "RMSE" in table_path.read_text()

        curve_path = tmp_path / "curve.csv"
        assert run_main(["curve", str(tmp_path / "cli_run"), "--out", str(curve_path)]) == 0
        assert curve_path.read_text().startswith("predictor_id,run,level")


class TestExitCodes:
    def test_success_is_zero(self, tmp_path):
        corpus = _write_corpus(tmp_path, [make_estimate("a")])
        assert run_main(["ingest", "--corpus", str(corpus), "--out", str(tmp_path / "o.jsonl")]) == 0

    def test_config_error_is_one(self, tmp_path):
        # both gold sources at once
        preds = tmp_path / "p.jsonl"
        preds.write_text("")
        code = run_main(
            ["evaluate", "--preds", str(preds), "--golds", "g", "--averaged-targets", "t",
             "--out", str(tmp_path / "r")]
        )
        assert code == 1

    def test_usage_error_is_one(self):
        assert run_main(["split", "--no-such-flag"]) == 1

    def test_bad_run_config_is_one(self, tmp_path):
        config_path = tmp_path / "bad.json"
        config_path.write_text(json.dumps({"corpus_path": "x", "out_dir": "y", "mode": "nope"}))
        assert run_main(["run", "--config", str(config_path)]) == 1

    def test_data_error_is_two(self, tmp_path):
        code = run_main(
            ["ingest", "--corpus", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]
        )
        assert code == 2

    def test_model_from_env_default(self, tmp_path, chat_server, monkeypatch):
        monkeypatch.setenv("EFFECTCAST_LLM_MODEL", "mock-gen")
        estimates = [make_estimate("e0", rct_id="r0")]
        corpus = _write_corpus(tmp_path, estimates)
        queries = tmp_path / "q.jsonl"
        code = run_main(
            ["generate-queries", "--corpus", str(corpus), "--out", str(queries),
             "--base-url", chat_server.base_url, "--cache-dir", str(tmp_path / "c")]
        )
        assert code == 0
        assert sum(1 for _ in read_jsonl(queries)) == 4

    def test_missing_model_is_config_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("EFFECTCAST_LLM_MODEL", raising=False)
        corpus = _write_corpus(tmp_path, [make_estimate("e0")])
        code = run_main(
            ["generate-queries", "--corpus", str(corpus), "--out", str(tmp_path / "q.jsonl"),
             "--base-url", "http://127.0.0.1:1"]
        )
        assert code == 1

    def test_upstream_error_is_three(self, tmp_path, regressor_server):
        regressor_server.plan_faults([404])
        inputs = tmp_path / "inputs.jsonl"
        inputs.write_text(json.dumps({"query_id": "a-L0", "text": "does x affect y?"}) + "\n")
        code = run_main(
            ["predict", "--inputs", str(inputs), "--predictor", "external_regressor",
             "--endpoint", regressor_server.url, "--out", str(tmp_path / "p.jsonl")]
        )
        assert code == 3
