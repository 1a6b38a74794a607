import json

import pytest

from effectcast.errors import ResponseFormatError
from effectcast.llm import ChatClient, ChatRequest
from effectcast.querygen import (
    QueryGenerationResult,
    constraint_warnings,
    generate_queries,
    parse_query_response,
    render_query_prompt,
)
from effectcast.types import CANONICAL_PROFILES, GeneratedQuery

from conftest import make_estimate
from test_llm_client import _ok_payload, make_client


def valid_payload(texts=None) -> str:
    texts = texts or [
        "What is the effect of introducing malaria rapid diagnostic tests on societal costs?",
        "How does mRDT-based diagnosis change fever management costs?",
        "How do new diagnostic tools affect resource use in health systems?",
        "How do diagnostic advancements influence public health economics?",
    ]
    entries = [
        {
            "query": text,
            "difficulty": {
                "implicitness": f"I{i}",
                "abstraction": f"A{i}",
                "ambiguity": f"U{i}",
            },
        }
        for i, text in enumerate(texts)
    ]
    return json.dumps(entries)


class TestRenderQueryPrompt:
    def test_contains_anchor_and_substitutions(self, mrdt_estimate):
        prompt = render_query_prompt(mrdt_estimate)
        assert "1. Generate exactly FOUR queries." in prompt
        assert "introduction of malaria rapid diagnostic tests" in prompt
        assert "- Description: health" in prompt

    def test_sector_default_fill(self):
        prompt = render_query_prompt(make_estimate(sector=""))
        assert "- Description: unspecified" in prompt

    def test_renders_identically(self, mrdt_estimate):
        assert render_query_prompt(mrdt_estimate) == render_query_prompt(mrdt_estimate)


class TestParseQueryResponse:
    def test_well_formed(self):
        response = parse_query_response(valid_payload())
        assert len(response.entries) == 4
        assert tuple(p for _, p in response.entries) == CANONICAL_PROFILES

    def test_code_fences_tolerated(self):
        response = parse_query_response("```json\n" + valid_payload() + "\n```")
        assert len(response.entries) == 4

    def test_three_entries_rejected(self):
        payload = json.dumps(json.loads(valid_payload())[:3])
        with pytest.raises(ResponseFormatError, match="expected 4") as err:
            parse_query_response(payload)
        assert err.value.retryable

    def test_unknown_difficulty_code(self):
        entries = json.loads(valid_payload())
        entries[3]["difficulty"]["implicitness"] = "I4"
        with pytest.raises(ResponseFormatError, match="I4") as err:
            parse_query_response(json.dumps(entries))
        assert err.value.retryable

    def test_non_parseable_payload(self):
        with pytest.raises(ResponseFormatError) as err:
            parse_query_response("I cannot answer that.")
        assert err.value.retryable

    def test_out_of_order_profiles_rejected(self):
        entries = json.loads(valid_payload())
        entries[0], entries[1] = entries[1], entries[0]
        with pytest.raises(ResponseFormatError, match="canonical"):
            parse_query_response(json.dumps(entries))

    def test_empty_query_text_is_content_violation(self):
        entries = json.loads(valid_payload())
        entries[2]["query"] = "   "
        with pytest.raises(ResponseFormatError) as err:
            parse_query_response(json.dumps(entries))
        assert not err.value.retryable

    def test_extra_field_rejected(self):
        entries = json.loads(valid_payload())
        entries[0]["answer"] = "0.2"
        with pytest.raises(ResponseFormatError, match="fields mismatch"):
            parse_query_response(json.dumps(entries))


class TestGenerateQueries:
    def test_happy_path(self, tmp_path, mrdt_estimate):
        client = make_client([(200, _ok_payload(valid_payload()))], tmp_path / "c")
        result = generate_queries(mrdt_estimate, client, "m1")
        assert [q.level for q in result.queries] == [0, 1, 2, 3]
        assert [q.query_id for q in result.queries] == [f"76717-L{l}" for l in range(4)]
        assert result.retries == 0

    def test_parse_determinism(self, tmp_path, mrdt_estimate):
        client = make_client([(200, _ok_payload(valid_payload()))], tmp_path / "c")
        a = generate_queries(mrdt_estimate, client, "m1")
        b = generate_queries(mrdt_estimate, client, "m1")
        assert a.queries == b.queries
        assert client.stats.network_calls == 1  # second pass fully cached

    def test_garbage_then_valid_retries_once(self, mrdt_estimate, tmp_path):
        script = [(200, _ok_payload("garbage, not json")), (200, _ok_payload(valid_payload()))]
        client = make_client(script, tmp_path / "c")
        result = generate_queries(mrdt_estimate, client, "m1")
        assert result.retries == 1
        assert len(result.queries) == 4

    def test_retry_exhaustion_attaches_raw(self, mrdt_estimate):
        client = make_client([(200, _ok_payload("still garbage"))])
        with pytest.raises(ResponseFormatError) as err:
            generate_queries(mrdt_estimate, client, "m1", max_format_retries=1)
        assert err.value.raw == "still garbage"

    def test_sector_default_flagged(self, tmp_path):
        e = make_estimate(sector="")
        client = make_client([(200, _ok_payload(valid_payload()))], tmp_path / "c")
        result = generate_queries(e, client, "m1")
        assert "sector_defaulted" in result.render_flags


class TestConstraintWarnings:
    def _queries(self, estimate, texts):
        return tuple(
            GeneratedQuery.build(estimate.estimate_id, t, CANONICAL_PROFILES[i])
            for i, t in enumerate(texts)
        )

    def test_hallucinated_quantity_flagged(self):
        e = make_estimate(intervention_desc="Weekly iron supplements", outcome_desc="Anemia rates")
        queries = self._queries(
            e,
            [
                "Does giving 500 mg iron supplements weekly reduce anemia?",
                "Do iron supplements reduce anemia?",
                "Do supplements affect health outcomes?",
                "What improves population health?",
            ],
        )
        warnings = constraint_warnings(e, queries)
        assert [(w.kind, w.detail) for w in warnings] == [("hallucinated_quantity", "500")]

    def test_quantities_from_source_allowed(self, mrdt_estimate):
        queries = self._queries(
            mrdt_estimate,
            [
                "What is the cost impact per 1000 fever episodes over 2 years?",
                "Do mRDTs change costs?",
                "Do diagnostics change system costs?",
                "What drives health economics?",
            ],
        )
        assert constraint_warnings(mrdt_estimate, queries) == ()

    def test_multi_sentence_flagged(self):
        e = make_estimate()
        queries = self._queries(
            e,
            [
                "Does it work? It seems plausible.",
                "Do bed nets reduce malaria?",
                "Do health programs work?",
                "What improves health?",
            ],
        )
        warnings = constraint_warnings(e, queries)
        assert [w.kind for w in warnings] == ["single_sentence"]
        assert warnings[0].query_id == "e1-L0"
