from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mock_upstream import MockChatServer, MockRegressorServer  # noqa: E402

from effectcast.types import Estimate  # noqa: E402


def make_estimate(
    estimate_id: str = "e1",
    rct_id: str | None = None,
    intervention_desc: str = "Distribution of insecticide-treated bed nets to rural households",
    outcome_desc: str = "Incidence of malaria infections among children under five",
    effect_size: float = 0.2,
    ci_lower: float | None = 0.05,
    ci_upper: float | None = 0.35,
    sector: str = "health",
    **kwargs,
) -> Estimate:
    return Estimate(
        estimate_id=estimate_id,
        rct_id=rct_id if rct_id is not None else f"rct-{estimate_id}",
        intervention_desc=intervention_desc,
        outcome_desc=outcome_desc,
        effect_size=effect_size,
        ci_lower=ci_lower,
        ci_upper=ci_upper,
        sector=sector,
        **kwargs,
    )


# Worked-example fixture: estimate 76717 (mRDT introduction).
MRDT_ESTIMATE = Estimate(
    estimate_id="76717",
    rct_id="rct-76717",
    intervention_desc=(
        "The intervention involves the introduction of malaria rapid diagnostic tests "
        "(mRDTs) in public health centers, where healthcare personnel diagnose malaria "
        "using mRDTs instead of relying solely on clinical judgment. ACT is only "
        "administered when the mRDT result is positive."
    ),
    outcome_desc=(
        "Aggregate societal cost (health sector + household) per 1000 fever episodes over 2 years."
    ),
    effect_size=-0.0129,
    ci_lower=-0.101,
    ci_upper=0.075,
    sector="health",
)


@pytest.fixture
def mrdt_estimate() -> Estimate:
    return MRDT_ESTIMATE


@pytest.fixture
def chat_server():
    server = MockChatServer().start()
    yield server
    server.stop()


@pytest.fixture
def regressor_server():
    server = MockRegressorServer().start()
    yield server
    server.stop()
