"""effectcast: forecast standardized causal effect sizes from natural-language
what-if queries over RCT evidence corpora."""

__version__ = "0.1.0"

from .types import (  # noqa: F401
    EffectPrediction,
    Estimate,
    GeneratedQuery,
    SignificanceClass,
    SpecificityProfile,
    SyntheticRCT,
    classify_significance,
    validate_estimate,
)
