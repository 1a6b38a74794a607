"""Regression and policy-oriented scoring of effect predictions.

All arithmetic runs in double precision; report values are rounded to four
decimals only at serialization time. Degenerate metrics (constant inputs,
missing gold intervals) are omitted with an explanatory flag, never emitted
as NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .dataset import AveragedTarget
from .errors import DataError
from .types import (
    Estimate,
    EffectPrediction,
    SignificanceClass,
    classify_significance,
    parse_query_id,
)

ECON_THRESHOLD = 0.1


class DegenerateMetricError(ValueError):
    """The metric is undefined on this input (constant vectors, etc.)."""


def _check_lengths(preds: Sequence[float], golds: Sequence[float], minimum: int = 1) -> None:
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if len(preds) < minimum:
        raise ValueError(f"need at least {minimum} pairs, got {len(preds)}")


def rmse(preds: Sequence[float], golds: Sequence[float]) -> float:
    """Root mean squared error between predicted and true effect sizes."""
    _check_lengths(preds, golds)
    return (sum((g - p) ** 2 for p, g in zip(preds, golds)) / len(preds)) ** 0.5


def mae(preds: Sequence[float], golds: Sequence[float]) -> float:
    """Mean absolute error between predicted and true effect sizes."""
    _check_lengths(preds, golds)
    return sum(abs(g - p) for p, g in zip(preds, golds)) / len(preds)


def r2(preds: Sequence[float], golds: Sequence[float]) -> float:
    """Coefficient of determination: 1 - SS_res / SS_tot."""
    _check_lengths(preds, golds, minimum=2)
    mean_gold = sum(golds) / len(golds)
    ss_tot = sum((g - mean_gold) ** 2 for g in golds)
    if ss_tot == 0:
        raise DegenerateMetricError("gold effects are constant; R^2 undefined")
    ss_res = sum((g - p) ** 2 for p, g in zip(preds, golds))
    return 1.0 - ss_res / ss_tot


def pearson(preds: Sequence[float], golds: Sequence[float]) -> float:
    """Product-moment correlation between predictions and gold effects."""
    _check_lengths(preds, golds, minimum=2)
    n = len(preds)
    mean_p = sum(preds) / n
    mean_g = sum(golds) / n
    cov = sum((p - mean_p) * (g - mean_g) for p, g in zip(preds, golds))
    var_p = sum((p - mean_p) ** 2 for p in preds)
    var_g = sum((g - mean_g) ** 2 for g in golds)
    if var_p == 0 or var_g == 0:
        raise DegenerateMetricError("constant input; Pearson correlation undefined")
    return cov / (var_p ** 0.5 * var_g ** 0.5)


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg_rank = (i + j) / 2 + 1  # 1-based mid-rank
        for k in range(i, j + 1):
            ranks[order[k]] = avg_rank
        i = j + 1
    return ranks


def spearman(preds: Sequence[float], golds: Sequence[float]) -> float:
    """Rank correlation: Pearson over mid-ranks (average ranks for ties)."""
    _check_lengths(preds, golds, minimum=2)
    return pearson(_midranks(preds), _midranks(golds))


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def direction_accuracy(preds: Sequence[float], golds: Sequence[float]) -> float:
    """Fraction of pairs whose effects share the same sign (sign(0) = 0)."""
    _check_lengths(preds, golds)
    return sum(_sign(p) == _sign(g) for p, g in zip(preds, golds)) / len(preds)


def economic_significance_accuracy(
    preds: Sequence[float], golds: Sequence[float], threshold: float = ECON_THRESHOLD
) -> float:
    """Accuracy of the binary "economically meaningful" call: a value counts
    as meaningful iff its magnitude strictly exceeds the threshold."""
    _check_lengths(preds, golds)
    return sum(
        (abs(p) > threshold) == (abs(g) > threshold) for p, g in zip(preds, golds)
    ) / len(preds)


def is_economically_meaningful(effect: float, threshold: float = ECON_THRESHOLD) -> bool:
    return abs(effect) > threshold


def significance_confusion(
    pred_cis: Sequence[tuple[float, float]], gold_cis: Sequence[tuple[float, float]]
) -> dict[tuple[SignificanceClass, SignificanceClass], int]:
    """(gold class, predicted class) -> count."""
    _check_lengths(pred_cis, gold_cis)
    confusion: dict[tuple[SignificanceClass, SignificanceClass], int] = {}
    for (pl, pu), (gl, gu) in zip(pred_cis, gold_cis):
        key = (classify_significance(gl, gu), classify_significance(pl, pu))
        confusion[key] = confusion.get(key, 0) + 1
    return confusion


def stat_sig_f1(
    pred_cis: Sequence[tuple[float, float]], gold_cis: Sequence[tuple[float, float]]
) -> float:
    """Micro-averaged F1 over the three significance classes.

    Computed from per-class true-positive/false-positive/false-negative sums;
    on this single-label task it coincides numerically with accuracy, which
    the report carries alongside as a cross-check.
    """
    confusion = significance_confusion(pred_cis, gold_cis)
    tp = fp = fn = 0
    for cls in SignificanceClass:
        tp += confusion.get((cls, cls), 0)
        fp += sum(c for (g, p), c in confusion.items() if p == cls and g != cls)
        fn += sum(c for (g, p), c in confusion.items() if g == cls and p != cls)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def stat_sig_accuracy(
    pred_cis: Sequence[tuple[float, float]], gold_cis: Sequence[tuple[float, float]]
) -> float:
    confusion = significance_confusion(pred_cis, gold_cis)
    total = sum(confusion.values())
    correct = sum(c for (g, p), c in confusion.items() if g == p)
    return correct / total


def ci_valid_rate(preds: Sequence[EffectPrediction]) -> float:
    """Fraction of predictions satisfying the strict lower < effect < upper."""
    if not preds:
        raise ValueError("ci_valid_rate needs at least one prediction")
    return sum(p.ci_valid for p in preds) / len(preds)


def hedges_g(mean_t: float, mean_c: float, pooled_sd: float, n_t: int, n_c: int) -> float:
    """Bias-corrected standardized mean difference.

    g = J * (mean_t - mean_c) / pooled_sd with the standard small-sample
    correction J = 1 - 3 / (4 * (n_t + n_c - 2) - 1).
    """
    if pooled_sd <= 0:
        raise ValueError(f"pooled_sd must be positive, got {pooled_sd}")
    if n_t < 1 or n_c < 1 or n_t + n_c < 3:
        raise ValueError(f"degenerate sample sizes: n_t={n_t}, n_c={n_c}")
    j = 1.0 - 3.0 / (4.0 * (n_t + n_c - 2) - 1.0)
    return j * (mean_t - mean_c) / pooled_sd


@dataclass(frozen=True)
class MetricReport:
    """Full scored comparison of a prediction set against gold targets."""

    n_scored: int
    n_excluded: int
    rmse: float
    mae: float
    r2: float | None
    pearson: float | None
    spearman: float | None
    direction_acc: float
    econ_acc: float
    stat_sig_f1: float | None
    stat_sig_acc: float | None
    ci_valid_rate: float
    degeneracy_flags: tuple[str, ...] = ()
    predictor_id: str = ""
    label: str = ""

    _ROUND = 4

    def to_dict(self) -> dict:
        def _r(x: float | None) -> float | None:
            return None if x is None else round(x, self._ROUND)

        return {
            "label": self.label,
            "predictor_id": self.predictor_id,
            "n_scored": self.n_scored,
            "n_excluded": self.n_excluded,
            "rmse": _r(self.rmse),
            "mae": _r(self.mae),
            "r2": _r(self.r2),
            "pearson": _r(self.pearson),
            "spearman": _r(self.spearman),
            "direction_acc": _r(self.direction_acc),
            "econ_acc": _r(self.econ_acc),
            "stat_sig_f1": _r(self.stat_sig_f1),
            "stat_sig_acc": _r(self.stat_sig_acc),
            "ci_valid_rate": _r(self.ci_valid_rate),
            "degeneracy_flags": list(self.degeneracy_flags),
        }


MARKDOWN_COLUMNS = (
    ("RMSE", "rmse"),
    ("MAE", "mae"),
    ("R²", "r2"),
    ("Pearson", "pearson"),
    ("Spearman", "spearman"),
    ("Direction", "direction_acc"),
    ("Econ. Sign.", "econ_acc"),
    ("Stat. Sign.", "stat_sig_f1"),
)

# Columns where lower is better when marking the best row.
LOWER_IS_BETTER = frozenset({"rmse", "mae"})


def report_markdown(reports: Sequence[MetricReport], mark_best: bool = True) -> str:
    """Render reports as a markdown table in the benchmark column order."""
    header = "| Model | " + " | ".join(name for name, _ in MARKDOWN_COLUMNS) + " |"
    rule = "|" + "---|" * (len(MARKDOWN_COLUMNS) + 1)

    best: dict[str, float | None] = {}
    if mark_best and len(reports) > 1:
        for _, attr in MARKDOWN_COLUMNS:
            values = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
            if values:
                best[attr] = min(values) if attr in LOWER_IS_BETTER else max(values)

    rows = []
    for r in reports:
        cells = []
        for _, attr in MARKDOWN_COLUMNS:
            value = getattr(r, attr)
            if value is None:
                cells.append("-")
                continue
            text = f"{value:.4f}"
            if best.get(attr) is not None and value == best[attr]:
                text = f"**{text}**"
            cells.append(text)
        name = r.label or r.predictor_id or "run"
        rows.append("| " + name + " | " + " | ".join(cells) + " |")
    return "\n".join([header, rule, *rows]) + "\n"


@dataclass(frozen=True)
class EvaluationConfig:
    econ_threshold: float = ECON_THRESHOLD
    label: str = ""


def evaluate(
    preds: Sequence[EffectPrediction],
    golds: Sequence[Estimate] | None = None,
    averaged_targets: Sequence[AveragedTarget] | None = None,
    n_failures: int = 0,
    config: EvaluationConfig = EvaluationConfig(),
) -> MetricReport:
    """Score predictions against gold estimates or averaged targets.

    Gold estimates join on the prediction's parent estimate id; averaged
    targets join on query id and drop the CI-based significance metrics.
    Predictions without a joinable gold are excluded and counted, as are
    upstream prediction failures passed via ``n_failures``.
    """
    if (golds is None) == (averaged_targets is None):
        raise DataError("provide exactly one of golds or averaged_targets")

    flags: list[str] = []
    pairs: list[tuple[EffectPrediction, float, tuple[float, float] | None]] = []
    n_unjoined = 0

    if averaged_targets is not None:
        flags.append("averaged_target_mode")
        by_query = {t.query_id: t for t in averaged_targets}
        for p in preds:
            target = by_query.get(p.query_id)
            if target is None:
                n_unjoined += 1
                continue
            pairs.append((p, target.averaged_effect, None))
    else:
        by_estimate = {e.estimate_id: e for e in golds}
        for p in preds:
            try:
                estimate_id, _ = parse_query_id(p.query_id)
            except ValueError:
                estimate_id = p.query_id
            gold = by_estimate.get(estimate_id)
            if gold is None:
                n_unjoined += 1
                continue
            ci = (gold.ci_lower, gold.ci_upper) if gold.has_ci() else None
            pairs.append((p, gold.effect_size, ci))

    if not pairs:
        raise DataError("no prediction joined a gold target")

    pred_effects = [p.effect for p, _, _ in pairs]
    gold_effects = [g for _, g, _ in pairs]

    def _guarded(fn, *args) -> float | None:
        try:
            return fn(*args)
        except DegenerateMetricError as exc:
            flags.append(f"{fn.__name__}_absent: {exc}")
            return None
        except ValueError as exc:
            flags.append(f"{fn.__name__}_absent: {exc}")
            return None

    sig_pairs = [(p, ci) for p, _, ci in pairs if ci is not None]
    if sig_pairs:
        pred_cis = [(p.ci_lower, p.ci_upper) for p, _ in sig_pairs]
        gold_cis = [ci for _, ci in sig_pairs]
        f1 = stat_sig_f1(pred_cis, gold_cis)
        acc = stat_sig_accuracy(pred_cis, gold_cis)
    else:
        f1 = acc = None
        flags.append("stat_sig_absent: gold intervals unavailable")

    return MetricReport(
        n_scored=len(pairs),
        n_excluded=n_failures + n_unjoined,
        rmse=rmse(pred_effects, gold_effects),
        mae=mae(pred_effects, gold_effects),
        r2=_guarded(r2, pred_effects, gold_effects),
        pearson=_guarded(pearson, pred_effects, gold_effects),
        spearman=_guarded(spearman, pred_effects, gold_effects),
        direction_acc=direction_accuracy(pred_effects, gold_effects),
        econ_acc=economic_significance_accuracy(pred_effects, gold_effects, config.econ_threshold),
        stat_sig_f1=f1,
        stat_sig_acc=acc,
        ci_valid_rate=ci_valid_rate([p for p, _, _ in pairs]),
        degeneracy_flags=tuple(flags),
        predictor_id=pairs[0][0].predictor_id,
        label=config.label,
    )
