from __future__ import annotations

import math

from .core.predictors import PREDICTOR_NAMES
from .evaluation import EvalReport, MisclassifiedEval


MISCLASSIFIED_ROW = "misclassified"

PREDICTOR_LABELS = {
    "d1": "D1 representation distance",
    "d2": "D2 summed view KL",
    "d3": "D3 input log-likelihood",
    "d4": "D4 representation log-density",
}


def _format_percent(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{100.0 * value:.1f}%"


def _format_auc(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.3f}"


def format_attack_table(report: EvalReport) -> list[str]:
    """One line per attack; misclassified benign inputs share the AUROC columns."""
    lines = [f"{'attack':<13} {'SR':>7} {'ADR':>7} {'BDR':>7} {'AUROC':>7}  95% CI"]
    for row in report.rows:
        flag = "  severe failure (ADR < 50%)" if row.severe_failure else ""
        lines.append(
            f"{row.attack_tag:<13} {_format_percent(row.success_rate):>7} {_format_percent(row.adr):>7} "
            f"{_format_percent(row.bdr):>7} {_format_auc(row.auroc):>7}  "
            f"[{row.auroc_ci[0]:.3f}, {row.auroc_ci[1]:.3f}]{flag}"
        )
    result = report.misclassified
    if result is not None:
        lines.append(
            f"{MISCLASSIFIED_ROW:<13} {'-':>7} {'-':>7} {'-':>7} {_format_auc(result.auc):>7}  "
            f"[{result.ci[0]:.3f}, {result.ci[1]:.3f}]"
        )
    return lines


def format_overall_accuracy(report: EvalReport) -> list[str]:
    lines = ["Overall accuracy (DNN -> DNN+detector):"]
    for tag, (dnn, combined) in report.overall_accuracy.items():
        lines.append(f"  {tag}: {_format_percent(dnn)} -> {_format_percent(combined)}")
    return lines


def format_mutual_information(report: EvalReport) -> list[str]:
    if not report.mutual_information:
        return []
    lines = ["Mutual information with the detection label (nats):"]
    for tag, values in report.mutual_information.items():
        ranked = sorted(values.items(), key=lambda item: item[1], reverse=True)
        lines.append(f"  {tag}: " + ", ".join(f"{name}={value:.3f}" for name, value in ranked))
    return lines


def format_ablation(ablation: dict[str, dict[str, float]]) -> list[str]:
    if not ablation:
        return []
    tags = sorted({tag for row in ablation.values() for tag in row})
    lines = ["Predictor ablation (AUROC):", f"  {'mask':<14} " + " ".join(f"{tag:>10}" for tag in tags)]
    for mask, row in ablation.items():
        lines.append(f"  {mask:<14} " + " ".join(f"{_format_auc(row.get(tag, float('nan'))):>10}" for tag in tags))
    return lines


def format_misclassified(result: MisclassifiedEval | None) -> list[str]:
    if result is None:
        return ["Misclassified benign inputs: not applicable (no misclassified test images)"]
    return [
        f"Misclassified benign inputs: AUROC {result.auc:.3f} "
        f"[{result.ci[0]:.3f}, {result.ci[1]:.3f}] over {result.misclassified_count} misclassified "
        f"vs {result.correct_count} correct"
    ]


def format_report(report: EvalReport) -> str:
    lines = [
        f"Detector threshold tau={report.manifest.get('tau', float('nan')):.6f} "
        f"at target TNR {report.manifest.get('tnr', float('nan')):.2f}",
        "Predictors: " + ", ".join(PREDICTOR_LABELS[name] for name in report.manifest.get("feature_mask", PREDICTOR_NAMES)),
        "",
        *format_attack_table(report),
        "",
        *format_overall_accuracy(report),
    ]
    for block in (format_mutual_information(report), format_ablation(report.ablation), format_misclassified(report.misclassified)):
        if block:
            lines.extend(["", *block])
    return "\n".join(lines)
