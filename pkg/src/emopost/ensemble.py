"""Weighted blending of two models' predictions and blend-weight tuning.

Per task the blend is ``w * p1 + (1 - w) * p2`` componentwise, so each
task's weight decouples from the others and tuning reduces to three
independent 1-D grid searches on the validation metric: mean VA CCC for
the VA weight, macro expression F1 for the EXPR weight, and mean AU F1
(at fixed decision thresholds) for the AU weight. Ties break toward the
smaller weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import PredictionSet, fmt
from .errors import ContractError, ParseError, ValidationError
from .metrics import ccc, macro_f1_expr, p_au

DEFAULT_GRID_STEP = 0.05

TASKS = ("va", "expr", "au")


@dataclass(frozen=True)
class BlendWeights:
    """Per-task weight of the first model; each in [0, 1]."""

    w_va: float = 0.5
    w_expr: float = 0.5
    w_au: float = 0.5

    def __post_init__(self):
        for name, w in (("w_va", self.w_va), ("w_expr", self.w_expr), ("w_au", self.w_au)):
            if not 0.0 <= w <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {w}")


def blend(p1: PredictionSet, p2: PredictionSet, weights: BlendWeights) -> PredictionSet:
    """Convex per-task combination of two predictions for the same frame."""
    return PredictionSet(
        weights.w_va * p1.p_va + (1.0 - weights.w_va) * p2.p_va,
        weights.w_expr * p1.p_expr + (1.0 - weights.w_expr) * p2.p_expr,
        weights.w_au * p1.p_au + (1.0 - weights.w_au) * p2.p_au,
    )


def blend_many(preds1: Mapping, preds2: Mapping, weights: BlendWeights) -> dict:
    """Blend two prediction maps; both must cover the same frames."""
    if set(preds1) != set(preds2):
        raise ValidationError("the two prediction sets cover different frames")
    return {key: blend(preds1[key], preds2[key], weights) for key in sorted(preds1)}


def weight_grid(step: float = DEFAULT_GRID_STEP) -> list:
    """Ascending grid over [0, 1] with both endpoints always included.

    Points are rounded to 10 decimals so that i*step lands on the canonical
    decimal (0.3, not 0.30000000000000004) regardless of accumulation order.
    """
    if not 0.0 < step <= 1.0:
        raise ContractError(f"grid step must lie in (0, 1], got {step}")
    grid = []
    i = 0
    while (w := round(i * step, 10)) < 1.0 - 1e-12:
        grid.append(float(w))
        i += 1
    grid.append(1.0)
    return grid


@dataclass(frozen=True)
class BlendTuneResult:
    weights: BlendWeights
    best: dict    # task -> metric at the selected weight
    trace: dict   # task -> list of (weight, metric) over the grid


def tune_blend_weights(
    preds1: Mapping,
    preds2: Mapping,
    labels: Mapping,
    step: float = DEFAULT_GRID_STEP,
    thresholds=None,
    tasks: Sequence[str] = TASKS,
) -> BlendTuneResult:
    """Pick each task's blend weight by grid search on its validation metric.

    Tasks not listed in ``tasks`` keep weight 1.0 (first model only). A tuned
    task with no labeled frames raises ContractError.
    """
    unknown = set(tasks) - set(TASKS)
    if unknown:
        raise ContractError(f"unknown tasks {sorted(unknown)}")
    if set(preds1) != set(preds2):
        raise ValidationError("the two prediction sets cover different frames")
    if thresholds is None:
        thr = np.full(12, 0.5)
    else:
        thr = np.asarray(getattr(thresholds, "values", thresholds), dtype=float)

    keys = sorted(set(preds1) & set(labels))
    va_keys = [k for k in keys if labels[k].has_va]
    ex_keys = [k for k in keys if labels[k].has_expr]
    au_keys = [k for k in keys if labels[k].has_au]

    grid = weight_grid(step)
    trace: dict = {}
    best_metric: dict = {}
    chosen = {"va": 1.0, "expr": 1.0, "au": 1.0}

    def tune(task, task_keys, metric_fn):
        if task not in tasks:
            return
        if not task_keys:
            raise ContractError(f"no labeled frames to tune the {task} blend weight")
        points = []
        best = None
        for w in grid:
            m = metric_fn(w)
            points.append((w, m))
            if best is None or m > best[1]:
                best = (w, m)
        chosen[task] = best[0]
        best_metric[task] = best[1]
        trace[task] = points

    if "va" in tasks and va_keys:
        y = np.array([[labels[k].valence, labels[k].arousal] for k in va_keys])
        a1 = np.array([preds1[k].p_va for k in va_keys])
        a2 = np.array([preds2[k].p_va for k in va_keys])
        if len(va_keys) < 2:
            raise ContractError("VA tuning needs at least 2 labeled frames")
        tune(
            "va",
            va_keys,
            lambda w: (
                ccc(w * a1[:, 0] + (1 - w) * a2[:, 0], y[:, 0])
                + ccc(w * a1[:, 1] + (1 - w) * a2[:, 1], y[:, 1])
            )
            / 2.0,
        )
    else:
        tune("va", va_keys, None)

    if "expr" in tasks and ex_keys:
        y = np.array([labels[k].expression for k in ex_keys])
        a1 = np.array([preds1[k].p_expr for k in ex_keys])
        a2 = np.array([preds2[k].p_expr for k in ex_keys])
        tune(
            "expr",
            ex_keys,
            lambda w: macro_f1_expr(np.argmax(w * a1 + (1 - w) * a2, axis=1), y),
        )
    else:
        tune("expr", ex_keys, None)

    if "au" in tasks and au_keys:
        y = np.array([labels[k].au_values() for k in au_keys])
        m = np.array([labels[k].au_mask() for k in au_keys])
        a1 = np.array([preds1[k].p_au for k in au_keys])
        a2 = np.array([preds2[k].p_au for k in au_keys])
        tune(
            "au",
            au_keys,
            lambda w: p_au(((w * a1 + (1 - w) * a2) >= thr).astype(int), y, m),
        )
    else:
        tune("au", au_keys, None)

    return BlendTuneResult(
        BlendWeights(chosen["va"], chosen["expr"], chosen["au"]), best_metric, trace
    )


def save_blend_report(path, result: BlendTuneResult) -> None:
    """Write the tuned weights as ``task weight metric`` lines."""
    weights = result.weights
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("task weight metric\n")
        for task, w in (("va", weights.w_va), ("expr", weights.w_expr), ("au", weights.w_au)):
            metric = result.best.get(task)
            handle.write(f"{task} {fmt(w)} {'-' if metric is None else fmt(metric)}\n")


def load_blend_weights(path) -> BlendWeights:
    """Read back the weights from a blend report."""
    try:
        with open(path, encoding="utf-8") as handle:
            lines = [ln.strip() for ln in handle if ln.strip()]
    except FileNotFoundError:
        from .errors import MissingInputError

        raise MissingInputError(f"blend report not found: {path}") from None
    if not lines or lines[0].split() != ["task", "weight", "metric"]:
        raise ParseError(f"{path}: missing blend report header")
    found: dict = {}
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{path} line {line_no}: expected 'task weight metric'")
        try:
            found[parts[0]] = float(parts[1])
        except ValueError:
            raise ParseError(f"{path} line {line_no}: bad weight {parts[1]!r}") from None
    missing = set(TASKS) - set(found)
    if missing:
        raise ParseError(f"{path}: missing tasks {sorted(missing)}")
    return BlendWeights(found["va"], found["expr"], found["au"])
