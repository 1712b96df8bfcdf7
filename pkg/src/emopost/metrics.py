"""Evaluation statistics for the three frame-level tasks.

Conventions fixed here for reproducibility:

* CCC uses population (1/N) moments:
  ccc = 2*cov(x,y) / (var(x) + var(y) + (mean(x) - mean(y))^2)
* F1 of a class with no true and no predicted instances is 0.
* KL divergence direction is KL(reference || predicted) with an epsilon
  floor on predicted mass.
* The combined task score is p_mtl = p_va + p_expr + p_au with
  p_va = (ccc_valence + ccc_arousal) / 2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .datamodel import N_AU, N_EXPR
from .errors import ContractError

_DEGENERATE_EPS = 1e-12


class DegenerateStatisticWarning(RuntimeWarning):
    """A statistic hit a degenerate case and fell back to its convention."""


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population moments.

    Returns 0 (with a DegenerateStatisticWarning) when the denominator
    var(x) + var(y) + (mean(x) - mean(y))^2 vanishes, i.e. both series are
    the same constant.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ContractError("ccc needs two equal-length 1-D sequences")
    if x.size < 2:
        raise ContractError("ccc needs at least 2 samples")
    mx = x.mean()
    my = y.mean()
    dx = x - mx
    dy = y - my
    denom = (dx * dx).mean() + (dy * dy).mean() + (mx - my) ** 2
    if denom < _DEGENERATE_EPS:
        warnings.warn(
            "ccc denominator vanished (both series constant and equal); returning 0",
            DegenerateStatisticWarning,
            stacklevel=2,
        )
        return 0.0
    return float(2.0 * (dx * dy).mean() / denom)


def binary_f1(pred, true) -> float:
    """F1 of the positive class; 0 when there are no positives on either side."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ContractError("binary_f1 needs equal-shaped inputs")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def expr_f1_per_class(pred, true) -> np.ndarray:
    """Per-class F1 over the fixed 8 expression classes."""
    pred = np.asarray(pred, dtype=int)
    true = np.asarray(true, dtype=int)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size < 1:
        raise ContractError("expected two equal-length non-empty class sequences")
    if ((pred < 0) | (pred >= N_EXPR) | (true < 0) | (true >= N_EXPR)).any():
        raise ContractError(f"class indices must lie in 0..{N_EXPR - 1}")
    out = np.zeros(N_EXPR)
    for c in range(N_EXPR):
        out[c] = binary_f1(pred == c, true == c)
    return out


def macro_f1_expr(pred, true) -> float:
    """Unweighted mean of per-class F1 across all 8 expression classes.

    Classes absent from both sequences contribute 0 by convention.
    """
    return float(expr_f1_per_class(pred, true).mean())


def p_au(pred, labels, mask) -> float:
    """Mean over the 12 AUs of binary F1, restricted to labeled entries."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != labels.shape or pred.shape != mask.shape:
        raise ContractError("p_au needs equal-shaped pred/labels/mask")
    if pred.ndim != 2 or pred.shape[1] != N_AU:
        raise ContractError(f"p_au expects (N, {N_AU}) arrays")
    if not mask.any():
        raise ContractError("p_au needs at least one labeled AU value")
    scores = np.zeros(N_AU)
    for j in range(N_AU):
        m = mask[:, j]
        scores[j] = binary_f1(pred[m, j], labels[m, j])
    return float(scores.mean())


def kl_divergence(reference, predicted, eps: float = 1e-9) -> float:
    """KL(reference || predicted) with predicted mass floored at ``eps``.

    Both inputs must be probability vectors (non-negative, summing to 1
    within 1e-6). Zero reference mass contributes nothing.
    """
    reference = np.asarray(reference, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if reference.shape != predicted.shape or reference.ndim != 1:
        raise ContractError("kl_divergence needs two equal-length 1-D vectors")
    for name, v in (("reference", reference), ("predicted", predicted)):
        if (v < 0).any():
            raise ContractError(f"{name} distribution has negative mass")
        if abs(float(v.sum()) - 1.0) > 1e-6:
            raise ContractError(f"{name} distribution sums to {float(v.sum())}, not 1")
    support = reference > 0
    floored = np.maximum(predicted[support], eps)
    return float(np.sum(reference[support] * np.log(reference[support] / floored)))


def cohen_kappa(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two label sequences.

    kappa = (p_o - p_e) / (1 - p_e). When chance agreement p_e is 1 (both
    raters emit a single identical class), returns 1 if the observed
    agreement is perfect and 0 otherwise, with a warning.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ContractError("cohen_kappa needs two equal-length non-empty sequences")
    n = a.size
    p_o = float(np.mean(a == b))
    classes = np.union1d(a, b)
    p_e = 0.0
    for c in classes:
        p_e += float(np.sum(a == c)) / n * float(np.sum(b == c)) / n
    if 1.0 - p_e < _DEGENERATE_EPS:
        warnings.warn(
            "cohen_kappa chance agreement is 1; returning the degenerate convention",
            DegenerateStatisticWarning,
            stacklevel=2,
        )
        return 1.0 if p_o >= 1.0 - _DEGENERATE_EPS else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass(frozen=True)
class MtlScore:
    """Combined evaluation result; absent tasks hold None when allowed."""

    ccc_v: Optional[float]
    ccc_a: Optional[float]
    p_va: Optional[float]
    p_expr: Optional[float]
    p_au: Optional[float]
    p_mtl: float

    def as_rows(self):
        return [
            ("ccc_valence", self.ccc_v),
            ("ccc_arousal", self.ccc_a),
            ("p_va", self.p_va),
            ("p_expr", self.p_expr),
            ("p_au", self.p_au),
            ("p_mtl", self.p_mtl),
        ]


def evaluate_mtl(
    predictions: Mapping,
    labels: Mapping,
    thresholds=None,
    allow_missing_tasks: bool = False,
) -> MtlScore:
    """Score predictions against labels on all three tasks.

    ``predictions`` and ``labels`` map (video_id, frame) keys to
    PredictionSet and MtlLabels. Expression predictions are the argmax of
    p_expr; AU decisions compare p_au against ``thresholds`` (12 values,
    default all 0.5). A task with no labeled overlap raises ContractError
    unless ``allow_missing_tasks`` is set, in which case it is excluded
    from p_mtl and reported as None.
    """
    if thresholds is None:
        thr = np.full(N_AU, 0.5)
    else:
        thr = np.asarray(getattr(thresholds, "values", thresholds), dtype=float)
        if thr.shape != (N_AU,):
            raise ContractError(f"thresholds must hold {N_AU} values")

    keys = sorted(set(predictions) & set(labels))
    va_t, va_p = [], []
    ex_t, ex_p = [], []
    au_t, au_p, au_m = [], [], []
    for key in keys:
        pred = predictions[key]
        lab = labels[key]
        if lab.has_va:
            va_t.append([lab.valence, lab.arousal])
            va_p.append(pred.p_va)
        if lab.has_expr:
            ex_t.append(lab.expression)
            ex_p.append(int(np.argmax(pred.p_expr)))
        if lab.has_au:
            au_t.append(lab.au_values())
            au_p.append((pred.p_au >= thr).astype(int))
            au_m.append(lab.au_mask())

    def missing(task: str):
        if not allow_missing_tasks:
            raise ContractError(
                f"no labeled frames for task {task}; the combined score needs all "
                "three tasks (pass allow_missing_tasks to relax)"
            )
        return None

    if len(va_t) >= 2:
        va_t_arr = np.asarray(va_t)
        va_p_arr = np.asarray(va_p)
        ccc_v = ccc(va_p_arr[:, 0], va_t_arr[:, 0])
        ccc_a = ccc(va_p_arr[:, 1], va_t_arr[:, 1])
        score_va = (ccc_v + ccc_a) / 2.0
    elif len(va_t) == 1:
        raise ContractError("VA scoring needs at least 2 labeled frames")
    else:
        ccc_v = ccc_a = score_va = missing("va")

    score_expr = macro_f1_expr(ex_p, ex_t) if ex_t else missing("expr")
    score_au = (
        p_au(np.asarray(au_p), np.asarray(au_t), np.asarray(au_m))
        if au_t
        else missing("au")
    )

    total = sum(v for v in (score_va, score_expr, score_au) if v is not None)
    return MtlScore(ccc_v, ccc_a, score_va, score_expr, score_au, total)
