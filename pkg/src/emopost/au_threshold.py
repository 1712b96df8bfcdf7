"""Binary AU decisions from scores, with per-AU threshold tuning.

The decision rule is inclusive: score >= threshold means active. Tuning
runs an independent grid search per AU maximizing that AU's binary F1 on
the labeled frames; because the mean AU F1 decomposes over AUs, this
equals a joint exhaustive search. Ties go to the smaller threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import AU_IDS, N_AU
from .errors import ContractError, ParseError, SchemaError, ValidationError
from .metrics import binary_f1

DEFAULT_THRESHOLD = 0.5
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class AuThresholds:
    """12 per-AU decision thresholds, each strictly inside (0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (N_AU,):
            raise ValidationError(f"thresholds must hold {N_AU} values")
        if not ((values > 0.0) & (values < 1.0)).all():
            raise ValidationError("thresholds must lie strictly inside (0, 1)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def default(cls) -> "AuThresholds":
        return cls(np.full(N_AU, DEFAULT_THRESHOLD))


@dataclass(frozen=True)
class ThresholdTuneResult:
    thresholds: AuThresholds
    f1: np.ndarray        # per-AU F1 at the selected threshold
    flagged: np.ndarray   # AUs lacking both a positive and a negative label


def apply_thresholds(p_au, thresholds: AuThresholds) -> np.ndarray:
    """Hard decisions: 1 where score >= threshold, else 0.

    Accepts a single 12-vector or an (N, 12) matrix of scores.
    """
    scores = np.asarray(p_au, dtype=float)
    if scores.shape[-1] != N_AU:
        raise ContractError(f"AU scores must have {N_AU} columns")
    return (scores >= thresholds.values).astype(int)


def tune_thresholds(scores, labels, mask, grid=DEFAULT_GRID) -> ThresholdTuneResult:
    """Per-AU grid search for the F1-maximizing threshold.

    ``scores`` and ``labels`` are (N, 12); ``mask`` marks labeled entries.
    An AU whose labeled frames lack a positive or a negative keeps the
    default 0.5 and is flagged.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != labels.shape or scores.shape != mask.shape:
        raise ContractError("scores, labels, and mask must share a shape")
    if scores.ndim != 2 or scores.shape[1] != N_AU:
        raise ContractError(f"expected (N, {N_AU}) arrays")
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ContractError("threshold grid must be non-empty")
    if grid[0] <= 0.0 or grid[-1] >= 1.0:
        raise ContractError("grid thresholds must lie strictly inside (0, 1)")

    best = np.full(N_AU, DEFAULT_THRESHOLD)
    best_f1 = np.zeros(N_AU)
    flagged = np.zeros(N_AU, dtype=bool)
    for j in range(N_AU):
        m = mask[:, j]
        y = labels[m, j]
        s = scores[m, j]
        if y.size == 0 or (y == 1).sum() == 0 or (y == 0).sum() == 0:
            flagged[j] = True
            best_f1[j] = binary_f1((s >= DEFAULT_THRESHOLD).astype(int), y) if y.size else 0.0
            continue
        for t in grid:
            f1 = binary_f1((s >= t).astype(int), y)
            if f1 > best_f1[j]:
                best_f1[j] = f1
                best[j] = t
    return ThresholdTuneResult(AuThresholds(best), best_f1, flagged)


def save_thresholds(path, thresholds: AuThresholds) -> None:
    """Write thresholds as one ``au<id> <value>`` line per AU."""
    with open(path, "w", encoding="utf-8") as handle:
        for au_id, value in zip(AU_IDS, thresholds.values):
            handle.write(f"au{au_id} {float(value)!r}\n")


def load_thresholds(path) -> AuThresholds:
    try:
        with open(path, encoding="utf-8") as handle:
            lines = [ln.strip() for ln in handle if ln.strip()]
    except FileNotFoundError:
        from .errors import MissingInputError

        raise MissingInputError(f"thresholds file not found: {path}") from None
    entries = {}
    for line_no, line in enumerate(lines, start=1):
        parts = line.split()
        if len(parts) != 2 or not parts[0].startswith("au"):
            raise ParseError(f"{path} line {line_no}: expected 'au<id> <value>'")
        try:
            au_id = int(parts[0][2:])
            value = float(parts[1])
        except ValueError:
            raise ParseError(f"{path} line {line_no}: bad AU id or value") from None
        if au_id in entries:
            raise ValidationError(f"{path} line {line_no}: duplicate AU {au_id}")
        entries[au_id] = value
    if sorted(entries) != sorted(AU_IDS):
        raise SchemaError(
            f"{path}: expected exactly AUs {list(AU_IDS)}, got {sorted(entries)}"
        )
    return AuThresholds(np.array([entries[i] for i in AU_IDS]))
