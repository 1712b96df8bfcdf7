"""Windowed smoothing of per-frame score sequences.

Both filters average the vectors whose true frame index lies within
|t_i - t| <= k of the output frame t:

* box:      plain mean over the window
* gaussian: weights exp(-(t - t_i)^2 / (2 sigma^2)), renormalized over the
            actual window

Windows are truncated at track boundaries and across index gaps; no frames
are padded or fabricated, and the output index set always equals the input
index set. Every output is a convex combination of windowed inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .datamodel import PredictionSet
from .errors import ContractError, ValidationError

_SIGMA2_IDENTITY = 1e-12

FILTER_KINDS = ("box", "gaussian")


@dataclass(frozen=True)
class FilterSpec:
    """One task's smoothing settings.

    ``k`` is the kernel half-width in frame-index units; 0 means identity.
    For Gaussian filters ``k`` may be omitted and defaults to ceil(3 sigma),
    covering effectively all kernel mass.
    """

    kind: str = "box"
    k: Optional[int] = None
    sigma2: Optional[float] = None

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValidationError(f"unknown filter kind {self.kind!r}")
        if self.k is not None and (not isinstance(self.k, int) or self.k < 0):
            raise ValidationError(f"kernel half-width must be a non-negative int, got {self.k!r}")
        if self.kind == "gaussian":
            if self.sigma2 is None or not self.sigma2 > 0:
                raise ValidationError("gaussian filter needs a positive variance")
        elif self.k is None:
            raise ValidationError("box filter needs an explicit kernel half-width")

    @property
    def effective_k(self) -> int:
        if self.k is not None:
            return self.k
        return int(math.ceil(3.0 * math.sqrt(self.sigma2)))


IDENTITY = FilterSpec("box", k=0)


@dataclass(frozen=True)
class TaskFilters:
    """Per-task filter specs; AU smoothing is off by default."""

    expr: FilterSpec = IDENTITY
    va: FilterSpec = IDENTITY
    au: FilterSpec = IDENTITY


def _check_sequence(indices, values):
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if indices.ndim != 1:
        raise ContractError("frame indices must be 1-D")
    if values.shape[0] != indices.shape[0]:
        raise ContractError("indices and values disagree on length")
    if indices.size > 1 and (np.diff(indices) <= 0).any():
        raise ContractError("frame indices must be strictly increasing")
    return indices, values


def box_smooth(indices, values, k: int) -> np.ndarray:
    """Mean of values within half-width ``k`` of each frame index."""
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise ContractError(f"kernel half-width must be a non-negative int, got {k!r}")
    indices, values = _check_sequence(indices, values)
    if indices.size == 0 or k == 0:
        return values.copy()
    flat = values.ndim == 1
    vals = values[:, None] if flat else values
    lo = np.searchsorted(indices, indices - k, side="left")
    hi = np.searchsorted(indices, indices + k, side="right")
    csum = np.vstack([np.zeros((1, vals.shape[1])), np.cumsum(vals, axis=0)])
    out = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return out[:, 0] if flat else out


def gaussian_smooth(indices, values, k: int, sigma2: float) -> np.ndarray:
    """Gaussian-weighted mean over the same truncated windows as box_smooth.

    Weights are renormalized over the frames actually present, so index
    gaps shift mass to the remaining neighbors instead of inventing frames.
    Variances at or below 1e-12 short-circuit to the identity.
    """
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise ContractError(f"kernel half-width must be a non-negative int, got {k!r}")
    if not sigma2 > 0:
        raise ContractError(f"variance must be positive, got {sigma2!r}")
    indices, values = _check_sequence(indices, values)
    if indices.size == 0 or k == 0 or sigma2 <= _SIGMA2_IDENTITY:
        return values.copy()
    flat = values.ndim == 1
    vals = values[:, None] if flat else values
    lo = np.searchsorted(indices, indices - k, side="left")
    hi = np.searchsorted(indices, indices + k, side="right")
    out = np.empty_like(vals)
    for j in range(indices.size):
        delta = indices[lo[j] : hi[j]] - indices[j]
        w = np.exp(-(delta.astype(float) ** 2) / (2.0 * sigma2))
        out[j] = w @ vals[lo[j] : hi[j]] / w.sum()
    return out[:, 0] if flat else out


def smooth_series(indices, values, spec: FilterSpec) -> np.ndarray:
    """Apply one FilterSpec to a (frame_index, vector) sequence."""
    if spec.kind == "box":
        return box_smooth(indices, values, spec.effective_k)
    return gaussian_smooth(indices, values, spec.effective_k, spec.sigma2)


def smooth_predictions(
    items: Sequence[Tuple[int, PredictionSet]], filters: TaskFilters
) -> list:
    """Smooth one track's predictions task-by-task.

    Expression probabilities are renormalized to sum to 1 afterwards; the
    smoothing itself is convex, so this only absorbs float rounding.
    """
    if not items:
        return []
    indices = np.array([t for t, _ in items], dtype=np.int64)
    p_va = np.stack([p.p_va for _, p in items])
    p_expr = np.stack([p.p_expr for _, p in items])
    p_au = np.stack([p.p_au for _, p in items])

    p_va = smooth_series(indices, p_va, filters.va)
    p_expr = smooth_series(indices, p_expr, filters.expr)
    p_expr = p_expr / p_expr.sum(axis=1, keepdims=True)
    if filters.au.effective_k > 0:
        p_au = smooth_series(indices, p_au, filters.au)

    return [
        (int(t), PredictionSet(p_va[i], p_expr[i], p_au[i]))
        for i, t in enumerate(indices)
    ]
