"""Three-headed feed-forward prediction network over (embedding, scores).

Architecture: the concatenated input (x, s) feeds one shared ReLU hidden
layer, from which a softmax layer produces the 8 expression probabilities
and 12 logistic sigmoids produce the AU scores. A slice layer routes only
the 10 score inputs s into a single affine map with tanh outputs for
valence and arousal, so p_va never depends on the embedding.

The training objective is a masked multi-task sum:

    loss = lambda_expr * weighted categorical cross-entropy (labeled frames)
         + lambda_va   * (1 - (CCC_valence + CCC_arousal) / 2) over the batch
         + lambda_au   * positively-weighted binary cross-entropy per present AU

The VA term uses batch-level population CCC statistics; batches whose VA
labels are constant (or carry fewer than 2 VA labels) skip the term.
Gradients are exact analytic backpropagation, including through the CCC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .datamodel import N_AU, N_EXPR, N_SCORES, FrameRecord, PredictionSet, fmt, iter_frames
from .errors import ContractError, DivergenceError, ParseError, SchemaError, ValidationError
from .seeding import substream

_BLOCKS = ("w_hidden", "b_hidden", "w_expr", "b_expr", "w_au", "b_au", "w_va", "b_va")
_MAGIC = "emopost-head/1"
_VAR_EPS = 1e-12


@dataclass(frozen=True)
class HeadParams:
    """All weights of the three-headed network.

    Shapes: w_hidden (H, D+10), b_hidden (H,), w_expr (8, H), b_expr (8,),
    w_au (12, H), b_au (12,), w_va (2, 10), b_va (2,).
    """

    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_expr: np.ndarray
    b_expr: np.ndarray
    w_au: np.ndarray
    b_au: np.ndarray
    w_va: np.ndarray
    b_va: np.ndarray

    def __post_init__(self):
        for name in _BLOCKS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.isfinite(arr).all():
                raise ContractError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        h, din = self.w_hidden.shape
        if din <= N_SCORES:
            raise ContractError("hidden layer input must include an embedding")
        shapes = {
            "b_hidden": (h,),
            "w_expr": (N_EXPR, h),
            "b_expr": (N_EXPR,),
            "w_au": (N_AU, h),
            "b_au": (N_AU,),
            "w_va": (2, N_SCORES),
            "b_va": (2,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ContractError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    @property
    def dim(self) -> int:
        return self.w_hidden.shape[1] - N_SCORES

    @property
    def hidden_width(self) -> int:
        return self.w_hidden.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for head training.

    ``task_weights`` orders (va, expr, au). ``expr_class_weights`` and
    ``au_pos_weights`` default to None, meaning: unit weights inside a bare
    loss/gradient call, and data-driven defaults inside train (inverse class
    frequency normalized to mean 1 for expressions, negatives/positives per
    AU for the positive binary term).
    """

    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 256
    seed: int = 0
    momentum: float = 0.0
    hidden_width: int = 32
    task_weights: tuple = (1.0, 1.0, 1.0)
    expr_class_weights: Optional[tuple] = None
    au_pos_weights: Optional[tuple] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden_width < 1:
            raise ValidationError("epochs, batch size, and hidden width must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        tw = tuple(float(w) for w in self.task_weights)
        if len(tw) != 3 or any(w < 0 for w in tw) or not any(w > 0 for w in tw):
            raise ValidationError("task weights must be 3 non-negative reals, one positive")
        object.__setattr__(self, "task_weights", tw)
        for name, n in (("expr_class_weights", N_EXPR), ("au_pos_weights", N_AU)):
            w = getattr(self, name)
            if w is None:
                continue
            w = tuple(float(v) for v in w)
            if len(w) != n or any(v < 0 for v in w):
                raise ValidationError(f"{name} must be {n} non-negative reals")
            object.__setattr__(self, name, w)


@dataclass(frozen=True)
class TrainingBatch:
    """Dense arrays for a set of frames with per-task label masks."""

    inputs: np.ndarray     # (N, D+10)
    va: np.ndarray         # (N, 2), zeros where unlabeled
    va_mask: np.ndarray    # (N,)
    expr: np.ndarray       # (N,), -1 where unlabeled
    expr_mask: np.ndarray  # (N,)
    au: np.ndarray         # (N, 12), zeros where unlabeled
    au_mask: np.ndarray    # (N, 12)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def select(self, rows) -> "TrainingBatch":
        return TrainingBatch(
            self.inputs[rows],
            self.va[rows],
            self.va_mask[rows],
            self.expr[rows],
            self.expr_mask[rows],
            self.au[rows],
            self.au_mask[rows],
        )

    def has_any_labels(self) -> bool:
        return bool(self.va_mask.any() or self.expr_mask.any() or self.au_mask.any())


def build_batch(records: Sequence[FrameRecord], labels: Sequence) -> TrainingBatch:
    """Pack records and parallel (possibly None) labels into a batch."""
    if not records:
        raise ContractError("batch must be non-empty")
    if len(labels) != len(records):
        raise ContractError("records and labels must have equal length")
    n = len(records)
    inputs = np.stack([np.concatenate([r.embedding, r.scores]) for r in records])
    va = np.zeros((n, 2))
    va_mask = np.zeros(n, dtype=bool)
    expr = np.full(n, -1, dtype=int)
    expr_mask = np.zeros(n, dtype=bool)
    au = np.zeros((n, N_AU))
    au_mask = np.zeros((n, N_AU), dtype=bool)
    for i, lab in enumerate(labels):
        if lab is None:
            continue
        if lab.has_va:
            va[i] = (lab.valence, lab.arousal)
            va_mask[i] = True
        if lab.has_expr:
            expr[i] = lab.expression
            expr_mask[i] = True
        if lab.has_au:
            au[i] = lab.au_values()
            au_mask[i] = lab.au_mask()
    return TrainingBatch(inputs, va, va_mask, expr, expr_mask, au, au_mask)


def build_dataset(tracks, labels: Mapping) -> TrainingBatch:
    """Batch over every feature frame that carries at least one label."""
    records, labs = [], []
    for vid, idx, rec in iter_frames(tracks):
        lab = labels.get((vid, idx))
        if lab is not None:
            records.append(rec)
            labs.append(lab)
    if not records:
        raise ContractError("no labeled frames in the training set")
    return build_batch(records, labs)


def init_params(dim: int, hidden_width: int, seed: int) -> HeadParams:
    """Uniform [-a, a] init with a = sqrt(6 / (fan_in + fan_out)), zero biases."""
    if dim < 1 or hidden_width < 1:
        raise ContractError("dim and hidden width must be >= 1")
    rng = substream(seed, "init")

    def glorot(fan_out, fan_in):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, (fan_out, fan_in))

    return HeadParams(
        glorot(hidden_width, dim + N_SCORES),
        np.zeros(hidden_width),
        glorot(N_EXPR, hidden_width),
        np.zeros(N_EXPR),
        glorot(N_AU, hidden_width),
        np.zeros(N_AU),
        glorot(2, N_SCORES),
        np.zeros(2),
    )


def _forward_arrays(params: HeadParams, inputs: np.ndarray):
    """Shared forward pass; returns activations needed by loss and backprop."""
    s = inputs[:, params.dim :]
    z_va = s @ params.w_va.T + params.b_va
    p_va = np.tanh(z_va)
    z_h = inputs @ params.w_hidden.T + params.b_hidden
    h = np.maximum(z_h, 0.0)
    z_e = h @ params.w_expr.T + params.b_expr
    log_p_e = z_e - _logsumexp_rows(z_e)
    z_a = h @ params.w_au.T + params.b_au
    p_a = _sigmoid(z_a)
    return s, p_va, z_h, h, log_p_e, z_a, p_a


def _logsumexp_rows(z):
    m = z.max(axis=1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: HeadParams, record: FrameRecord) -> PredictionSet:
    """Predict all three tasks for one frame."""
    if record.dim != params.dim:
        raise ContractError(
            f"record embedding width {record.dim} does not match params {params.dim}"
        )
    inputs = np.concatenate([record.embedding, record.scores])[None, :]
    _, p_va, _, _, log_p_e, _, p_a = _forward_arrays(params, inputs)
    return PredictionSet(p_va[0], np.exp(log_p_e[0]), p_a[0])


def predict_tracks(params: HeadParams, tracks) -> dict:
    """Predictions for every frame, keyed by (video_id, frame_index)."""
    out = {}
    for track in sorted(tracks, key=lambda t: t.video_id):
        if track.dim != params.dim:
            raise SchemaError(
                f"track {track.video_id!r} embedding width {track.dim} does not "
                f"match trained width {params.dim}"
            )
        inputs = np.stack(
            [np.concatenate([r.embedding, r.scores]) for r in track.frames]
        )
        _, p_va, _, _, log_p_e, _, p_a = _forward_arrays(params, inputs)
        p_e = np.exp(log_p_e)
        for i, rec in enumerate(track.frames):
            out[(track.video_id, rec.frame_index)] = PredictionSet(
                p_va[i], p_e[i], p_a[i]
            )
    return out


def _resolved_weights(config: TrainConfig):
    cw = (
        np.ones(N_EXPR)
        if config.expr_class_weights is None
        else np.asarray(config.expr_class_weights, dtype=float)
    )
    pw = (
        np.ones(N_AU)
        if config.au_pos_weights is None
        else np.asarray(config.au_pos_weights, dtype=float)
    )
    return cw, pw


def _ccc_term(pred, true):
    """Batch CCC and its gradient with respect to the predictions."""
    n = pred.size
    mp, mt = pred.mean(), true.mean()
    dp, dt = pred - mp, true - mt
    var_p = (dp * dp).mean()
    var_t = (dt * dt).mean()
    cov = (dp * dt).mean()
    denom = var_p + var_t + (mp - mt) ** 2
    if denom < _VAR_EPS:
        return 0.0, np.zeros(n)
    value = 2.0 * cov / denom
    d_num = 2.0 * dt / n
    d_den = 2.0 * dp / n + 2.0 * (mp - mt) / n
    grad = (d_num * denom - 2.0 * cov * d_den) / denom**2
    return value, grad


def _loss_impl(params: HeadParams, batch: TrainingBatch, config: TrainConfig, want_grad: bool):
    if len(batch) == 0:
        raise ContractError("batch must be non-empty")
    if not batch.has_any_labels():
        raise ContractError("batch carries no labels for any task")
    lam_va, lam_expr, lam_au = config.task_weights
    cw, pw = _resolved_weights(config)

    inputs = batch.inputs
    s, p_va, z_h, h, log_p_e, z_a, p_a = _forward_arrays(params, inputs)
    n = inputs.shape[0]

    total = 0.0
    g_z_va = np.zeros_like(p_va) if want_grad else None
    g_z_e = np.zeros_like(log_p_e) if want_grad else None
    g_z_a = np.zeros_like(p_a) if want_grad else None

    # expressions: weighted categorical cross-entropy over labeled frames
    em = batch.expr_mask
    if lam_expr > 0 and em.any():
        rows = np.flatnonzero(em)
        classes = batch.expr[rows]
        w = cw[classes]
        total += lam_expr * float(np.sum(-w * log_p_e[rows, classes])) / rows.size
        if want_grad:
            p_e = np.exp(log_p_e[rows])
            onehot = np.zeros_like(p_e)
            onehot[np.arange(rows.size), classes] = 1.0
            g_z_e[rows] = (lam_expr / rows.size) * w[:, None] * (p_e - onehot)

    # valence/arousal: 1 - mean batch CCC, skipped for constant or tiny batches
    vm = batch.va_mask
    if lam_va > 0 and vm.sum() >= 2:
        rows = np.flatnonzero(vm)
        true = batch.va[rows]
        label_var = true.var(axis=0).sum()
        if label_var >= _VAR_EPS:
            ccc_sum = 0.0
            for c in range(2):
                value, d_pred = _ccc_term(p_va[rows, c], true[:, c])
                ccc_sum += value
                if want_grad:
                    g_z_va[rows, c] = (
                        -lam_va / 2.0 * d_pred * (1.0 - p_va[rows, c] ** 2)
                    )
            total += lam_va * (1.0 - ccc_sum / 2.0)

    # action units: positively-weighted binary cross-entropy over present labels
    am = batch.au_mask
    if lam_au > 0 and am.any():
        count = int(am.sum())
        y = batch.au
        # log sigma(z) = -softplus(-z); log(1 - sigma(z)) = -softplus(z)
        ll_pos = -np.logaddexp(0.0, -z_a)
        ll_neg = -np.logaddexp(0.0, z_a)
        per_entry = -(pw[None, :] * y * ll_pos + (1.0 - y) * ll_neg)
        total += lam_au * float(per_entry[am].sum()) / count
        if want_grad:
            g = pw[None, :] * y * (p_a - 1.0) + (1.0 - y) * p_a
            g_z_a[am] += (lam_au / count) * g[am]

    if not want_grad:
        return float(total), None

    # backprop through the shared hidden layer and the sliced VA head
    g_h = g_z_e @ params.w_expr + g_z_a @ params.w_au
    g_z_h = g_h * (z_h > 0)
    grads = HeadParams(
        g_z_h.T @ inputs,
        g_z_h.sum(axis=0),
        g_z_e.T @ h,
        g_z_e.sum(axis=0),
        g_z_a.T @ h,
        g_z_a.sum(axis=0),
        g_z_va.T @ s,
        g_z_va.sum(axis=0),
    )
    return float(total), grads


def loss(params: HeadParams, batch: TrainingBatch, config: TrainConfig) -> float:
    """Masked multi-task loss; unlabeled frames contribute nothing."""
    return _loss_impl(params, batch, config, want_grad=False)[0]


def gradient(params: HeadParams, batch: TrainingBatch, config: TrainConfig) -> HeadParams:
    """Exact analytic gradient of loss, packed in HeadParams shape."""
    return _loss_impl(params, batch, config, want_grad=True)[1]


def default_expr_class_weights(batch: TrainingBatch) -> tuple:
    """Inverse class frequency, normalized to mean 1; absent classes get 1."""
    counts = np.bincount(batch.expr[batch.expr_mask], minlength=N_EXPR).astype(float)
    weights = np.ones(N_EXPR)
    seen = counts > 0
    if seen.any():
        inv = 1.0 / counts[seen]
        weights[seen] = inv * seen.sum() / inv.sum()
    return tuple(weights)


def default_au_pos_weights(batch: TrainingBatch) -> tuple:
    """Negative/positive label ratio per AU; degenerate AUs get 1."""
    weights = np.ones(N_AU)
    for j in range(N_AU):
        m = batch.au_mask[:, j]
        pos = float(batch.au[m, j].sum())
        neg = float(m.sum() - pos)
        if pos > 0 and neg > 0:
            weights[j] = neg / pos
    return tuple(weights)


@dataclass(frozen=True)
class TrainResult:
    params: HeadParams
    epoch_losses: tuple
    config: TrainConfig  # with class/AU weights resolved


def train(tracks, labels: Mapping, config: TrainConfig) -> TrainResult:
    """Mini-batch gradient descent, fully determined by config.seed.

    Initialization draws from the "init" substream and epoch shuffles from
    the "shuffle" substream, so identical inputs replay bit-identically.
    Raises DivergenceError as soon as a batch loss turns non-finite.
    """
    dataset = build_dataset(tracks, labels)
    lam_va, lam_expr, lam_au = config.task_weights
    if lam_va > 0 and dataset.va_mask.sum() < 1:
        raise ContractError("VA task enabled but the training set has no VA labels")
    if lam_expr > 0 and not dataset.expr_mask.any():
        raise ContractError("EXPR task enabled but the training set has no labels")
    if lam_au > 0 and not dataset.au_mask.any():
        raise ContractError("AU task enabled but the training set has no AU labels")

    if config.expr_class_weights is None:
        config = replace(config, expr_class_weights=default_expr_class_weights(dataset))
    if config.au_pos_weights is None:
        config = replace(config, au_pos_weights=default_au_pos_weights(dataset))

    params = init_params(dataset.inputs.shape[1] - N_SCORES, config.hidden_width, config.seed)
    values = {name: getattr(params, name).copy() for name in _BLOCKS}
    velocity = {name: np.zeros_like(arr) for name, arr in values.items()}
    shuffle_rng = substream(config.seed, "shuffle")

    n = len(dataset)
    losses = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            batch = dataset.select(rows)
            if not batch.has_any_labels():
                continue
            params = HeadParams(**values)
            # overflow here is reported as DivergenceError, not a warning
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = _loss_impl(params, batch, config, want_grad=True)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            for name in _BLOCKS:
                velocity[name] = config.momentum * velocity[name] + getattr(grads, name)
                values[name] = values[name] - config.learning_rate * velocity[name]
            if not all(np.isfinite(v).all() for v in values.values()):
                raise DivergenceError(
                    f"non-finite parameters at epoch {epoch}, "
                    f"batch {start // config.batch_size}"
                )
        params = HeadParams(**values)
        with np.errstate(over="ignore", invalid="ignore"):
            epoch_loss = loss(params, dataset, config)
        if not math.isfinite(epoch_loss):
            raise DivergenceError(f"non-finite loss after epoch {epoch}")
        losses.append(epoch_loss)
    return TrainResult(HeadParams(**values), tuple(losses), config)


def save_params(path, params: HeadParams) -> None:
    """Write weights as versioned text: dims line, then named row-major blocks."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{_MAGIC}\n")
        handle.write(f"dims {params.dim} {params.hidden_width}\n")
        for name in _BLOCKS:
            arr = np.atleast_2d(getattr(params, name))
            handle.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                handle.write(" ".join(fmt(v) for v in row) + "\n")


def load_params(path) -> HeadParams:
    """Read a weights file; dimension or version mismatches raise SchemaError."""
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except FileNotFoundError:
        from .errors import MissingInputError

        raise MissingInputError(f"weights file not found: {path}") from None
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"{path}: truncated weights file at line {pos + 1}")
        pos += 1
        return lines[pos - 1]

    if next_line().strip() != _MAGIC:
        raise SchemaError(f"{path}: not a {_MAGIC} weights file")
    dims = next_line().split()
    if len(dims) != 3 or dims[0] != "dims":
        raise SchemaError(f"{path}: malformed dims line")
    try:
        dim, hidden = int(dims[1]), int(dims[2])
    except ValueError:
        raise SchemaError(f"{path}: malformed dims line") from None
    expected = {
        "w_hidden": (hidden, dim + N_SCORES),
        "b_hidden": (1, hidden),
        "w_expr": (N_EXPR, hidden),
        "b_expr": (1, N_EXPR),
        "w_au": (N_AU, hidden),
        "b_au": (1, N_AU),
        "w_va": (2, N_SCORES),
        "b_va": (1, 2),
    }
    blocks = {}
    for name in _BLOCKS:
        header = next_line().split()
        if len(header) != 3 or header[0] != name:
            raise ParseError(f"{path} line {pos}: expected block header for {name!r}")
        try:
            rows, cols = int(header[1]), int(header[2])
        except ValueError:
            raise ParseError(f"{path} line {pos}: bad block shape") from None
        if (rows, cols) != expected[name]:
            raise SchemaError(
                f"{path}: block {name} has shape ({rows}, {cols}), expected "
                f"{expected[name]} for dims ({dim}, {hidden})"
            )
        block = np.empty((rows, cols))
        for r in range(rows):
            tokens = next_line().split()
            if len(tokens) != cols:
                raise ParseError(f"{path} line {pos}: expected {cols} values")
            try:
                block[r] = [float(t) for t in tokens]
            except ValueError:
                raise ParseError(f"{path} line {pos}: non-numeric weight") from None
        blocks[name] = block
    if any(line.strip() for line in lines[pos:]):
        raise ParseError(f"{path} line {pos + 1}: trailing content after weights")
    for name in ("b_hidden", "b_expr", "b_au", "b_va"):
        blocks[name] = blocks[name][0]
    return HeadParams(**blocks)
