"""Core types, CSV ingestion, and track alignment for per-frame data.

Owns three file schemas (UTF-8 CSV, decimal floats, empty field = missing):

* features:    video_id,frame,emb_0..emb_{D-1},logit_neutral..logit_other,
               valence_raw,arousal_raw
* labels:      video_id,frame,valence,arousal,expression,au1..au26
* predictions: video_id,frame,valence,arousal,p_neutral..p_other,au1..au26

Floats are written with ``repr`` (shortest round-trip decimal), so a
save/load cycle is bit-exact. All container types are immutable after
construction; their numpy arrays are marked read-only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

EXPR_CLASSES = (
    "neutral",
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
    "other",
)
N_EXPR = len(EXPR_CLASSES)

AU_IDS = (1, 2, 4, 6, 7, 10, 12, 15, 23, 24, 25, 26)
N_AU = len(AU_IDS)

N_SCORES = 10  # 8 expression logits + raw valence + raw arousal

_SCORE_COLUMNS = tuple(f"logit_{name}" for name in EXPR_CLASSES) + (
    "valence_raw",
    "arousal_raw",
)
_PRED_COLUMNS = (
    ("valence", "arousal")
    + tuple(f"p_{name}" for name in EXPR_CLASSES)
    + tuple(f"au{i}" for i in AU_IDS)
)
_LABEL_COLUMNS = ("valence", "arousal", "expression") + tuple(
    f"au{i}" for i in AU_IDS
)

# slack for float rounding when validating range-bounded inputs
_RANGE_EPS = 1e-9
_SIMPLEX_EPS = 1e-6


def _freeze(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def fmt(x: float) -> str:
    """Shortest round-trip decimal representation of a float."""
    return repr(float(x))


@dataclass(frozen=True)
class FrameRecord:
    """One frame's features: a D-dim embedding plus the 10 raw scores.

    Score order: 8 expression logits (neutral, anger, disgust, fear,
    happiness, sadness, surprise, other), then raw valence and raw
    arousal, both bounded in [-1, 1].
    """

    video_id: str
    frame_index: int
    embedding: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "embedding", _freeze(self.embedding))
        object.__setattr__(self, "scores", _freeze(self.scores))
        if not isinstance(self.frame_index, int) or self.frame_index < 0:
            raise ValidationError(
                f"frame index must be a non-negative integer, got {self.frame_index!r}"
            )
        if self.embedding.ndim != 1 or self.embedding.size < 1:
            raise ValidationError("embedding must be a non-empty 1-D vector")
        if self.scores.shape != (N_SCORES,):
            raise ValidationError(
                f"scores must have exactly {N_SCORES} entries, got {self.scores.shape}"
            )
        if not np.isfinite(self.embedding).all() or not np.isfinite(self.scores).all():
            raise ValidationError("features must be finite")
        for name, value in (("valence", self.scores[8]), ("arousal", self.scores[9])):
            if not -1.0 <= value <= 1.0:
                raise ValidationError(f"raw {name} {value} outside [-1, 1]")

    @property
    def dim(self) -> int:
        return int(self.embedding.size)


@dataclass(frozen=True)
class VideoTrack:
    """All frames of one video, sorted by strictly increasing frame index."""

    video_id: str
    frames: tuple

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValidationError(f"track {self.video_id!r} is empty")
        dims = {f.dim for f in self.frames}
        if len(dims) != 1:
            raise ValidationError(
                f"track {self.video_id!r} mixes embedding widths {sorted(dims)}"
            )
        for f in self.frames:
            if f.video_id != self.video_id:
                raise ValidationError(
                    f"frame of video {f.video_id!r} inside track {self.video_id!r}"
                )
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError(
                f"track {self.video_id!r} frame indices not strictly increasing"
            )

    @property
    def dim(self) -> int:
        return self.frames[0].dim

    def indices(self) -> np.ndarray:
        return np.array([f.frame_index for f in self.frames], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class MtlLabels:
    """Per-frame ground truth; any of the three task groups may be missing.

    Valence and arousal are jointly present or jointly absent. ``aus`` holds
    12 entries in AU id order 1,2,4,6,7,10,12,15,23,24,25,26, each 0, 1, or
    None.
    """

    valence: Optional[float] = None
    arousal: Optional[float] = None
    expression: Optional[int] = None
    aus: tuple = (None,) * N_AU

    def __post_init__(self):
        object.__setattr__(self, "aus", tuple(self.aus))
        if (self.valence is None) != (self.arousal is None):
            raise ValidationError("valence and arousal must be jointly present or absent")
        if self.valence is not None:
            for name, v in (("valence", self.valence), ("arousal", self.arousal)):
                if not math.isfinite(v) or not -1.0 <= v <= 1.0:
                    raise ValidationError(f"{name} {v} outside [-1, 1]")
        if self.expression is not None and self.expression not in range(N_EXPR):
            raise ValidationError(
                f"expression {self.expression!r} outside 0..{N_EXPR - 1}"
            )
        if len(self.aus) != N_AU:
            raise ValidationError(f"aus must have {N_AU} entries")
        for v in self.aus:
            if v not in (0, 1, None):
                raise ValidationError(f"AU label {v!r} not in {{0, 1, missing}}")
        if not (self.has_va or self.has_expr or self.has_au):
            raise ValidationError("at least one label group must be present")

    @property
    def has_va(self) -> bool:
        return self.valence is not None

    @property
    def has_expr(self) -> bool:
        return self.expression is not None

    @property
    def has_au(self) -> bool:
        return any(v is not None for v in self.aus)

    def au_mask(self) -> np.ndarray:
        return np.array([v is not None for v in self.aus], dtype=bool)

    def au_values(self) -> np.ndarray:
        return np.array([0 if v is None else v for v in self.aus], dtype=float)


@dataclass(frozen=True)
class PredictionSet:
    """One frame's model output for the three tasks.

    p_va in [-1,1]^2, p_expr on the 8-class simplex (sum within 1e-6 of 1),
    p_au in [0,1]^12. Float rounding up to 1e-9 outside the closed ranges is
    tolerated and clamped.
    """

    p_va: np.ndarray
    p_expr: np.ndarray
    p_au: np.ndarray

    def __post_init__(self):
        p_va = np.asarray(self.p_va, dtype=float)
        p_expr = np.asarray(self.p_expr, dtype=float)
        p_au = np.asarray(self.p_au, dtype=float)
        if p_va.shape != (2,) or p_expr.shape != (N_EXPR,) or p_au.shape != (N_AU,):
            raise ValidationError(
                f"prediction shapes must be (2,), ({N_EXPR},), ({N_AU},)"
            )
        if not (
            np.isfinite(p_va).all()
            and np.isfinite(p_expr).all()
            and np.isfinite(p_au).all()
        ):
            raise ValidationError("predictions must be finite")
        if (np.abs(p_va) > 1.0 + _RANGE_EPS).any():
            raise ValidationError("p_va outside [-1, 1]")
        if (p_expr < -_RANGE_EPS).any() or (p_expr > 1.0 + _RANGE_EPS).any():
            raise ValidationError("p_expr outside [0, 1]")
        if abs(float(p_expr.sum()) - 1.0) > _SIMPLEX_EPS:
            raise ValidationError(
                f"p_expr sums to {float(p_expr.sum())}, expected 1 within {_SIMPLEX_EPS}"
            )
        if (p_au < -_RANGE_EPS).any() or (p_au > 1.0 + _RANGE_EPS).any():
            raise ValidationError("p_au outside [0, 1]")
        object.__setattr__(self, "p_va", _freeze(np.clip(p_va, -1.0, 1.0)))
        object.__setattr__(self, "p_expr", _freeze(np.clip(p_expr, 0.0, 1.0)))
        object.__setattr__(self, "p_au", _freeze(np.clip(p_au, 0.0, 1.0)))


@dataclass(frozen=True)
class TaskAlignment:
    """Per-task key sets where both features and that task's labels exist."""

    va: frozenset
    expr: frozenset
    au: frozenset
    unmatched_labels: int = 0


def _expected_features_header(dim: int) -> list:
    return (
        ["video_id", "frame"]
        + [f"emb_{i}" for i in range(dim)]
        + list(_SCORE_COLUMNS)
    )


def _parse_float(token: str, path, line_no: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(
            f"{path} line {line_no}: non-numeric value {token!r} in column {column}"
        ) from None
    if not math.isfinite(value):
        raise ValidationError(f"{path} line {line_no}: non-finite value in {column}")
    return value


def _parse_frame(token: str, path, line_no: int) -> int:
    try:
        frame = int(token)
    except ValueError:
        raise ParseError(
            f"{path} line {line_no}: non-integer frame index {token!r}"
        ) from None
    if frame < 0:
        raise ValidationError(f"{path} line {line_no}: negative frame index {frame}")
    return frame


def _read_rows(path):
    try:
        handle = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        from .errors import MissingInputError

        raise MissingInputError(f"input file not found: {path}") from None
    with handle:
        yield from csv.reader(handle)


def load_features(path, expected_d: Optional[int] = None):
    """Load a features CSV into per-video tracks.

    Returns ``(tracks, dim)`` where tracks are sorted lexicographically by
    video id and frames by frame index. The embedding width D is inferred
    from the header; ``expected_d`` cross-checks it.
    """
    rows = _read_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise SchemaError(f"{path}: empty file, missing header") from None
    dim = sum(1 for name in header if name.startswith("emb_"))
    if dim < 1 or header != _expected_features_header(dim):
        raise SchemaError(f"{path}: header does not match the features schema")
    if expected_d is not None and dim != expected_d:
        raise SchemaError(
            f"{path}: embedding width {dim} does not match expected {expected_d}"
        )

    ncols = 2 + dim + N_SCORES
    seen: dict = {}
    by_video: dict = {}
    for line_no, row in enumerate(rows, start=2):
        if len(row) != ncols:
            raise ParseError(
                f"{path} line {line_no}: expected {ncols} columns, got {len(row)}"
            )
        video_id = row[0]
        frame = _parse_frame(row[1], path, line_no)
        key = (video_id, frame)
        if key in seen:
            raise ValidationError(
                f"{path} line {line_no}: duplicate frame {frame} for video "
                f"{video_id!r} (first seen on line {seen[key]})"
            )
        seen[key] = line_no
        embedding = [
            _parse_float(tok, path, line_no, f"emb_{i}")
            for i, tok in enumerate(row[2 : 2 + dim])
        ]
        scores = [
            _parse_float(tok, path, line_no, _SCORE_COLUMNS[i])
            for i, tok in enumerate(row[2 + dim :])
        ]
        try:
            record = FrameRecord(video_id, frame, embedding, scores)
        except ValidationError as exc:
            raise ValidationError(f"{path} line {line_no}: {exc}") from None
        by_video.setdefault(video_id, []).append(record)

    tracks = [
        VideoTrack(vid, sorted(frames, key=lambda r: r.frame_index))
        for vid, frames in sorted(by_video.items())
    ]
    return tracks, dim


def save_features(path, tracks: Sequence[VideoTrack]) -> None:
    """Write tracks back out in the features schema (lexicographic order)."""
    tracks = sorted(tracks, key=lambda t: t.video_id)
    if not tracks:
        raise ValidationError("cannot write a features file with no tracks")
    dim = tracks[0].dim
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_expected_features_header(dim))
        for track in tracks:
            for rec in track.frames:
                writer.writerow(
                    [rec.video_id, rec.frame_index]
                    + [fmt(v) for v in rec.embedding]
                    + [fmt(v) for v in rec.scores]
                )


def load_labels(path) -> dict:
    """Load a labels CSV into a map (video_id, frame) -> MtlLabels."""
    rows = _read_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise SchemaError(f"{path}: empty file, missing header") from None
    if header != ["video_id", "frame"] + list(_LABEL_COLUMNS):
        raise SchemaError(f"{path}: header does not match the labels schema")

    ncols = 2 + len(_LABEL_COLUMNS)
    labels: dict = {}
    for line_no, row in enumerate(rows, start=2):
        if len(row) != ncols:
            raise ParseError(
                f"{path} line {line_no}: expected {ncols} columns, got {len(row)}"
            )
        video_id = row[0]
        frame = _parse_frame(row[1], path, line_no)
        key = (video_id, frame)
        if key in labels:
            raise ValidationError(
                f"{path} line {line_no}: duplicate labels for video {video_id!r} "
                f"frame {frame}"
            )
        valence = (
            None if row[2] == "" else _parse_float(row[2], path, line_no, "valence")
        )
        arousal = (
            None if row[3] == "" else _parse_float(row[3], path, line_no, "arousal")
        )
        if row[4] == "":
            expression = None
        else:
            try:
                expression = int(row[4])
            except ValueError:
                raise ParseError(
                    f"{path} line {line_no}: non-integer expression {row[4]!r}"
                ) from None
        aus = []
        for i, tok in enumerate(row[5:]):
            if tok == "":
                aus.append(None)
            else:
                try:
                    aus.append(int(tok))
                except ValueError:
                    raise ParseError(
                        f"{path} line {line_no}: non-integer AU label {tok!r}"
                    ) from None
        try:
            labels[key] = MtlLabels(valence, arousal, expression, tuple(aus))
        except ValidationError as exc:
            raise ValidationError(f"{path} line {line_no}: {exc}") from None
    return labels


def save_labels(path, labels: Mapping) -> None:
    """Write a label map in the labels schema, sorted by (video, frame)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["video_id", "frame"] + list(_LABEL_COLUMNS))
        for (video_id, frame) in sorted(labels):
            lab = labels[(video_id, frame)]
            row = [video_id, frame]
            row.append("" if lab.valence is None else fmt(lab.valence))
            row.append("" if lab.arousal is None else fmt(lab.arousal))
            row.append("" if lab.expression is None else str(lab.expression))
            row.extend("" if v is None else str(v) for v in lab.aus)
            writer.writerow(row)


def load_predictions(path) -> dict:
    """Load a predictions CSV into a map (video_id, frame) -> PredictionSet."""
    rows = _read_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise SchemaError(f"{path}: empty file, missing header") from None
    if header != ["video_id", "frame"] + list(_PRED_COLUMNS):
        raise SchemaError(f"{path}: header does not match the predictions schema")

    ncols = 2 + len(_PRED_COLUMNS)
    preds: dict = {}
    for line_no, row in enumerate(rows, start=2):
        if len(row) != ncols:
            raise ParseError(
                f"{path} line {line_no}: expected {ncols} columns, got {len(row)}"
            )
        video_id = row[0]
        frame = _parse_frame(row[1], path, line_no)
        key = (video_id, frame)
        if key in preds:
            raise ValidationError(
                f"{path} line {line_no}: duplicate prediction for video "
                f"{video_id!r} frame {frame}"
            )
        values = [
            _parse_float(tok, path, line_no, _PRED_COLUMNS[i])
            for i, tok in enumerate(row[2:])
        ]
        try:
            preds[key] = PredictionSet(
                values[0:2], values[2 : 2 + N_EXPR], values[2 + N_EXPR :]
            )
        except ValidationError as exc:
            raise ValidationError(f"{path} line {line_no}: {exc}") from None
    return preds


def save_predictions(path, preds: Mapping) -> None:
    """Write predictions in the predictions schema, sorted by (video, frame)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["video_id", "frame"] + list(_PRED_COLUMNS))
        for (video_id, frame) in sorted(preds):
            p = preds[(video_id, frame)]
            writer.writerow(
                [video_id, frame]
                + [fmt(v) for v in p.p_va]
                + [fmt(v) for v in p.p_expr]
                + [fmt(v) for v in p.p_au]
            )


def iter_frames(tracks: Iterable[VideoTrack]) -> Iterator:
    """Yield (video_id, frame_index, record) in canonical order."""
    for track in sorted(tracks, key=lambda t: t.video_id):
        for rec in track.frames:
            yield rec.video_id, rec.frame_index, rec


def align(tracks: Iterable[VideoTrack], labels: Mapping) -> TaskAlignment:
    """Intersect feature frames with per-task label availability.

    Labels without matching features are not an error; their count is
    reported in ``unmatched_labels``.
    """
    feature_keys = {(vid, idx) for vid, idx, _ in iter_frames(tracks)}
    va, expr, au = set(), set(), set()
    unmatched = 0
    for key, lab in labels.items():
        if key not in feature_keys:
            unmatched += 1
            continue
        if lab.has_va:
            va.add(key)
        if lab.has_expr:
            expr.add(key)
        if lab.has_au:
            au.add(key)
    return TaskAlignment(frozenset(va), frozenset(expr), frozenset(au), unmatched)
