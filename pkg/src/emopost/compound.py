"""Compound-expression scoring from basic-emotion probabilities.

Each of the 7 compound classes pairs two basic emotions; its score is the
arithmetic (A), geometric (G), or harmonic (H) mean of the two class
probabilities. Scores are left unnormalized: the per-frame label is the
argmax over the 7 classes, optionally after temporal smoothing of the
score sequence. Frames may carry several detected faces; predictions are
either averaged over all faces or taken from the largest one.

Predicted class balance is compared against a fixed reference frame-count
distribution via KL divergence.
"""

from __future__ import annotations

import csv
import math
import warnings
from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .datamodel import EXPR_CLASSES, N_EXPR, fmt
from .errors import ContractError, ParseError, SchemaError, ValidationError
from .metrics import kl_divergence
from .temporal_filters import FilterSpec, smooth_series

MEAN_KINDS = ("A", "G", "H")
FACE_POLICIES = ("average_all", "largest")

_EXPR_INDEX = {name: i for i, name in enumerate(EXPR_CLASSES)}


@dataclass(frozen=True)
class CompoundClass:
    name: str
    first: int   # index into EXPR_CLASSES
    second: int


COMPOUND_CLASSES = (
    CompoundClass("Fearfully Surprised", _EXPR_INDEX["fear"], _EXPR_INDEX["surprise"]),
    CompoundClass("Happily Surprised", _EXPR_INDEX["happiness"], _EXPR_INDEX["surprise"]),
    CompoundClass("Sadly Surprised", _EXPR_INDEX["sadness"], _EXPR_INDEX["surprise"]),
    CompoundClass("Disgustedly Surprised", _EXPR_INDEX["disgust"], _EXPR_INDEX["surprise"]),
    CompoundClass("Angrily Surprised", _EXPR_INDEX["anger"], _EXPR_INDEX["surprise"]),
    CompoundClass("Sadly Fearful", _EXPR_INDEX["sadness"], _EXPR_INDEX["fear"]),
    CompoundClass("Sadly Angry", _EXPR_INDEX["sadness"], _EXPR_INDEX["anger"]),
)
N_COMPOUND = len(COMPOUND_CLASSES)

# published per-class frame counts behind the reference distribution
REFERENCE_COUNTS = (14445, 24915, 10780, 10637, 10535, 10112, 8878)

_PAIR_FIRST = np.array([c.first for c in COMPOUND_CLASSES])
_PAIR_SECOND = np.array([c.second for c in COMPOUND_CLASSES])


def reference_distribution() -> np.ndarray:
    counts = np.asarray(REFERENCE_COUNTS, dtype=float)
    return counts / counts.sum()


@dataclass(frozen=True)
class Face:
    """One detected face: its area and basic-emotion probabilities."""

    area: float
    p_basic: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_basic, dtype=float)
        if not self.area > 0 or not math.isfinite(self.area):
            raise ValidationError(f"face area must be positive, got {self.area}")
        if p.shape != (N_EXPR,) or not np.isfinite(p).all() or (p < 0).any():
            raise ValidationError("p_basic must be 8 non-negative finite values")
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"p_basic sums to {float(p.sum())}, expected 1")
        p.setflags(write=False)
        object.__setattr__(self, "p_basic", p)


@dataclass(frozen=True)
class FaceFrame:
    video_id: str
    frame_index: int
    faces: tuple

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(self.faces))


def compound_scores(p_basic, mean_kind: str) -> np.ndarray:
    """Score each compound class by averaging its two basic probabilities.

    Callers pass probability vectors; the means themselves are well defined
    for any non-negative input and the output is intentionally left
    unnormalized for argmax use. The harmonic mean of (0, 0) is 0.
    """
    p = np.asarray(p_basic, dtype=float)
    if p.shape != (N_EXPR,) or (p < 0).any() or not np.isfinite(p).all():
        raise ContractError("p_basic must be 8 non-negative finite values")
    a = p[_PAIR_FIRST]
    b = p[_PAIR_SECOND]
    if mean_kind == "A":
        return (a + b) / 2.0
    if mean_kind == "G":
        return np.sqrt(a * b)
    if mean_kind == "H":
        s = a + b
        out = np.zeros(N_COMPOUND)
        nz = s > 0
        out[nz] = 2.0 * a[nz] * b[nz] / s[nz]
        return out
    raise ContractError(f"mean_kind must be one of {MEAN_KINDS}, got {mean_kind!r}")


def frame_aggregate(frame: FaceFrame, mean_kind: str, face_policy: str) -> Optional[np.ndarray]:
    """Collapse a frame's faces to one 7-vector; None when no face was found.

    ``average_all`` takes the arithmetic mean of per-face compound scores;
    ``largest`` keeps the maximal-area face (first in input order on ties).
    """
    if face_policy not in FACE_POLICIES:
        raise ContractError(f"face_policy must be one of {FACE_POLICIES}, got {face_policy!r}")
    if not frame.faces:
        return None
    if face_policy == "largest":
        areas = np.array([f.area for f in frame.faces])
        return compound_scores(frame.faces[int(np.argmax(areas))].p_basic, mean_kind)
    per_face = [compound_scores(f.p_basic, mean_kind) for f in frame.faces]
    return np.mean(per_face, axis=0)


def predict_sequence(
    frames: Sequence[FaceFrame],
    mean_kind: str,
    face_policy: str,
    filter_spec: FilterSpec = FilterSpec("box", k=0),
) -> list:
    """Per-frame compound labels for one video.

    Aggregates faces per frame, smooths the score sequence over the frames
    that actually have faces, then takes the argmax (lowest class index on
    ties). Faceless frames are assigned the label of the nearest smoothed
    frame by index distance, earlier frame winning ties; an all-faceless
    input yields an empty result with a warning.
    """
    indices = [f.frame_index for f in frames]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ContractError("frames must be sorted by strictly increasing index")
    present_idx, present_scores = [], []
    for frame in frames:
        agg = frame_aggregate(frame, mean_kind, face_policy)
        if agg is not None:
            present_idx.append(frame.frame_index)
            present_scores.append(agg)
    if not present_idx:
        if frames:
            warnings.warn(
                f"no faces in any of the {len(frames)} frames; nothing to label",
                stacklevel=2,
            )
        return []
    smoothed = smooth_series(
        np.asarray(present_idx, dtype=np.int64), np.stack(present_scores), filter_spec
    )
    present_labels = [int(np.argmax(row)) for row in smoothed]

    def nearest_label(t: int) -> int:
        pos = bisect_left(present_idx, t)
        candidates = []
        if pos > 0:
            candidates.append(present_idx[pos - 1])
        if pos < len(present_idx):
            candidates.append(present_idx[pos])
        best = min(candidates, key=lambda p: (abs(p - t), p))
        return present_labels[present_idx.index(best)]

    out = []
    present_set = dict(zip(present_idx, present_labels))
    for t in indices:
        out.append((t, present_set[t] if t in present_set else nearest_label(t)))
    return out


@dataclass(frozen=True)
class ClassBalanceReport:
    kl: float
    counts: np.ndarray
    proportions: np.ndarray


def class_balance_report(
    labels: Sequence[int], reference=None, eps: float = 1e-9
) -> ClassBalanceReport:
    """KL divergence of the predicted label distribution from the reference."""
    labels = np.asarray(labels, dtype=int)
    if labels.size < 1:
        raise ContractError("class balance needs at least one predicted label")
    if ((labels < 0) | (labels >= N_COMPOUND)).any():
        raise ContractError(f"labels must lie in 0..{N_COMPOUND - 1}")
    ref = reference_distribution() if reference is None else np.asarray(reference, dtype=float)
    counts = np.bincount(labels, minlength=N_COMPOUND).astype(float)
    proportions = counts / counts.sum()
    return ClassBalanceReport(kl_divergence(ref, proportions, eps=eps), counts, proportions)


_FACES_HEADER = ["video_id", "frame", "face_area"] + [f"p_{n}" for n in EXPR_CLASSES]


def load_faces(path) -> list:
    """Read a faces CSV into FaceFrames sorted by (video, frame).

    Multiple rows per (video, frame) are multiple faces; frames with no
    faces simply do not appear in the file.
    """
    try:
        handle = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        from .errors import MissingInputError

        raise MissingInputError(f"faces file not found: {path}") from None
    with handle:
        rows = csv.reader(handle)
        header = next(rows, None)
        if header != _FACES_HEADER:
            raise SchemaError(f"{path}: header does not match the faces schema")
        grouped: dict = {}
        for line_no, row in enumerate(rows, start=2):
            if len(row) != len(_FACES_HEADER):
                raise ParseError(
                    f"{path} line {line_no}: expected {len(_FACES_HEADER)} columns, "
                    f"got {len(row)}"
                )
            video_id = row[0]
            try:
                frame = int(row[1])
                values = [float(tok) for tok in row[2:]]
            except ValueError:
                raise ParseError(f"{path} line {line_no}: non-numeric value") from None
            try:
                face = Face(values[0], np.array(values[1:]))
            except ValidationError as exc:
                raise ValidationError(f"{path} line {line_no}: {exc}") from None
            grouped.setdefault((video_id, frame), []).append(face)
    return [
        FaceFrame(vid, frame, tuple(faces))
        for (vid, frame), faces in sorted(grouped.items())
    ]


def save_faces(path, frames: Sequence[FaceFrame]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_FACES_HEADER)
        for frame in sorted(frames, key=lambda f: (f.video_id, f.frame_index)):
            for face in frame.faces:
                writer.writerow(
                    [frame.video_id, frame.frame_index, fmt(face.area)]
                    + [fmt(v) for v in face.p_basic]
                )


def save_compound_labels(path, rows) -> None:
    """Write (video_id, frame, class_index) rows with canonical class names."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["video_id", "frame", "compound_label"])
        for video_id, frame, cls in sorted(rows):
            writer.writerow([video_id, frame, COMPOUND_CLASSES[cls].name])
