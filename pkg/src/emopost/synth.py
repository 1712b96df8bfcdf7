"""Seeded synthetic benchmark generator for the pipeline.

Each track carries a piecewise-constant latent expression (segments of at
least ``min_segment`` frames), slowly varying sinusoidal latent valence
and arousal, and class-dependent AU activations. Observed scores are the
latents plus Gaussian noise of scale ``noise``; embeddings are noisy
class prototypes, so a trained head can recover the expression from x as
well as from the logits. A faces file is derived from the same latents:
every frame has a primary face whose basic-emotion probabilities are the
softmax of its noisy logits, plus an occasional smaller distractor face.

Everything is a pure function of (spec, seed) through the "synth"
substream, so regeneration is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .compound import Face, FaceFrame
from .datamodel import FrameRecord, MtlLabels, N_AU, N_EXPR, VideoTrack
from .errors import ValidationError
from .seeding import substream


@dataclass(frozen=True)
class SynthSpec:
    tracks: int = 20
    frames: int = 300
    dim: int = 16
    noise: float = 0.8
    min_segment: int = 30
    max_segment: int = 60
    active_logit: float = 2.0
    label_drop: float = 0.0  # per-frame, per-task probability of missing labels
    distractor_rate: float = 0.35

    def __post_init__(self):
        if self.tracks < 1 or self.frames < 1 or self.dim < 1:
            raise ValidationError("tracks, frames, and dim must be >= 1")
        if self.noise < 0:
            raise ValidationError("noise must be non-negative")
        if not 1 <= self.min_segment <= self.max_segment:
            raise ValidationError("need 1 <= min_segment <= max_segment")
        if not 0.0 <= self.label_drop < 1.0:
            raise ValidationError("label_drop must lie in [0, 1)")


@dataclass(frozen=True)
class SynthData:
    tracks: list
    labels: dict
    faces: list
    manifest: dict


def _latent_va(rng, n: int) -> np.ndarray:
    t = np.arange(1, n + 1, dtype=float)
    out = np.empty((n, 2))
    for c in range(2):
        period = rng.uniform(80.0, 160.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.5, 0.8)
        out[:, c] = amp * np.sin(2.0 * np.pi * t / period + phase)
    return out


def _segments(rng, spec: SynthSpec):
    """Expression class per frame, constant over random-length segments."""
    classes = np.empty(spec.frames, dtype=int)
    cursor = 0
    prev = -1
    while cursor < spec.frames:
        length = int(rng.integers(spec.min_segment, spec.max_segment + 1))
        cls = int(rng.integers(0, N_EXPR))
        while cls == prev:
            cls = int(rng.integers(0, N_EXPR))
        classes[cursor : cursor + length] = cls
        prev = cls
        cursor += length
    return classes


def _au_patterns(rng) -> np.ndarray:
    """Class -> AU activation table; every AU active for some class only."""
    patterns = rng.random((N_EXPR, N_AU)) < 0.35
    for j in range(N_AU):
        if patterns[:, j].all() or not patterns[:, j].any():
            patterns[int(rng.integers(0, N_EXPR)), j] ^= True
    return patterns.astype(int)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def generate(spec: SynthSpec, seed: int) -> SynthData:
    rng = substream(seed, "synth")
    prototypes = rng.normal(0.0, 1.0, (N_EXPR, spec.dim))
    au_table = _au_patterns(rng)

    tracks = []
    labels: dict = {}
    faces = []
    for v in range(spec.tracks):
        video_id = f"synth{v:03d}"
        classes = _segments(rng, spec)
        va = _latent_va(rng, spec.frames)
        records = []
        for i in range(spec.frames):
            frame = i + 1
            cls = classes[i]
            logits = np.zeros(N_EXPR)
            logits[cls] = spec.active_logit
            logits += rng.normal(0.0, spec.noise, N_EXPR)
            raw_va = np.clip(va[i] + rng.normal(0.0, spec.noise, 2), -1.0, 1.0)
            embedding = prototypes[cls] + rng.normal(0.0, 1.0, spec.dim)
            records.append(
                FrameRecord(video_id, frame, embedding, np.concatenate([logits, raw_va]))
            )

            keep = rng.random(3) >= spec.label_drop
            lab_va = (float(va[i, 0]), float(va[i, 1])) if keep[0] else (None, None)
            lab_expr = int(cls) if keep[1] else None
            lab_aus = tuple(int(x) for x in au_table[cls]) if keep[2] else (None,) * N_AU
            if keep.any():
                labels[(video_id, frame)] = MtlLabels(
                    lab_va[0], lab_va[1], lab_expr, lab_aus
                )

            face_list = [Face(float(rng.uniform(100.0, 200.0)), _softmax(logits))]
            if rng.random() < spec.distractor_rate:
                face_list.append(
                    Face(
                        float(rng.uniform(10.0, 90.0)),
                        _softmax(rng.normal(0.0, 1.0, N_EXPR)),
                    )
                )
            faces.append(FaceFrame(video_id, frame, tuple(face_list)))
        tracks.append(VideoTrack(video_id, records))

    manifest = {
        "seed": str(seed),
        "tracks": str(spec.tracks),
        "frames": str(spec.frames),
        "dim": str(spec.dim),
        "noise": repr(spec.noise),
        "min_segment": str(spec.min_segment),
        "max_segment": str(spec.max_segment),
        "active_logit": repr(spec.active_logit),
        "label_drop": repr(spec.label_drop),
        "distractor_rate": repr(spec.distractor_rate),
    }
    return SynthData(tracks, labels, faces, manifest)


def score_predictions(tracks) -> dict:
    """Frame-level predictions read directly off the raw scores.

    Softmax of the 8 logits for expressions, raw valence/arousal for VA,
    and sigmoid of the logits' matching entries is not meaningful for AUs,
    so AU scores default to 0.5. Useful as a no-training baseline.
    """
    out = {}
    from .datamodel import PredictionSet

    for track in tracks:
        for rec in track.frames:
            logits = rec.scores[:N_EXPR]
            out[(rec.video_id, rec.frame_index)] = PredictionSet(
                rec.scores[N_EXPR:],
                _softmax(logits),
                np.full(N_AU, 0.5),
            )
    return out
