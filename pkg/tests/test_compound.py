import math

import numpy as np
import pytest

from emopost.compound import (
    COMPOUND_CLASSES,
    Face,
    FaceFrame,
    class_balance_report,
    compound_scores,
    frame_aggregate,
    load_faces,
    predict_sequence,
    reference_distribution,
    save_compound_labels,
    save_faces,
)
from emopost.errors import ContractError, ValidationError
from emopost.temporal_filters import FilterSpec

FEAR, SURPRISE, HAPPY, SAD = 3, 6, 4, 5


def basic(**kv):
    p = np.zeros(8)
    for idx, v in kv.items():
        p[int(idx)] = v
    return p


class TestCompoundScores:
    def test_fear_surprise_fixture(self):
        p = basic(**{str(FEAR): 0.6, str(SURPRISE): 0.4})
        a = compound_scores(p, "A")
        g = compound_scores(p, "G")
        h = compound_scores(p, "H")
        assert a[0] == pytest.approx(0.5, abs=1e-15)
        assert g[0] == pytest.approx(math.sqrt(0.24), abs=1e-12)
        assert h[0] == pytest.approx(0.48, abs=1e-15)

    def test_uniform_probabilities_all_means_coincide(self):
        p = np.full(8, 0.125)
        for kind in ("A", "G", "H"):
            assert compound_scores(p, kind) == pytest.approx(np.full(7, 0.125), abs=1e-12)

    def test_one_hot_happiness(self):
        p = basic(**{str(HAPPY): 1.0})
        a = compound_scores(p, "A")
        assert a[1] == 0.5  # Happily Surprised
        assert (np.delete(a, 1) == 0).all()
        assert (compound_scores(p, "G") == 0).all()
        assert (compound_scores(p, "H") == 0).all()

    def test_mean_inequality(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            p = rng.dirichlet(np.ones(8))
            a = compound_scores(p, "A")
            g = compound_scores(p, "G")
            h = compound_scores(p, "H")
            assert (h <= g + 1e-15).all()
            assert (g <= a + 1e-15).all()

    def test_monotone_in_pair_members(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = rng.dirichlet(np.ones(8))
            i = int(rng.integers(0, 8))
            bigger = p.copy()
            bigger[i] += 0.25
            for kind in ("A", "G", "H"):
                before = compound_scores(p, kind)
                after = compound_scores(bigger, kind)
                for c, cls in enumerate(COMPOUND_CLASSES):
                    if i in (cls.first, cls.second):
                        assert after[c] >= before[c] - 1e-15

    def test_bad_mean_kind(self):
        with pytest.raises(ContractError):
            compound_scores(np.full(8, 0.125), "Q")


class TestFrameAggregate:
    def test_single_face_policies_agree(self):
        rng = np.random.default_rng(2)
        p = rng.dirichlet(np.ones(8))
        frame = FaceFrame("v", 1, (Face(12.0, p),))
        a = frame_aggregate(frame, "A", "average_all")
        b = frame_aggregate(frame, "A", "largest")
        assert a == pytest.approx(b, abs=1e-15)

    def test_largest_face_selected_exactly(self):
        rng = np.random.default_rng(3)
        p1, p2 = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        frame = FaceFrame("v", 1, (Face(10.0, p1), Face(20.0, p2)))
        out = frame_aggregate(frame, "G", "largest")
        assert (out == compound_scores(p2, "G")).all()

    def test_average_matches_hand_mean(self):
        p1 = basic(**{str(FEAR): 0.6, str(SURPRISE): 0.4})
        p2 = basic(**{str(HAPPY): 1.0})
        frame = FaceFrame("v", 1, (Face(5.0, p1), Face(6.0, p2)))
        out = frame_aggregate(frame, "A", "average_all")
        expected = (compound_scores(p1, "A") + compound_scores(p2, "A")) / 2
        assert out == pytest.approx(expected, abs=1e-15)

    def test_no_faces_is_absent(self):
        assert frame_aggregate(FaceFrame("v", 1, ()), "A", "largest") is None

    def test_face_permutation_invariance_for_average(self):
        rng = np.random.default_rng(4)
        faces = tuple(Face(float(i + 1), rng.dirichlet(np.ones(8))) for i in range(3))
        f1 = FaceFrame("v", 1, faces)
        f2 = FaceFrame("v", 1, faces[::-1])
        assert frame_aggregate(f1, "H", "average_all") == pytest.approx(
            frame_aggregate(f2, "H", "average_all"), abs=1e-15
        )

    def test_area_tie_takes_first(self):
        rng = np.random.default_rng(5)
        p1, p2 = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        frame = FaceFrame("v", 1, (Face(7.0, p1), Face(7.0, p2)))
        out = frame_aggregate(frame, "A", "largest")
        assert (out == compound_scores(p1, "A")).all()


def frames_from_probs(probs, start=0):
    return [
        FaceFrame("v", start + i, (Face(1.0, p),)) for i, p in enumerate(probs)
    ]


class TestPredictSequence:
    def test_identity_filter_equals_frame_argmax(self):
        rng = np.random.default_rng(6)
        probs = [rng.dirichlet(np.ones(8)) for _ in range(12)]
        frames = frames_from_probs(probs)
        out = predict_sequence(frames, "A", "largest")
        for (t, label), p in zip(out, probs):
            assert label == int(np.argmax(compound_scores(p, "A")))

    def test_constant_scores_constant_label(self):
        p = basic(**{str(SAD): 0.7, str(FEAR): 0.3})
        frames = frames_from_probs([p] * 9)
        out = predict_sequence(frames, "A", "largest", FilterSpec("gaussian", sigma2=2.0))
        assert len({label for _, label in out}) == 1

    def test_smoothing_reduces_transitions(self):
        rng = np.random.default_rng(7)
        majority = basic(**{str(HAPPY): 0.6, str(SURPRISE): 0.4})
        probs = []
        for i in range(60):
            if rng.random() < 0.25:  # noise frames pointing elsewhere
                probs.append(basic(**{str(SAD): 0.6, str(FEAR): 0.4}))
            else:
                probs.append(majority)
        frames = frames_from_probs(probs)
        raw = [l for _, l in predict_sequence(frames, "A", "largest")]
        smoothed = [
            l
            for _, l in predict_sequence(
                frames, "A", "largest", FilterSpec("box", k=4)
            )
        ]
        transitions = lambda seq: sum(1 for a, b in zip(seq, seq[1:]) if a != b)
        assert transitions(smoothed) < transitions(raw)

    def test_faceless_frames_backfilled_from_nearest(self):
        fear = basic(**{str(FEAR): 0.6, str(SURPRISE): 0.4})     # class 0
        happy = basic(**{str(HAPPY): 0.6, str(SURPRISE): 0.4})   # class 1
        frames = [
            FaceFrame("v", 0, (Face(1.0, fear),)),
            FaceFrame("v", 1, ()),          # nearest is frame 0 -> class 0
            FaceFrame("v", 3, ()),          # frames 0 and 6 tie-break? 3->0 is 3, 3->6 is 3: earlier wins
            FaceFrame("v", 6, (Face(1.0, happy),)),
            FaceFrame("v", 8, ()),          # nearest is frame 6 -> class 1
        ]
        out = dict(predict_sequence(frames, "A", "largest"))
        assert out[0] == 0 and out[6] == 1
        assert out[1] == 0
        assert out[3] == 0  # equidistant, earlier frame wins
        assert out[8] == 1

    def test_all_faceless_warns_and_returns_empty(self):
        frames = [FaceFrame("v", i, ()) for i in range(3)]
        with pytest.warns(UserWarning):
            assert predict_sequence(frames, "A", "largest") == []

    def test_unsorted_frames_rejected(self):
        p = np.full(8, 0.125)
        frames = [FaceFrame("v", 2, (Face(1.0, p),)), FaceFrame("v", 1, (Face(1.0, p),))]
        with pytest.raises(ContractError):
            predict_sequence(frames, "A", "largest")


class TestClassBalance:
    def test_reference_distribution_normalized(self):
        ref = reference_distribution()
        assert ref.sum() == pytest.approx(1.0, abs=1e-12)
        assert ref[1] == pytest.approx(24915 / 90302, abs=1e-12)

    def test_exact_proportions_give_zero_kl(self):
        labels = np.repeat(np.arange(7), (14445, 24915, 10780, 10637, 10535, 10112, 8878))
        report = class_balance_report(labels)
        assert report.kl < 1e-12
        assert report.counts.sum() == 90302

    def test_single_class_predictions_large_finite_kl(self):
        report = class_balance_report([1] * 100)
        ref = reference_distribution()
        expected = sum(
            r * math.log(r / max(p, 1e-9))
            for r, p in zip(ref, [0, 1.0, 0, 0, 0, 0, 0])
        )
        assert report.kl == pytest.approx(expected, abs=1e-9)
        assert math.isfinite(report.kl)

    def test_multinomial_sample_close_to_reference(self):
        rng = np.random.default_rng(42)
        sample = rng.choice(7, size=10000, p=reference_distribution())
        report = class_balance_report(sample)
        assert report.kl < 0.01

    def test_empty_labels_rejected(self):
        with pytest.raises(ContractError):
            class_balance_report([])


class TestFacesIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        frames = [
            FaceFrame(
                "v", i, tuple(Face(float(j + 1), rng.dirichlet(np.ones(8))) for j in range(2))
            )
            for i in range(4)
        ]
        p = tmp_path / "faces.csv"
        save_faces(p, frames)
        loaded = load_faces(p)
        assert len(loaded) == 4
        for f0, f1 in zip(frames, loaded):
            assert f0.frame_index == f1.frame_index
            assert len(f0.faces) == len(f1.faces)
            for a, b in zip(f0.faces, f1.faces):
                assert a.area == b.area
                assert (a.p_basic == b.p_basic).all()

    def test_invalid_simplex_rejected(self, tmp_path):
        p = tmp_path / "faces.csv"
        header = "video_id,frame,face_area," + ",".join(
            f"p_{n}" for n in
            ("neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise", "other")
        )
        p.write_text(header + "\nv,1,10.0,0.5,0.5,0.5,0,0,0,0,0\n")
        with pytest.raises(ValidationError):
            load_faces(p)

    def test_labels_written_with_canonical_names(self, tmp_path):
        p = tmp_path / "out.csv"
        save_compound_labels(p, [("v", 2, 1), ("v", 1, 0)])
        lines = p.read_text().splitlines()
        assert lines[0] == "video_id,frame,compound_label"
        assert lines[1] == "v,1,Fearfully Surprised"
        assert lines[2] == "v,2,Happily Surprised"
