import numpy as np
import pytest

from emopost.datamodel import MtlLabels, PredictionSet
from emopost.ensemble import (
    BlendWeights,
    blend,
    blend_many,
    load_blend_weights,
    save_blend_report,
    tune_blend_weights,
    weight_grid,
)
from emopost.errors import ContractError, ValidationError
from emopost.metrics import macro_f1_expr


def rand_pred(rng):
    e = rng.random(8)
    return PredictionSet(rng.uniform(-1, 1, 2), e / e.sum(), rng.random(12))


def one_hot(c):
    v = np.zeros(8)
    v[c] = 1.0
    return v


class TestBlend:
    def test_weight_one_returns_first_model(self):
        rng = np.random.default_rng(0)
        p1, p2 = rand_pred(rng), rand_pred(rng)
        out = blend(p1, p2, BlendWeights(1.0, 1.0, 1.0))
        assert (out.p_va == p1.p_va).all()
        assert (out.p_expr == p1.p_expr).all()
        assert (out.p_au == p1.p_au).all()

    def test_half_mix_of_one_hots(self):
        base = np.zeros(2), None, np.full(12, 0.5)
        p1 = PredictionSet(base[0], one_hot(0), base[2])
        p2 = PredictionSet(base[0], one_hot(1), base[2])
        out = blend(p1, p2, BlendWeights(0.5, 0.5, 0.5))
        assert out.p_expr[0] == 0.5 and out.p_expr[1] == 0.5
        assert (out.p_expr[2:] == 0).all()

    def test_matches_componentwise_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            p1, p2 = rand_pred(rng), rand_pred(rng)
            w = BlendWeights(0.3, 0.3, 0.3)
            out = blend(p1, p2, w)
            for task in ("p_va", "p_expr", "p_au"):
                expected = 0.3 * getattr(p1, task) + 0.7 * getattr(p2, task)
                assert getattr(out, task) == pytest.approx(expected, abs=1e-15)

    def test_blend_with_itself_is_identity(self):
        rng = np.random.default_rng(2)
        p = rand_pred(rng)
        for w in (0.0, 0.25, 1.0):
            out = blend(p, p, BlendWeights(w, w, w))
            assert out.p_expr == pytest.approx(p.p_expr, abs=1e-15)

    def test_convexity_preserved(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            out = blend(rand_pred(rng), rand_pred(rng), BlendWeights(0.42, 0.42, 0.42))
            assert out.p_expr.sum() == pytest.approx(1.0, abs=1e-9)
            assert (np.abs(out.p_va) <= 1).all()
            assert ((out.p_au >= 0) & (out.p_au <= 1)).all()

    def test_blend_many_requires_same_keys(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValidationError):
            blend_many({("a", 1): rand_pred(rng)}, {}, BlendWeights())

    def test_weight_range_enforced(self):
        with pytest.raises(ValidationError):
            BlendWeights(1.2, 0.5, 0.5)


def make_fixture(rng, n=60):
    """Model 2 is oracle-perfect, model 1 is noise."""
    labels, p1, p2 = {}, {}, {}
    for f in range(n):
        key = ("v", f)
        va = rng.uniform(-0.8, 0.8, 2)
        cls = int(rng.integers(0, 8))
        aus = tuple(int(x) for x in rng.integers(0, 2, 12))
        labels[key] = MtlLabels(float(va[0]), float(va[1]), cls, aus)
        p2[key] = PredictionSet(va, one_hot(cls), np.array(aus, dtype=float))
        p1[key] = rand_pred(rng)
    return labels, p1, p2


class TestTune:
    def test_oracle_second_model_drives_weight_to_zero(self):
        # CCC/F1 are maximal only at exact equality, so w=0 is strictly optimal
        labels, p1, p2 = make_fixture(np.random.default_rng(5))
        result = tune_blend_weights(p1, p2, labels)
        assert result.weights == BlendWeights(0.0, 0.0, 0.0)

    def test_identical_models_tie_break_to_zero(self):
        labels, p1, _ = make_fixture(np.random.default_rng(6))
        result = tune_blend_weights(p1, dict(p1), labels)
        assert result.weights == BlendWeights(0.0, 0.0, 0.0)
        for task in ("va", "expr", "au"):
            ms = [m for _, m in result.trace[task]]
            assert max(ms) - min(ms) < 1e-12

    def test_matches_exhaustive_scan_step_01(self):
        labels, p1, p2 = make_fixture(np.random.default_rng(7))
        labels = {k: v for k, v in labels.items()}
        result = tune_blend_weights(p1, p2, labels, step=0.1)

        keys = sorted(labels)
        y_expr = np.array([labels[k].expression for k in keys])
        e1 = np.array([p1[k].p_expr for k in keys])
        e2 = np.array([p2[k].p_expr for k in keys])
        best = None
        for w in [i / 10 for i in range(11)]:
            m = macro_f1_expr(np.argmax(w * e1 + (1 - w) * e2, axis=1), y_expr)
            if best is None or m > best[1]:
                best = (w, m)
        assert result.weights.w_expr == best[0]
        assert result.best["expr"] == pytest.approx(best[1], abs=1e-12)

    def test_finer_step_never_worse(self):
        labels, p1, p2 = make_fixture(np.random.default_rng(8))
        coarse = tune_blend_weights(p1, p2, labels, step=0.1)
        fine = tune_blend_weights(p1, p2, labels, step=0.05)
        for task in ("va", "expr", "au"):
            assert fine.best[task] >= coarse.best[task] - 1e-12

    def test_tuned_metric_at_least_endpoints(self):
        rng = np.random.default_rng(9)
        labels, p1, p2 = make_fixture(rng)
        # add noise to the oracle so neither endpoint is trivially optimal
        for k in p2:
            e = p2[k].p_expr + rng.random(8) * 0.4
            p2[k] = PredictionSet(p2[k].p_va, e / e.sum(), p2[k].p_au)
        result = tune_blend_weights(p1, p2, labels)
        for task in ("va", "expr", "au"):
            points = dict(result.trace[task])
            assert result.best[task] >= points[0.0] - 1e-12
            assert result.best[task] >= points[1.0] - 1e-12

    def test_no_labels_for_tuned_task_rejected(self):
        rng = np.random.default_rng(10)
        labels = {("v", f): MtlLabels(expression=int(rng.integers(0, 8))) for f in range(9)}
        p1 = {k: rand_pred(rng) for k in labels}
        p2 = {k: rand_pred(rng) for k in labels}
        with pytest.raises(ContractError):
            tune_blend_weights(p1, p2, labels)  # VA has no labels
        result = tune_blend_weights(p1, p2, labels, tasks=("expr",))
        assert "expr" in result.best

    def test_grid_includes_endpoints(self):
        for step in (0.05, 0.1, 0.3, 1.0):
            grid = weight_grid(step)
            assert grid[0] == 0.0 and grid[-1] == 1.0
            assert all(b > a for a, b in zip(grid, grid[1:]))


class TestReport:
    def test_report_round_trip(self, tmp_path):
        labels, p1, p2 = make_fixture(np.random.default_rng(11))
        result = tune_blend_weights(p1, p2, labels)
        path = tmp_path / "blend.txt"
        save_blend_report(path, result)
        loaded = load_blend_weights(path)
        assert loaded == result.weights
