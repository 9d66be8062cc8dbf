import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rganet.metrics import (
    Confusion, MgridConfig, cell_confusions, classic_metrics, confusion, evaluate_pair, fbeta, mgrid,
    regulator, regulator_curve, valid_cm_interval,
)


def brute_confusion(pred, gt, pos):
    tp = fp = fn = tn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p, g = pred[i, j] == pos, gt[i, j] == pos
            tp += p and g
            fp += p and not g
            fn += g and not p
            tn += not p and not g
    return Confusion(tp, fp, fn, tn)


def brute_mgrid(pred, gt, pos, cfg):
    """Independent per-cell oracle: walk cells with explicit slicing."""
    scores = []
    for y in range(0, pred.shape[0], cfg.cell_h):
        for x in range(0, pred.shape[1], cfg.cell_w):
            c = brute_confusion(pred[y:y + cfg.cell_h, x:x + cfg.cell_w], gt[y:y + cfg.cell_h, x:x + cfg.cell_w], pos)
            if c.tp + c.fp + c.fn == 0:
                continue
            b2 = cfg.beta ** 2
            f = (1 + b2) * c.tp / (b2 * (c.tp + c.fn) + c.tp + c.fp + cfg.epsilon)
            scores.append(0.0 if f == 0 else cfg.s_coef * (f - cfg.f_m) ** 3 + cfg.c_m)
    return sum(scores) / len(scores) if scores else None


class TestConfusion:
    def test_all_positive_match(self):
        m = np.full((4, 4), 2)
        assert confusion(m, m) == Confusion(16, 0, 0, 0)

    def test_all_false_positive(self):
        assert confusion(np.full((3, 3), 2), np.zeros((3, 3))) == Confusion(0, 9, 0, 0)

    def test_matches_brute_force(self, rng):
        pred, gt = rng.integers(0, 3, (16, 16)), rng.integers(0, 3, (16, 16))
        assert confusion(pred, gt) == brute_confusion(pred, gt, 2)
        assert confusion(pred, gt, 1) == brute_confusion(pred, gt, 1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 2)), np.zeros((2, 3)))


class TestFbeta:
    def test_examples(self):
        assert fbeta(Confusion(10, 0, 0, 0)) == pytest.approx(1.0, abs=1e-12)
        assert fbeta(Confusion(0, 3, 7, 0)) == 0
        assert fbeta(Confusion(0, 0, 0, 5)) == 0
        assert fbeta(Confusion(5, 5, 5, 0), 0.5) == pytest.approx(0.5, abs=1e-15)

    def test_rejects_non_positive_beta(self):
        with pytest.raises(ValueError):
            fbeta(Confusion(1, 1, 1, 1), 0)

    def test_random_tuples(self):
        rng = np.random.default_rng(3)
        for tp, fp, fn, tn in rng.integers(0, 10_000, (10_000, 4)):
            c = Confusion(int(tp), int(fp), int(fn), int(tn))
            for beta in (0.5, 1.0, 2.0):
                b2 = beta * beta
                ref = (1 + b2) * tp / (b2 * (tp + fn) + tp + fp + 1e-31)
                assert abs(fbeta(c, beta) - ref) <= 1e-12
            assert classic_metrics(c)["dice"] == fbeta(c, 1.0)


class TestClassic:
    def test_perfect(self):
        scores = classic_metrics(Confusion(30, 0, 0, 70))
        for v in scores.values():
            assert v == pytest.approx(1.0, abs=1e-12)

    def test_balanced_mcc_zero(self):
        assert classic_metrics(Confusion(25, 25, 25, 25))["mcc"] == 0

    def test_empty_is_finite(self):
        assert all(math.isfinite(v) for v in classic_metrics(Confusion(0, 0, 0, 0)).values())

    @settings(max_examples=1000, deadline=None)
    @given(*(st.integers(0, 10**6) for _ in range(4)))
    def test_dice_is_f1(self, tp, fp, fn, tn):
        c = Confusion(tp, fp, fn, tn)
        assert classic_metrics(c)["dice"] == pytest.approx(fbeta(c, 1.0), abs=1e-12)


class TestRegulator:
    def test_points(self):
        cfg = MgridConfig()
        assert regulator(0.0) == 0
        assert regulator(0.5) == pytest.approx(0.525, abs=1e-9)
        assert regulator(1.0) == pytest.approx(1.0, abs=1e-9)
        assert regulator(0.25) == pytest.approx(0.465625, abs=1e-12)
        assert cfg.s_coef == pytest.approx(3.8, abs=1e-12)
        assert cfg.b == pytest.approx(0.05, abs=1e-9)
        assert regulator(1e-12) == pytest.approx(cfg.b, abs=1e-9)

    def test_strictly_increasing(self):
        vals = [regulator(i / 1000) for i in range(1, 1001)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    @settings(max_examples=200)
    @given(st.floats(0.05, 0.95), st.floats(0.001, 0.999))
    def test_intercept_inside_range(self, f_m, u):
        lo, hi = valid_cm_interval(f_m)
        c_m = lo + u * (hi - lo)
        if not lo < c_m < hi:
            return
        cfg = MgridConfig(f_m=f_m, c_m=c_m)
        assert -1e-12 < cfg.b < f_m + 1e-12
        assert regulator(1.0, cfg) == pytest.approx(1.0, abs=1e-9)

    def test_validity_interval(self):
        lo, hi = valid_cm_interval(0.5)
        assert (lo, hi) == (0.5, 0.75)
        for cm in (0.4, 0.49, 0.5, 0.75, 0.76):
            with pytest.raises(ValueError, match="C_m"):
                MgridConfig(f_m=0.5, c_m=cm)
        MgridConfig(f_m=0.5, c_m=0.525)
        MgridConfig(f_m=0.5, c_m=0.74)

    def test_other_rejections(self):
        with pytest.raises(ValueError):
            MgridConfig(f_m=1.0)
        with pytest.raises(ValueError):
            MgridConfig(cell_h=0)

    def test_curve(self):
        curve = regulator_curve()
        assert len(curve) == 1001 and curve[0] == (0.0, 0.0) and curve[-1][0] == 1.0


def two_object_masks():
    """24x24, two 10x10 objects in the top-right and bottom-left 12x12 cells."""
    gt = np.zeros((24, 24), np.uint8)
    gt[1:11, 13:23] = 2
    gt[13:23, 1:11] = 2
    a = np.zeros_like(gt)
    a[1:9, 13:23] = 2                  # 80 px on object 1
    b = np.zeros_like(gt)
    b[1:7, 13:23] = 2                  # 60 px on object 1
    b[7, 13:18] = 2                    # +5 -> 65 px on object 1
    b[13:15, 1:9] = 2                  # 15 px on object 2: 8 + 7
    b[14, 8] = 0
    return gt, a, b


class TestMgrid:
    def test_identical_masks(self):
        m = np.zeros((30, 30), np.uint8)
        m[3:20, 5:9] = 2
        assert mgrid(m, m) == pytest.approx(1.0, abs=1e-12)

    def test_no_evidence(self):
        z = np.zeros((24, 24), np.uint8)
        assert mgrid(z, z) is None
        assert evaluate_pair(z, z)["mgrid"] is None

    def test_half_example(self):
        gt = np.zeros((24, 12), np.uint8)
        gt[2:5, 2:5] = 2
        gt[14:17, 2:5] = 2
        pred = np.zeros_like(gt)
        pred[2:5, 2:5] = 2
        assert mgrid(pred, gt) == pytest.approx(0.5, abs=1e-12)

    def test_split_prediction_ordering(self):
        gt, a, b = two_object_masks()
        ca, cb = confusion(a, gt), confusion(b, gt)
        assert ca == cb == Confusion(80, 0, 120, 376)
        assert abs(classic_metrics(ca)["dice"] - classic_metrics(cb)["dice"]) <= 1e-12
        assert abs(fbeta(ca) - fbeta(cb)) <= 1e-12
        cfg = MgridConfig()
        ma, mb = mgrid(a, gt), mgrid(b, gt)
        assert ma == pytest.approx(brute_mgrid(a, gt, 2, cfg), abs=1e-12)
        assert mb == pytest.approx(brute_mgrid(b, gt, 2, cfg), abs=1e-12)
        assert mb > ma

    @pytest.mark.parametrize("shape,cell", [((30, 25), (12, 12)), ((16, 16), (5, 7)), ((7, 40), (3, 12))])
    def test_matches_oracle_with_truncated_cells(self, shape, cell, rng):
        cfg = MgridConfig(cell_h=cell[0], cell_w=cell[1])
        for _ in range(5):
            pred = rng.integers(0, 3, shape)
            gt = (rng.random(shape) < 0.2) * 2
            assert mgrid(pred, gt, 2, cfg) == pytest.approx(brute_mgrid(pred, gt, 2, cfg), abs=1e-12)

    def test_cell_counts_cover_image(self, rng):
        pred, gt = rng.integers(0, 3, (25, 31)), rng.integers(0, 3, (25, 31))
        tp, fp, fn = cell_confusions(pred, gt, 2, 12, 12)
        assert tp.shape == (3, 3)
        c = confusion(pred, gt)
        assert (tp.sum(), fp.sum(), fn.sum()) == (c.tp, c.fp, c.fn)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_single_cell_equals_global(self, seed):
        rng = np.random.default_rng(seed)
        pred, gt = rng.integers(0, 3, (20, 17)), rng.integers(0, 3, (20, 17))
        cfg = MgridConfig(cell_h=20, cell_w=40)
        got = mgrid(pred, gt, 2, cfg)
        c = confusion(pred, gt)
        if c.tp + c.fp + c.fn == 0:
            assert got is None
        else:
            assert got == pytest.approx(regulator(fbeta(c), cfg), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        pred, gt = rng.integers(0, 3, (30, 30)), rng.integers(0, 3, (30, 30))
        v = mgrid(pred, gt)
        assert v is None or 0 <= v <= 1
