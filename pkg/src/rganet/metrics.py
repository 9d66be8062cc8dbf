"""Confusion statistics, segmentation scores and the MGRID grid metric.

MGRID partitions a prediction/ground-truth pair into a grid of cells,
scores every cell that holds any positive evidence (tp + fp + fn > 0) with
F-beta, bends each score through a cubic regulator and averages.
"""

import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-31


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt, positive_class=2):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred == positive_class
    g = gt == positive_class
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return Confusion(tp, fp, fn, p.size - tp - fp - fn)


def fbeta(c, beta=0.5, eps=EPS):
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    b2 = beta * beta
    return (1 + b2) * c.tp / (b2 * (c.tp + c.fn) + c.tp + c.fp + eps)


def classic_metrics(c, eps=EPS):
    tp, fp, fn, tn = (float(v) for v in (c.tp, c.fp, c.fn, c.tn))
    denom_mcc = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return {
        "accuracy": (tp + tn) / (tp + fp + fn + tn + eps),
        "precision": tp / (tp + fp + eps),
        "recall": tp / (tp + fn + eps),
        "jaccard": tp / (tp + fp + fn + eps),
        "dice": 2 * tp / (2 * tp + fp + fn + eps),
        "mcc": (tp * tn - fp * fn) / (denom_mcc + eps),
    }


@dataclass(frozen=True)
class MgridConfig:
    beta: float = 0.5
    cell_h: int = 12
    cell_w: int = 12
    f_m: float = 0.5
    c_m: float = 0.525
    epsilon: float = EPS

    def __post_init__(self):
        if not 0 < self.f_m < 1:
            raise ValueError(f"F_m must lie in (0, 1), got {self.f_m}")
        lo, hi = valid_cm_interval(self.f_m)
        if not lo < self.c_m < hi:
            raise ValueError(
                f"C_m={self.c_m} outside the valid interval ({lo:.6g}, {hi:.6g}) for F_m={self.f_m}; "
                "the regulator intercept would leave (0, F_m)"
            )
        if self.cell_h < 1 or self.cell_w < 1:
            raise ValueError("grid cells must be at least 1x1 pixels")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def t(self):
        return (self.f_m / (1 - self.f_m)) ** 3

    @property
    def s_coef(self):
        return (1 - self.c_m) / (1 - self.f_m) ** 3

    @property
    def b(self):
        """Value the regulator approaches as F -> 0+."""
        return self.c_m * (1 + self.t) - self.t


def valid_cm_interval(f_m):
    """Open interval of C_m keeping the regulator intercept inside (0, F_m)."""
    t = (f_m / (1 - f_m)) ** 3
    return t / (1 + t), (f_m + t) / (1 + t)


def regulator(f, cfg=MgridConfig()):
    if f == 0:
        return 0.0
    return cfg.s_coef * (f - cfg.f_m) ** 3 + cfg.c_m


def cell_confusions(pred, gt, positive_class, cell_h, cell_w):
    """Per-cell (tp, fp, fn) arrays over a grid anchored at (0, 0).

    Edge cells that are cut short by the image border are kept as they are.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"need two equal 2-D masks, got {pred.shape} and {gt.shape}")
    H, W = pred.shape
    rows = math.ceil(H / cell_h)
    cols = math.ceil(W / cell_w)
    p = pred == positive_class
    g = gt == positive_class

    def per_cell(mask):
        padded = np.zeros((rows * cell_h, cols * cell_w), dtype=np.int64)
        padded[:H, :W] = mask
        return padded.reshape(rows, cell_h, cols, cell_w).sum(axis=(1, 3))

    return per_cell(p & g), per_cell(p & ~g), per_cell(~p & g)


def mgrid(pred, gt, positive_class=2, cfg=MgridConfig()):
    """Mean regulated F-beta over evidential cells, or None when no cell has evidence."""
    tp, fp, fn = cell_confusions(pred, gt, positive_class, cfg.cell_h, cfg.cell_w)
    evidential = (tp + fp + fn) > 0
    n = int(evidential.sum())
    if n == 0:
        return None
    scores = [
        regulator(fbeta(Confusion(int(a), int(b), int(c), 0), cfg.beta, cfg.epsilon), cfg)
        for a, b, c in zip(tp[evidential], fp[evidential], fn[evidential])
    ]
    return math.fsum(scores) / n


def evaluate_pair(pred, gt, positive_class=2, cfg=MgridConfig()):
    """All per-image scores for one mask pair."""
    c = confusion(pred, gt, positive_class)
    row = classic_metrics(c)
    row["fbeta"] = fbeta(c, cfg.beta, cfg.epsilon)
    row["mgrid"] = mgrid(pred, gt, positive_class, cfg)
    return row


def regulator_curve(cfg=MgridConfig(), step=1e-3):
    """(f, gamma) samples on [0, 1]."""
    n = int(round(1 / step))
    return [(i / n, regulator(i / n, cfg)) for i in range(n + 1)]
