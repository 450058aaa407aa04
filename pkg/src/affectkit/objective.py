"""Concordance correlation coefficient (CCC) metric and training loss.

The training loss is 1 - rho_c, where rho_c is computed over the batch of
per-sequence aggregates (mean or median of each sequence's frame predictions)
against the per-sequence labels. Variances and covariances are population
(divide by N) statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError


@dataclass(frozen=True)
class Aggregator:
    kind: str = "mean"

    def __post_init__(self):
        if self.kind not in ("mean", "median"):
            raise ValueError(f"unknown aggregator {self.kind!r}")


def ccc(pred, gold):
    """Concordance correlation coefficient of two equal-length series.

    Degenerate conventions: both series constant and equal -> 1; both
    constant but unequal -> 0. A single constant series yields 0 through the
    zero covariance numerator.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise ShapeError(f"ccc needs two equal-length 1-D series, "
                         f"got {pred.shape} and {gold.shape}")
    if pred.size < 2:
        raise ShapeError(f"ccc needs length >= 2, got {pred.size}")
    mp, mg = pred.mean(), gold.mean()
    vp, vg = pred.var(), gold.var()
    cov = ((pred - mp) * (gold - mg)).mean()
    den = vp + vg + (mp - mg) ** 2
    if den == 0.0:
        return 1.0
    if vp == 0.0 and vg == 0.0:
        return 0.0
    return 2.0 * cov / den


def aggregate(values, agg):
    """Mean or median of a non-empty list; even-length medians average the
    two middle order statistics."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("aggregate: empty list")
    if agg.kind == "mean":
        return float(values.mean())
    return float(np.median(values))


def _aggregate_rows(preds, agg, mask=None):
    """Differentiable per-row aggregation of a Tensor[B,T] (masked positions
    excluded); returns Tensor[B]."""
    if agg.kind == "median":
        return T.median_over_rows(preds, mask)
    if mask is None:
        return T.tmean(preds, axis=1)
    keep = (~mask).astype(np.float64)
    counts = keep.sum(axis=1)
    if np.any(counts == 0):
        raise ShapeError("aggregation over a fully masked row")
    return T.mul(T.tsum(T.mul(preds, keep), axis=1), 1.0 / counts)


def ccc_loss(per_frame_preds, seq_labels, agg, mask=None, diagnostics=None):
    """1 - rho_c between per-sequence aggregates and sequence labels.

    `per_frame_preds` is a Tensor[B,T]; `seq_labels` a length-B array. The
    loss is differentiable through the aggregation (mean: uniform weights;
    median: subgradient to the selected order statistic(s)). Constant-label
    batches fall back to the degenerate ccc conventions with zero gradient;
    when `diagnostics` (a dict) is passed, `degenerate=True` is recorded.
    """
    preds = T.as_tensor(per_frame_preds)
    if preds.data.ndim != 2:
        raise ShapeError(f"ccc_loss expects Tensor[B,T], got {preds.data.shape}")
    b = preds.data.shape[0]
    if b < 2:
        raise ShapeError(f"ccc_loss needs batch >= 2, got {b}")
    labels = np.asarray(seq_labels, dtype=np.float64)
    if labels.shape != (b,):
        raise ShapeError(f"ccc_loss labels must be [B]={b}, got {labels.shape}")
    aggs = _aggregate_rows(preds, agg, mask)

    my = labels.mean()
    vy = labels.var()
    mp = aggs.data.mean()
    vp = aggs.data.var()
    den_val = vp + vy + (mp - my) ** 2
    if den_val == 0.0 or (vp == 0.0 and vy == 0.0):
        if diagnostics is not None:
            diagnostics["degenerate"] = True
        return Tensor(0.0 if den_val == 0.0 else 1.0)

    mean_p = T.tmean(aggs)
    dev_p = T.sub(aggs, mean_p)
    var_p = T.tmean(T.square(dev_p))
    cov = T.tmean(T.mul(dev_p, labels - my))
    gap = T.sub(mean_p, Tensor(my))
    den = T.add(T.add(var_p, Tensor(vy)), T.square(gap))
    rho = T.div(T.mul(cov, 2.0), den)
    return T.sub(Tensor(1.0), rho)


def ccc_loss_joint(preds, labels, agg, mask=None, diagnostics=None):
    """Unweighted sum of the valence and arousal CCC losses.

    `preds` is a Tensor[B,T,2]; `labels` is [B,2] with columns
    (valence, arousal).
    """
    preds = T.as_tensor(preds)
    if preds.data.ndim != 3 or preds.data.shape[2] != 2:
        raise ShapeError(f"ccc_loss_joint expects Tensor[B,T,2], got {preds.data.shape}")
    labels = np.asarray(labels, dtype=np.float64)
    lv = ccc_loss(preds[:, :, 0], labels[:, 0], agg, mask, diagnostics)
    la = ccc_loss(preds[:, :, 1], labels[:, 1], agg, mask, diagnostics)
    return T.add(lv, la)
