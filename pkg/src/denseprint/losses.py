"""Training loss kernels with analytic gradients.

These are reference implementations (plain numpy, no autograd): a large-margin
cosine classification loss over minutia-patch classes, a masked descriptor
similarity loss, BCE for segmentation, MSE for minutiae maps, and the weighted
total. Every loss exposes an analytic gradient so it can be verified against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax


@dataclass(frozen=True)
class LossConfig:
    scale: float = 30.0  # A
    margin: float = 0.4  # b
    lam_seg: float = 1.0
    lam_mnt: float = 0.01
    lam_sim: float = 0.00125

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not (0.0 <= self.margin < 1.0):
            raise ValueError("margin must be in [0, 1)")
        if min(self.lam_seg, self.lam_mnt, self.lam_sim) < 0:
            raise ValueError("loss weights must be non-negative")


_BCE_EPS = 1e-7


def _unit_rows(x: np.ndarray, what: str):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError(f"zero-norm {what}")
    return x / norms[:, None], norms


def cosface_loss(features: np.ndarray, labels: np.ndarray, weights: np.ndarray,
                 cfg: LossConfig = LossConfig(), with_grad: bool = False):
    """Large-margin cosine loss, mean over the batch.

    Per sample: -log(e^{A(cos t_y - b)} / (e^{A(cos t_y - b)} + sum_{v != y}
    e^{A cos t_v})) with cosines between the unit-normalized feature and
    class weight vectors. With a single class the negative sum is empty and
    the loss is exactly zero.

    with_grad=True returns (loss, grad_features, grad_weights).
    """
    features = np.asarray(features, dtype=float)
    weights = np.asarray(weights, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if features.ndim != 2 or weights.ndim != 2:
        raise ValueError("features and weights must be 2D")
    if features.shape[1] != weights.shape[1]:
        raise ValueError("feature and weight dimensions differ")
    n, _ = features.shape
    v = weights.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must have one entry per feature row")
    if np.any(labels < 0) or np.any(labels >= v):
        raise ValueError("label out of range")
    fhat, fnorm = _unit_rows(features, "feature")
    what, wnorm = _unit_rows(weights, "weight")
    cos = fhat @ what.T  # (n, v)
    z = cfg.scale * cos
    rows = np.arange(n)
    z[rows, labels] = cfg.scale * (cos[rows, labels] - cfg.margin)
    lse = logsumexp(z, axis=1)
    losses = lse - z[rows, labels]
    loss = float(np.mean(losses))
    if not with_grad:
        return loss
    p = softmax(z, axis=1)
    coeff = cfg.scale * p  # dL_n / dcos, before the -delta term
    coeff[rows, labels] -= cfg.scale
    # dcos_nv/df_n = (what_v - cos_nv * fhat_n) / |f_n|
    gf = (coeff @ what - np.sum(coeff * cos, axis=1)[:, None] * fhat) / fnorm[:, None]
    gw = (coeff.T @ fhat - np.sum(coeff * cos, axis=0)[:, None] * what) / wnorm[:, None]
    return loss, gf / n, gw / n


def similarity_loss(f_p: np.ndarray, f_r: np.ndarray, overlap: np.ndarray,
                    with_grad: bool = False):
    """Mean over overlap cells of the squared channel-vector difference."""
    f_p = np.asarray(f_p, dtype=float)
    f_r = np.asarray(f_r, dtype=float)
    overlap = np.asarray(overlap, dtype=bool)
    if f_p.shape != f_r.shape:
        raise ValueError("descriptor shapes differ")
    if overlap.shape != f_p.shape[1:]:
        raise ValueError("overlap mask does not match the cell grid")
    count = int(np.count_nonzero(overlap))
    if count == 0:
        raise ValueError("empty overlap")
    diff = (f_p - f_r) * overlap[None]
    loss = float(np.sum(diff**2) / count)
    if not with_grad:
        return loss
    return loss, 2.0 * diff / count


def segmentation_loss(pred: np.ndarray, target: np.ndarray,
                      with_grad: bool = False):
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("shapes differ")
    p = np.clip(pred, _BCE_EPS, 1.0 - _BCE_EPS)
    loss = float(np.mean(-target * np.log(p) - (1.0 - target) * np.log1p(-p)))
    if not with_grad:
        return loss
    grad = (-target / p + (1.0 - target) / (1.0 - p)) / pred.size
    grad = np.where((pred > _BCE_EPS) & (pred < 1.0 - _BCE_EPS), grad, 0.0)
    return loss, grad


def minutiae_loss(pred: np.ndarray, target: np.ndarray,
                  with_grad: bool = False):
    """Mean squared error over all map cells."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("shapes differ")
    diff = pred - target
    loss = float(np.mean(diff**2))
    if not with_grad:
        return loss
    return loss, 2.0 * diff / pred.size


def total_loss(components, cfg: LossConfig = LossConfig()) -> float:
    """Weighted sum of (cls_texture, cls_minutia, seg, mnt, sim)."""
    vals = [float(c) for c in components]
    if len(vals) != 5:
        raise ValueError("expected 5 components: cls_t, cls_m, seg, mnt, sim")
    if not all(np.isfinite(vals)):
        raise ValueError("non-finite loss component")
    cls_t, cls_m, seg, mnt, sim = vals
    return cls_t + cls_m + cfg.lam_seg * seg + cfg.lam_mnt * mnt + cfg.lam_sim * sim


def finite_diff_check(fn, point: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between fn's analytic gradient and central differences.

    fn maps a flat point to (value, gradient). Relative error per coordinate
    uses a small absolute floor so near-zero gradient entries do not blow up
    the ratio.
    """
    point = np.asarray(point, dtype=float)
    _, grad = fn(point)
    grad = np.asarray(grad, dtype=float).reshape(point.shape)
    worst = 0.0
    floor = 1e-6
    for i in range(point.size):
        shift = np.zeros_like(point)
        shift.flat[i] = eps
        hi, _ = fn(point + shift)
        lo, _ = fn(point - shift)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("non-finite loss in the stencil")
        fd = (hi - lo) / (2.0 * eps)
        denom = max(abs(fd), abs(grad.flat[i]), floor)
        worst = max(worst, abs(fd - grad.flat[i]) / denom)
    return worst
