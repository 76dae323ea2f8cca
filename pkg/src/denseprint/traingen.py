"""Mated-minutia selection and aligned patch-pair generation.

Builds the training signal for descriptor learning: given two impressions of
the same finger, find minutia pairs that genuinely correspond, then cut out
minutia-aligned patch pairs so that each correspondence becomes one class.

The selection funnel is deliberately conservative; a dropped genuine pair
costs one training sample, a kept spurious pair poisons a class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Minutia
from .geometry import (
    PATCH_SIZE,
    NoConsensusError,
    Patch,
    RansacConfig,
    align_to_minutia,
    erode_mask,
    estimate_affine_ransac,
    farthest_point_sampling,
)
from .mcc import MccParams, build_all_cylinders, mcc_local_similarity


@dataclass(frozen=True)
class TrainGenConfig:
    top_n: int = 12
    fps_k: int = 5
    erosion_radius: int = 16
    ransac: RansacConfig = field(default_factory=RansacConfig)
    mcc: MccParams = field(default_factory=MccParams)
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if not (self.top_n >= self.fps_k >= 1):
            raise ValueError("need top_n >= fps_k >= 1")
        if self.erosion_radius < 0:
            raise ValueError("erosion_radius must be non-negative")
        if self.patch_size < 8:
            raise ValueError("patch_size too small")


@dataclass(frozen=True)
class MatedPair:
    """A correspondence between minutia index_a in A and index_b in B."""

    index_a: int
    index_b: int
    score: float


def _greedy_one_to_one(scores: np.ndarray, top_n: int) -> list[tuple[int, int, float]]:
    """Best pairs by descending score, each index used at most once.

    Ties break on (index_a, index_b) so the funnel is fully deterministic.
    Zero-score pairs are not correspondence candidates.
    """
    na, nb = scores.shape
    order = sorted(((float(scores[i, j]), i, j)
                    for i in range(na) for j in range(nb)
                    if scores[i, j] > 0.0),
                   key=lambda t: (-t[0], t[1], t[2]))
    used_a: set[int] = set()
    used_b: set[int] = set()
    picked = []
    for s, i, j in order:
        if i in used_a or j in used_b:
            continue
        picked.append((i, j, s))
        used_a.add(i)
        used_b.add(j)
        if len(picked) == top_n:
            break
    return picked


def _inside(eroded: np.ndarray, m: Minutia) -> bool:
    h, w = eroded.shape
    iy = min(max(int(round(m.y)), 0), h - 1)
    ix = min(max(int(round(m.x)), 0), w - 1)
    return bool(eroded[iy, ix])


def select_mated_minutiae(a, b, cfg: TrainGenConfig = TrainGenConfig()) -> list[MatedPair]:
    """Correspondences between two impressions, safest first.

    `a` and `b` carry .minutiae and .mask (the image is not consulted here;
    the rotation-invariant minutia-context descriptors decide the initial
    matching). Funnel: greedy one-to-one top-N by local similarity, then
    drop pairs near either segmentation border, then a robust affine fit
    drops geometric outliers, then farthest-point sampling keeps at most
    fps_k well-spread survivors (seeded at the highest-scoring pair).

    Returns pairs in FPS selection order; empty when fewer than 3 pairs
    survive to the fitting stage or no geometric consensus exists.
    """
    if len(a.minutiae) < 3 or len(b.minutiae) < 3:
        raise ValueError("both sides need at least 3 minutiae")

    ca = build_all_cylinders(a.minutiae, cfg.mcc)
    cb = build_all_cylinders(b.minutiae, cfg.mcc)
    # invalid cylinders (too few neighbors or too little hull support) are
    # not correspondence candidates
    scores = np.array([[0.0 if x.invalid or y.invalid
                        else mcc_local_similarity(x, y, cfg.mcc)
                        for y in cb] for x in ca])
    candidates = _greedy_one_to_one(scores, cfg.top_n)

    ea = erode_mask(a.mask.pixels, cfg.erosion_radius)
    eb = erode_mask(b.mask.pixels, cfg.erosion_radius)
    candidates = [(i, j, s) for i, j, s in candidates
                  if _inside(ea, a.minutiae[i]) and _inside(eb, b.minutiae[j])]
    if len(candidates) < 3:
        return []

    pair_minutiae = [(a.minutiae[i], b.minutiae[j]) for i, j, _ in candidates]
    try:
        _, inlier = estimate_affine_ransac(pair_minutiae, cfg.ransac)
    except NoConsensusError:
        return []
    survivors = [c for c, keep in zip(candidates, inlier) if keep]
    if not survivors:
        return []

    points = np.array([[a.minutiae[i].x, a.minutiae[i].y] for i, _, _ in survivors])
    start = max(range(len(survivors)), key=lambda k: (survivors[k][2], -k))
    keep = farthest_point_sampling(points, min(cfg.fps_k, len(survivors)), start=start)
    return [MatedPair(*survivors[k]) for k in keep]


def generate_patch_pairs(a, b, pairs, cfg: TrainGenConfig = TrainGenConfig(),
                         start_class: int = 0) -> list[tuple[Patch, Patch, int]]:
    """Minutia-aligned patch pair per correspondence, one fresh class each.

    Classes enumerate mated minutia pairs: downstream metric learning treats
    every correspondence as its own identity, so ids are never reused across
    pairs (offset start_class when batching over many fingerprint pairs).
    """
    out = []
    for n, p in enumerate(pairs):
        pa = align_to_minutia(a.image, a.minutiae[p.index_a], cfg.patch_size)
        pb = align_to_minutia(b.image, b.minutiae[p.index_b], cfg.patch_size)
        out.append((pa, pb, start_class + n))
    return out
