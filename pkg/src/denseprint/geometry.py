"""Geometric operations: patch alignment, robust affine fitting, sampling.

Patch alignment puts a minutia at the patch center with its direction along
+x, which is what makes per-minutia descriptors rotation covariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Affine2D, GrayImage, Minutia, angle_diff

PATCH_SIZE = 128
BACKGROUND = 1.0  # white


class NoConsensusError(RuntimeError):
    """RANSAC failed to find a model with enough inliers."""


@dataclass(frozen=True, eq=False)
class Patch:
    """A square image patch cut around (and aligned to) an anchor minutia."""

    image: GrayImage
    anchor: Minutia

    def __post_init__(self):
        if self.image.height != self.image.width:
            raise ValueError("patch must be square")

    @property
    def size(self) -> int:
        return self.image.height


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_residual_px: float = 8.0
    inlier_angle_rad: float = 0.35
    min_inliers: int = 4
    seed: int = 0


def bilinear_sample(pixels: np.ndarray, x, y, fill: float = BACKGROUND):
    """Bilinear lookup at float coords; out of bounds reads the fill value."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    scalar = xa.ndim == 0 and ya.ndim == 0
    coords = np.stack(np.broadcast_arrays(np.atleast_1d(ya), np.atleast_1d(xa)))
    out = ndimage.map_coordinates(pixels, coords, order=1, mode="constant", cval=fill)
    return float(out[0]) if scalar else out


def align_to_minutia(image: GrayImage, m: Minutia, patch_size: int = PATCH_SIZE) -> Patch:
    """Resample a patch so the minutia sits at the patch center pointing +x.

    Equivalent to translating the image so m is at the center pixel
    (patch_size // 2 in both axes) and rotating by -m.theta about it.
    Out-of-image samples read as white background.
    """
    if patch_size < 2:
        raise ValueError("patch size too small")
    c = patch_size // 2
    u = np.arange(patch_size, dtype=float) - c
    gx, gy = np.meshgrid(u, u, indexing="xy")
    cos_t, sin_t = math.cos(m.theta), math.sin(m.theta)
    # patch direction (1, 0) maps to the minutia direction in the source
    sx = m.x + cos_t * gx - sin_t * gy
    sy = m.y + sin_t * gx + cos_t * gy
    vals = bilinear_sample(image.pixels, sx, sy)
    vals = np.clip(vals, 0.0, 1.0)
    return Patch(GrayImage(vals, ppi=image.ppi), m)


def _fit_affine(src: np.ndarray, dst: np.ndarray) -> Affine2D | None:
    """Least-squares affine src -> dst; None if the system is degenerate."""
    n = src.shape[0]
    A = np.zeros((2 * n, 6))
    A[0::2, 0:2] = src
    A[0::2, 4] = 1.0
    A[1::2, 2:4] = src
    A[1::2, 5] = 1.0
    b = dst.reshape(-1)
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < 6:
        return None
    lin = np.array([[sol[0], sol[1]], [sol[2], sol[3]]])
    if abs(float(np.linalg.det(lin))) <= 1e-9:
        return None
    return Affine2D(lin, np.array([sol[4], sol[5]]))


def _residuals(t: Affine2D, pa: np.ndarray, pb: np.ndarray,
               ta: np.ndarray, tb: np.ndarray):
    """Position residuals and direction residuals of pairs under t."""
    mapped = pa @ t.linear.T + t.translation
    pos = np.hypot(*(mapped - pb).T)
    va = np.stack([np.cos(ta), np.sin(ta)], axis=1) @ t.linear.T
    mapped_theta = np.arctan2(va[:, 1], va[:, 0])
    ang = np.abs(np.mod(mapped_theta - tb + math.pi, 2 * math.pi) - math.pi)
    return pos, ang


def estimate_affine_ransac(pairs, cfg: RansacConfig = RansacConfig()):
    """Robust affine fit from (Minutia, Minutia) correspondences.

    Returns (transform, inlier_flags). The best minimal-sample model by
    inlier count (first found wins ties, so the result is deterministic for
    a fixed seed) is refit by least squares on its consensus set, and the
    flags are recomputed from the refit model.

    Raises ValueError for fewer than 3 pairs and NoConsensusError when no
    sample reaches cfg.min_inliers.
    """
    pairs = list(pairs)
    n = len(pairs)
    if n < 3:
        raise ValueError("need at least 3 correspondences for an affine fit")
    pa = np.array([[a.x, a.y] for a, _ in pairs])
    pb = np.array([[b.x, b.y] for _, b in pairs])
    ta = np.array([a.theta for a, _ in pairs])
    tb = np.array([b.theta for _, b in pairs])

    rng = np.random.default_rng(cfg.seed)
    best_count = 0
    best_flags = None
    for _ in range(cfg.iterations):
        idx = rng.choice(n, size=3, replace=False)
        t = _fit_affine(pa[idx], pb[idx])
        if t is None:
            continue
        pos, ang = _residuals(t, pa, pb, ta, tb)
        flags = (pos < cfg.inlier_residual_px) & (ang < cfg.inlier_angle_rad)
        count = int(flags.sum())
        if count > best_count:
            best_count = count
            best_flags = flags
    if best_count < max(cfg.min_inliers, 3) or best_flags is None:
        raise NoConsensusError(f"no consensus: best sample had {best_count} inliers")

    refit = _fit_affine(pa[best_flags], pb[best_flags])
    if refit is None:
        raise NoConsensusError("consensus set is degenerate")
    pos, ang = _residuals(refit, pa, pb, ta, tb)
    flags = (pos < cfg.inlier_residual_px) & (ang < cfg.inlier_angle_rad)
    return refit, flags


def farthest_point_sampling(points, k: int, start: int = 0) -> list[int]:
    """Greedy max-min subset of k point indices, starting from `start`.

    Each step picks the point with the largest distance to the chosen set;
    exact ties resolve to the lowest index. If k >= len(points) every index
    is returned in pick order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        return []
    if not (0 <= start < n):
        raise ValueError("start index out of range")
    if k <= 0:
        return []
    chosen = [start]
    dmin = np.hypot(*(pts - pts[start]).T)
    while len(chosen) < min(k, n):
        nxt = int(np.argmax(dmin))  # argmax returns the lowest tied index
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.hypot(*(pts - pts[nxt]).T))
    return chosen


def disc_offsets(radius: float) -> np.ndarray:
    """Integer offsets (dy, dx) with dy^2 + dx^2 <= radius^2."""
    r = int(math.floor(radius))
    span = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    keep = dy**2 + dx**2 <= radius**2
    return np.stack([dy[keep], dx[keep]], axis=1)


def erode_mask(mask: np.ndarray, radius: float) -> np.ndarray:
    """Binary erosion with a Euclidean disc structuring element.

    A cell survives iff every cell within distance <= radius is 1; positions
    outside the grid count as 0, so the border always erodes.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("mask must be 2D")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    binary = m >= 0.5
    if radius < 1.0:
        return binary.copy()
    r = int(math.floor(radius))
    # a disc wider than the grid reaches outside it from every cell, and
    # outside counts as 0: nothing survives
    if 2 * r + 1 > min(binary.shape):
        return np.zeros_like(binary)
    span = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    structure = dy**2 + dx**2 <= radius**2
    return ndimage.binary_erosion(binary, structure=structure, border_value=0)
