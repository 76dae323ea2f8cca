"""Cylinder-code local descriptors around minutiae (baseline matcher).

Each minutia gets a (ns, ns, nd) cylinder in its own rotated frame: spatial
cells cover a disc of the given radius, angular sections cover relative
direction. A cell accumulates, over neighboring minutiae, the product of a
spatial Gaussian (distance from the cell center, cut off at 3 sigma) and an
angular Gaussian (circular difference between the section angle and the
neighbor's direction relative to the anchor).

Cells are valid when they fall inside the disc and within the convex hull
of the minutiae, expanded by a margin. Similarity compares jointly valid
cells only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Minutia, MinutiaSet, angle_diff_vec

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MccParams:
    ns: int = 16
    nd: int = 6
    radius: float = 70.0
    sigma_s: float = 7.0
    sigma_d: float = 0.436
    min_valid_fraction: float = 0.2
    hull_margin: float = 20.0
    bit_mode: bool = True

    def __post_init__(self):
        if self.ns < 2 or self.nd < 2:
            raise ValueError("cylinder resolution too small")
        if self.radius <= 0 or self.sigma_s <= 0 or self.sigma_d <= 0:
            raise ValueError("radius and sigmas must be positive")
        if not (0.0 < self.min_valid_fraction <= 1.0):
            raise ValueError("min_valid_fraction must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class MccCylinder:
    anchor: Minutia
    values: np.ndarray  # (ns, ns, nd) float
    valid: np.ndarray  # (ns, ns) bool, broadcast over sections
    invalid: bool  # whole-cylinder flag

    def bits(self) -> np.ndarray:
        """Binarized cells: 1 iff value >= 0.5 * max value."""
        peak = self.values.max()
        if peak <= 0.0:
            return np.zeros_like(self.values, dtype=bool)
        return self.values >= 0.5 * peak


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices in CCW order.

    Degenerate inputs (fewer than 3 distinct or collinear points) return
    the distinct points they contain.
    """
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    n = len(pts)
    if n <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:  # all collinear
        return np.array([pts[0], pts[-1]])
    return hull


def _dist_to_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(p - a).T)
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(p - proj).T)


def points_within_hull(points: np.ndarray, hull: np.ndarray, margin: float) -> np.ndarray:
    """True where a point is inside the hull or within margin of it."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if len(hull) == 0:
        return np.zeros(len(p), dtype=bool)
    if len(hull) == 1:
        return np.hypot(*(p - hull[0]).T) <= margin
    if len(hull) == 2:
        return _dist_to_segment(p, hull[0], hull[1]) <= margin
    n = len(hull)
    inside = np.ones(len(p), dtype=bool)
    dmin = np.full(len(p), np.inf)
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        e = b - a
        # CCW hull: inside points have positive cross products on every edge
        cr = e[0] * (p[:, 1] - a[1]) - e[1] * (p[:, 0] - a[0])
        inside &= cr >= 0
        dmin = np.minimum(dmin, _dist_to_segment(p, a, b))
    return inside | (dmin <= margin)


def cell_offsets(params: MccParams) -> np.ndarray:
    """(ns, ns, 2) cell-center offsets (x, y) in the anchor frame."""
    step = 2.0 * params.radius / params.ns
    centers = (np.arange(params.ns) + 0.5 - params.ns / 2.0) * step
    oy, ox = np.meshgrid(centers, centers, indexing="ij")
    return np.stack([ox, oy], axis=-1)


def section_angles(params: MccParams) -> np.ndarray:
    return -math.pi + (np.arange(params.nd) + 0.5) * (TWO_PI / params.nd)


def build_cylinder(minutiae: MinutiaSet, index: int,
                   params: MccParams = MccParams()) -> MccCylinder:
    """Build the cylinder for minutiae[index] against the rest of the set."""
    if not (0 <= index < len(minutiae)):
        raise IndexError("minutia index out of range")
    anchor = minutiae[index]
    others = [m for i, m in enumerate(minutiae) if i != index]

    offs = cell_offsets(params)  # (ns, ns, 2)
    disc = np.hypot(offs[..., 0], offs[..., 1]) <= params.radius

    c, s = math.cos(anchor.theta), math.sin(anchor.theta)
    rot = np.array([[c, -s], [s, c]])
    cell_pos = offs @ rot.T + np.array([anchor.x, anchor.y])

    hull = convex_hull(minutiae.positions)
    in_hull = points_within_hull(cell_pos.reshape(-1, 2), hull, params.hull_margin)
    valid = disc & in_hull.reshape(params.ns, params.ns)

    values = np.zeros((params.ns, params.ns, params.nd))
    cutoff = params.radius + 3.0 * params.sigma_s
    near = [m for m in others
            if math.hypot(m.x - anchor.x, m.y - anchor.y) <= cutoff]
    if near:
        npos = np.array([[m.x, m.y] for m in near])
        nth = np.array([m.theta for m in near])
        d = np.sqrt(((cell_pos.reshape(-1, 2)[:, None, :] - npos[None, :, :]) ** 2).sum(-1))
        g_s = np.exp(-(d**2) / (2.0 * params.sigma_s**2))
        g_s[d > 3.0 * params.sigma_s] = 0.0  # hard spatial cutoff
        rel = angle_diff_vec(nth, anchor.theta)  # (n,)
        dphi = section_angles(params)
        ad = np.abs(angle_diff_vec(dphi[None, :], rel[:, None]))
        g_d = np.exp(-(ad**2) / (2.0 * params.sigma_d**2))
        values = (g_s @ g_d).reshape(params.ns, params.ns, params.nd)

    values[~valid] = 0.0
    frac = float(valid.mean())
    invalid = (not near) or frac < params.min_valid_fraction
    return MccCylinder(anchor, values, valid, invalid)


def build_all_cylinders(minutiae: MinutiaSet, params: MccParams = MccParams()):
    return [build_cylinder(minutiae, i, params) for i in range(len(minutiae))]


def mcc_local_similarity(c1: MccCylinder, c2: MccCylinder,
                         params: MccParams = MccParams()) -> float:
    """Similarity of two cylinders over their jointly valid cells, in [0, 1].

    Bit mode: 1 - (differing bits / jointly valid bits). Float mode:
    1 - ||v1 - v2|| / (||v1|| + ||v2||). Returns 0.0 when the joint valid
    fraction falls below params.min_valid_fraction.
    """
    if c1.invalid or c2.invalid:
        raise ValueError("cannot compare invalid cylinders")
    joint = c1.valid & c2.valid
    if float(joint.mean()) < params.min_valid_fraction:
        return 0.0
    sel = joint[..., None] & np.ones(params.nd, dtype=bool)
    if params.bit_mode:
        b1 = c1.bits()[sel]
        b2 = c2.bits()[sel]
        total = b1.size
        if total == 0:
            return 0.0
        return 1.0 - float(np.count_nonzero(b1 != b2)) / total
    v1 = c1.values[sel]
    v2 = c2.values[sel]
    n1 = float(np.linalg.norm(v1))
    n2 = float(np.linalg.norm(v2))
    if n1 + n2 <= 0.0:
        return 0.0
    return 1.0 - float(np.linalg.norm(v1 - v2)) / (n1 + n2)
