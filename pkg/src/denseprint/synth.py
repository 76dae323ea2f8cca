"""Synthetic fingerprints with exact ground truth, plus an oracle extractor.

Fingerprints are rendered from an analytic ridge-phase model: a smooth ruling
(arch-like or whorl-like) carries the global ridge flow, and each minutia is
planted as a phase dislocation (a +-1 spiral term), which terminates exactly
one ridge at the planted point. Orientation and period fields come from the
analytic phase gradient, so the ground truth is exact rather than estimated.

The oracle extractor stands in for a learned network: it pools handcrafted
texture and minutia-context channels over 16x16 cells of an aligned patch,
producing descriptors with the same shape contract as the real model. It is
deliberately simple; its job is to make the matching stack testable
end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import RectBivariateSpline

from .core import (
    TWO_PI,
    Affine2D,
    GrayImage,
    Minutia,
    MinutiaSet,
    SegMask,
    normalize_angle,
    transform_minutia,
)
from .descriptor import DenseDescriptor, DescriptorConfig, Template, assemble_dmd, binarize
from .geometry import PATCH_SIZE, Patch, align_to_minutia, bilinear_sample, erode_mask

PERIOD_REF = 9.0  # nominal ridge period in px at 500 ppi
_MIN_PERIOD = 4.0
_MAX_PERIOD = 20.0
# mild profile shaping only: a near-sinusoidal profile keeps the bilinear
# resampling error of aligned patches well below the 0.02 agreement budget
_RIDGE_SHARPNESS = 1.2


# ---------------------------------------------------------------------------
# analytic model


class PhaseModel:
    """Analytic ridge phase: smooth ruling plus one spiral per minutia.

    All evaluators accept arrays of x and y and broadcast. The model can be
    evaluated anywhere in the plane, which lets a rigid copy re-render the
    same finger instead of resampling pixels.
    """

    def __init__(self, kind, q0, ruling_angle, bend_amp, bend_k, bend_phase,
                 whorl_center, noise_terms, spirals, phi0,
                 mask_center, mask_r0, mask_squash, mask_angle, mask_wobble):
        self.kind = kind  # "arch" or "whorl"
        self.q0 = q0  # 2*pi / base period
        self.ruling_angle = ruling_angle
        self.bend_amp = bend_amp
        self.bend_k = bend_k
        self.bend_phase = bend_phase
        self.whorl_center = whorl_center
        self.noise_terms = noise_terms  # rows (amp, kx, ky, phase)
        self.spirals = spirals  # rows (x, y, sign)
        self.phi0 = phi0
        self.mask_center = mask_center
        self.mask_r0 = mask_r0
        self.mask_squash = mask_squash
        self.mask_angle = mask_angle
        self.mask_wobble = mask_wobble  # rows (order, amp, phase)

    # -- ruling coordinate u and its gradient

    def _u(self, x, y):
        if self.kind == "whorl":
            cx, cy = self.whorl_center
            u = np.hypot(x - cx, y - cy)
        else:
            ca, sa = math.cos(self.ruling_angle), math.sin(self.ruling_angle)
            xp = ca * x + sa * y
            yp = -sa * x + ca * y
            u = xp + self.bend_amp * np.sin(self.bend_k * yp + self.bend_phase)
        for amp, kx, ky, ph in self.noise_terms:
            u = u + amp * np.sin(kx * x + ky * y + ph)
        return u

    def _grad_u(self, x, y):
        if self.kind == "whorl":
            cx, cy = self.whorl_center
            dx, dy = x - cx, y - cy
            r = np.maximum(np.hypot(dx, dy), 1e-6)
            gx, gy = dx / r, dy / r
        else:
            ca, sa = math.cos(self.ruling_angle), math.sin(self.ruling_angle)
            xp_x, xp_y = ca, sa
            yp = -sa * x + ca * y
            db = self.bend_amp * self.bend_k * np.cos(self.bend_k * yp + self.bend_phase)
            gx = xp_x + db * (-sa)
            gy = xp_y + db * ca
        for amp, kx, ky, ph in self.noise_terms:
            c = amp * np.cos(kx * x + ky * y + ph)
            gx = gx + c * kx
            gy = gy + c * ky
        return gx, gy

    # -- full phase

    def phase(self, x, y, exclude=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        psi = self.q0 * self._u(x, y) + self.phi0
        for idx, (sx, sy, sgn) in enumerate(self.spirals):
            if idx == exclude:
                continue
            psi = psi + sgn * np.arctan2(y - sy, x - sx)
        return psi

    def grad_phase(self, x, y, exclude=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gx, gy = self._grad_u(x, y)
        gx = self.q0 * gx
        gy = self.q0 * gy
        for idx, (sx, sy, sgn) in enumerate(self.spirals):
            if idx == exclude:
                continue
            dx, dy = x - sx, y - sy
            r2 = np.maximum(dx * dx + dy * dy, 0.25)
            gx = gx + sgn * (-dy) / r2
            gy = gy + sgn * dx / r2
        return gx, gy

    # -- derived fields

    def render(self, x, y):
        """Ridge pattern intensity in [0, 1]; dark at phase crests."""
        c = np.cos(self.phase(x, y))
        return 0.5 - 0.5 * np.tanh(_RIDGE_SHARPNESS * c) / math.tanh(_RIDGE_SHARPNESS)

    def orientation(self, x, y):
        """Ridge orientation in [0, pi): perpendicular to the phase gradient."""
        gx, gy = self.grad_phase(x, y)
        return np.mod(np.arctan2(gy, gx) + 0.5 * math.pi, math.pi)

    def period(self, x, y):
        gx, gy = self.grad_phase(x, y)
        mag = np.maximum(np.hypot(gx, gy), 1e-9)
        return np.clip(TWO_PI / mag, _MIN_PERIOD, _MAX_PERIOD)

    def inside(self, x, y):
        """Foreground test against the wobbly-ellipse mask boundary."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ca, sa = math.cos(self.mask_angle), math.sin(self.mask_angle)
        dx, dy = x - self.mask_center[0], y - self.mask_center[1]
        ex = ca * dx + sa * dy
        ey = (-sa * dx + ca * dy) / self.mask_squash
        r = np.hypot(ex, ey)
        phi = np.arctan2(ey, ex)
        bound = np.ones_like(r)
        for order, amp, ph in self.mask_wobble:
            bound = bound + amp * np.cos(order * phi + ph)
        return r <= self.mask_r0 * bound

    def transformed(self, t: Affine2D) -> "PhaseModel":
        """The same finger seen through a rigid-motion change of coordinates."""
        return _TransformedModel(self, t)


class _TransformedModel(PhaseModel):
    """PhaseModel wrapper evaluating a base model at t^-1 of the query."""

    def __init__(self, base: PhaseModel, t: Affine2D):
        self._base = base
        self._fwd = t
        self._inv = t.inverse()

    def _pull(self, x, y):
        pts = np.stack([np.asarray(x, dtype=float).ravel(),
                        np.asarray(y, dtype=float).ravel()], axis=1)
        src = self._inv.apply(pts)
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return src[:, 0].reshape(shape), src[:, 1].reshape(shape)

    def phase(self, x, y, exclude=None):
        sx, sy = self._pull(x, y)
        return self._base.phase(sx, sy, exclude=exclude)

    def grad_phase(self, x, y, exclude=None):
        sx, sy = self._pull(x, y)
        gx, gy = self._base.grad_phase(sx, sy, exclude=exclude)
        # gradient pulls back through the inverse linear map's transpose
        lin = self._inv.linear
        return lin[0, 0] * gx + lin[1, 0] * gy, lin[0, 1] * gx + lin[1, 1] * gy

    def render(self, x, y):
        sx, sy = self._pull(x, y)
        return self._base.render(sx, sy)

    def inside(self, x, y):
        sx, sy = self._pull(x, y)
        return self._base.inside(sx, sy)

    def transformed(self, t: Affine2D) -> "PhaseModel":
        return _TransformedModel(self._base, t.compose(self._fwd))


@dataclass(frozen=True)
class SynthFingerprint:
    """Rendered fingerprint with exact ground-truth fields.

    orientation is the per-pixel ridge orientation in [0, pi); period is the
    local ridge period in px. Both are defined everywhere on the canvas (the
    model is analytic), meaningful inside the mask. model is the analytic
    source when available; warped copies drop it.
    """

    image: GrayImage
    minutiae: MinutiaSet
    orientation: np.ndarray
    period: np.ndarray
    mask: SegMask
    model: PhaseModel | None = None

    def __post_init__(self):
        h, w = self.image.pixels.shape
        for name in ("orientation", "period"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (h, w):
                raise ValueError(f"{name} field must match the image shape")
            object.__setattr__(self, name, arr)
        if self.mask.pixels.shape != (h, w):
            raise ValueError("mask must match the image shape")

    @property
    def size(self) -> int:
        return self.image.pixels.shape[0]


def _render_from_model(model: PhaseModel, size: int, minutiae) -> SynthFingerprint:
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    inside = model.inside(xx, yy)
    image = np.where(inside, model.render(xx, yy), 1.0)
    orientation = model.orientation(xx, yy)
    period = model.period(xx, yy)
    mask = SegMask(inside.astype(float))
    kept = [m for m in minutiae
            if 0 <= m.x < size and 0 <= m.y < size
            and bool(model.inside(m.x, m.y))]
    return SynthFingerprint(GrayImage(np.clip(image, 0.0, 1.0)), MinutiaSet(kept),
                            orientation, period, mask, model)


def synth_fingerprint(seed: int, size: int = 512) -> SynthFingerprint:
    """Generate one synthetic fingerprint, deterministic per seed."""
    if size < 128:
        raise ValueError("canvas must be at least 128 px")
    rng = np.random.default_rng(seed)
    kind = "whorl" if rng.random() < 0.5 else "arch"
    period = float(rng.uniform(8.2, 9.8))
    q0 = TWO_PI / period

    ruling_angle = float(rng.uniform(0.0, math.pi))
    bend_wavelength = float(rng.uniform(1.2, 2.0)) * size
    bend_k = TWO_PI / bend_wavelength
    bend_slope = float(rng.uniform(0.15, 0.45))
    bend_amp = bend_slope / bend_k
    bend_phase = float(rng.uniform(0.0, TWO_PI))
    whorl_center = (size / 2 + float(rng.uniform(-0.08, 0.08)) * size,
                    size / 2 + float(rng.uniform(-0.08, 0.08)) * size)

    noise_terms = []
    for _ in range(3):
        wavelength = float(rng.uniform(0.25, 0.5)) * size
        k = TWO_PI / wavelength
        angle = float(rng.uniform(0.0, TWO_PI))
        slope = float(rng.uniform(0.01, 0.04))
        noise_terms.append((slope / k, k * math.cos(angle), k * math.sin(angle),
                            float(rng.uniform(0.0, TWO_PI))))

    mask_center = (size / 2 + float(rng.uniform(-0.03, 0.03)) * size,
                   size / 2 + float(rng.uniform(-0.03, 0.03)) * size)
    mask_r0 = float(rng.uniform(0.40, 0.46)) * size
    mask_squash = float(rng.uniform(0.85, 1.05))
    mask_angle = float(rng.uniform(0.0, math.pi))
    mask_wobble = tuple((order, float(rng.uniform(-0.05, 0.05)),
                         float(rng.uniform(0.0, TWO_PI)))
                        for order in (2, 3, 4))

    phi0 = float(rng.uniform(0.0, TWO_PI))
    model = PhaseModel(kind, q0, ruling_angle, bend_amp, bend_k, bend_phase,
                       whorl_center, tuple(noise_terms), (), phi0,
                       mask_center, mask_r0, mask_squash, mask_angle, mask_wobble)

    sites = _plant_sites(rng, model, size)
    spirals = tuple((float(x), float(y), int(rng.integers(0, 2)) * 2 - 1)
                    for x, y in sites)
    model.spirals = spirals

    minutiae = []
    probe_t = np.arange(3.0, 7.5)
    for idx, (sx, sy, sgn) in enumerate(spirals):
        gx, gy = model.grad_phase(sx, sy, exclude=idx)
        beta = math.atan2(float(gy), float(gx))
        theta = normalize_angle(beta + sgn * 0.5 * math.pi)
        # the terminating ridge continues along whichever sense is darker
        fwd = float(np.mean(model.render(sx + probe_t * math.cos(theta),
                                         sy + probe_t * math.sin(theta))))
        bwd = float(np.mean(model.render(sx - probe_t * math.cos(theta),
                                         sy - probe_t * math.sin(theta))))
        if bwd < fwd:
            theta = normalize_angle(theta + math.pi)
        minutiae.append(Minutia(sx, sy, theta))

    return _render_from_model(model, size, minutiae)


def _plant_sites(rng, model: PhaseModel, size: int):
    """Dart-throw minutia sites: inside the eroded mask, well separated."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    inside = model.inside(xx, yy).astype(float)
    allowed = erode_mask(inside, radius=12)
    if model.kind == "whorl":
        cx, cy = model.whorl_center
        allowed &= (xx - cx) ** 2 + (yy - cy) ** 2 > 30.0**2
    area_fraction = float(np.mean(inside))
    target = int(np.clip(round(area_fraction * 55) + int(rng.integers(-2, 3)), 18, 34))
    min_sep = 19.0
    ys, xs = np.nonzero(allowed)
    if len(ys) == 0:
        return []
    sites: list[tuple[float, float]] = []
    for _ in range(4000):
        if len(sites) >= target:
            break
        pick = int(rng.integers(0, len(ys)))
        x = float(xs[pick]) + float(rng.uniform(-0.5, 0.5))
        y = float(ys[pick]) + float(rng.uniform(-0.5, 0.5))
        if all((x - px) ** 2 + (y - py) ** 2 >= min_sep**2 for px, py in sites):
            sites.append((x, y))
    return sites


def rigid_copy(fp: SynthFingerprint, t: Affine2D, size: int | None = None) -> SynthFingerprint:
    """Re-render the same finger under a rigid motion of the scene.

    The analytic model is evaluated at transformed coordinates, so the copy
    carries no resampling error. Minutiae falling off the canvas are dropped.
    Requires the analytic model (warped fingerprints have lost it).
    """
    if fp.model is None:
        raise ValueError("fingerprint has no analytic model to re-render")
    size = fp.size if size is None else size
    moved = fp.model.transformed(t)
    minutiae = [transform_minutia(m, t) for m in fp.minutiae]
    return _render_from_model(moved, size, minutiae)


# ---------------------------------------------------------------------------
# distortion


@dataclass(frozen=True)
class DistortionConfig:
    magnitude: float = 8.0  # max control-point displacement, px
    grid: int = 4  # interior control points per axis
    seed: int = 0

    def __post_init__(self):
        if self.magnitude < 0 or not np.isfinite(self.magnitude):
            raise ValueError("magnitude must be finite and non-negative")
        if self.grid < 2:
            raise ValueError("need at least a 2x2 interior control grid")


def _displacement_splines(shape, cfg: DistortionConfig):
    """Bicubic spline pair (dx, dy) from random control offsets, zero border."""
    h, w = shape
    rng = np.random.default_rng(cfg.seed)
    n = cfg.grid + 2
    offsets = rng.uniform(-cfg.magnitude, cfg.magnitude, size=(n, n, 2))
    norms = np.linalg.norm(offsets, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(norms > cfg.magnitude, cfg.magnitude / np.maximum(norms, 1e-12), 1.0)
    offsets = offsets * scale
    offsets[0, :] = offsets[-1, :] = 0.0
    offsets[:, 0] = offsets[:, -1] = 0.0
    ys = np.linspace(0.0, h - 1.0, n)
    xs = np.linspace(0.0, w - 1.0, n)
    sp_dx = RectBivariateSpline(ys, xs, offsets[:, :, 0], kx=3, ky=3)
    sp_dy = RectBivariateSpline(ys, xs, offsets[:, :, 1], kx=3, ky=3)
    # cubic interpolation overshoots the control norms by up to ~25%; rescale
    # so the dense field stays within 1.2x the configured magnitude (the
    # spline is linear in the control data, so refitting scaled offsets
    # scales the whole field exactly)
    yd, xd = np.arange(h, dtype=float), np.arange(w, dtype=float)
    peak = float(np.hypot(sp_dx(yd, xd, grid=True), sp_dy(yd, xd, grid=True)).max())
    cap = 1.2 * cfg.magnitude
    if peak > cap:
        offsets *= cap / peak
        sp_dx = RectBivariateSpline(ys, xs, offsets[:, :, 0], kx=3, ky=3)
        sp_dy = RectBivariateSpline(ys, xs, offsets[:, :, 1], kx=3, ky=3)
    return sp_dx, sp_dy


def _jacobian_at(sp_dx, sp_dy, x: float, y: float) -> np.ndarray:
    j = np.eye(2)
    j[0, 0] += float(sp_dx.ev(y, x, dy=1))  # d dx / d x
    j[0, 1] += float(sp_dx.ev(y, x, dx=1))  # d dx / d y
    j[1, 0] += float(sp_dy.ev(y, x, dy=1))
    j[1, 1] += float(sp_dy.ev(y, x, dx=1))
    return j


def apply_distortion(fp: SynthFingerprint, cfg: DistortionConfig) -> SynthFingerprint:
    """Warp a fingerprint by a smooth random displacement field.

    Minutiae map forward (p -> p + D(p), directions pushed through the local
    Jacobian); pixels are pulled back through a fixed-point inversion of the
    same field, so image and minutiae stay consistent. The analytic model is
    dropped: a warped finger is no longer a closed-form phase pattern.
    """
    if cfg.magnitude == 0.0:
        return SynthFingerprint(fp.image, fp.minutiae, fp.orientation.copy(),
                                fp.period.copy(), fp.mask, None)
    h, w = fp.image.pixels.shape
    sp_dx, sp_dy = _displacement_splines((h, w), cfg)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    dense_dx = sp_dx(yy[:, 0], xx[0], grid=True)
    dense_dy = sp_dy(yy[:, 0], xx[0], grid=True)

    # invert p = q + D(q) for the pull-back sampling
    qx, qy = xx.copy(), yy.copy()
    for _ in range(8):
        ex = ndimage.map_coordinates(dense_dx, [qy, qx], order=1, mode="nearest")
        ey = ndimage.map_coordinates(dense_dy, [qy, qx], order=1, mode="nearest")
        qx = xx - ex
        qy = yy - ey

    image = bilinear_sample(fp.image.pixels, qx, qy, fill=1.0)
    mask = (bilinear_sample(fp.mask.pixels, qx, qy, fill=0.0) >= 0.5).astype(float)
    period = bilinear_sample(fp.period, qx, qy, fill=PERIOD_REF)

    # orientation: sample the doubled-angle field, then rotate by the local
    # forward Jacobian (evaluated at the source point)
    c2 = bilinear_sample(np.cos(2.0 * fp.orientation), qx, qy, fill=1.0)
    s2 = bilinear_sample(np.sin(2.0 * fp.orientation), qx, qy, fill=0.0)
    src_o = 0.5 * np.arctan2(s2, c2)
    jxx = 1.0 + ndimage.map_coordinates(
        np.gradient(dense_dx, axis=1), [qy, qx], order=1, mode="nearest")
    jxy = ndimage.map_coordinates(
        np.gradient(dense_dx, axis=0), [qy, qx], order=1, mode="nearest")
    jyx = ndimage.map_coordinates(
        np.gradient(dense_dy, axis=1), [qy, qx], order=1, mode="nearest")
    jyy = 1.0 + ndimage.map_coordinates(
        np.gradient(dense_dy, axis=0), [qy, qx], order=1, mode="nearest")
    vx, vy = np.cos(src_o), np.sin(src_o)
    orientation = np.mod(np.arctan2(jyx * vx + jyy * vy, jxx * vx + jxy * vy), math.pi)

    minutiae = []
    for m in fp.minutiae:
        nx = m.x + float(sp_dx.ev(m.y, m.x))
        ny = m.y + float(sp_dy.ev(m.y, m.x))
        if not (0 <= nx < w and 0 <= ny < h):
            continue
        if bilinear_sample(mask, nx, ny, fill=0.0) < 0.5:
            continue
        j = _jacobian_at(sp_dx, sp_dy, m.x, m.y)
        d = j @ np.array([math.cos(m.theta), math.sin(m.theta)])
        minutiae.append(Minutia(nx, ny, normalize_angle(math.atan2(d[1], d[0]))))

    return SynthFingerprint(GrayImage(np.clip(image, 0.0, 1.0)), MinutiaSet(minutiae),
                            orientation, period, SegMask(mask), None)


# ---------------------------------------------------------------------------
# plain-print simulation


def simulate_plain(fp: SynthFingerprint, crop_mask: SegMask) -> SynthFingerprint:
    """Restrict a fingerprint to the intersection with a capture region."""
    if crop_mask.pixels.shape != fp.mask.pixels.shape:
        raise ValueError("crop mask must match the fingerprint canvas")
    new_mask = np.minimum(fp.mask.pixels, (crop_mask.pixels >= 0.5).astype(float))
    hard = new_mask >= 0.5
    image = np.where(hard, fp.image.pixels, 1.0)
    kept = [m for m in fp.minutiae
            if hard[min(int(round(m.y)), hard.shape[0] - 1),
                    min(int(round(m.x)), hard.shape[1] - 1)]]
    return SynthFingerprint(GrayImage(image), MinutiaSet(kept),
                            fp.orientation.copy(), fp.period.copy(),
                            SegMask(new_mask), None)


def random_crop_mask(mask: SegMask, fraction: float, seed: int = 0) -> SegMask:
    """Elliptical capture region covering ~fraction of the given mask's area.

    The ellipse is centered near the mask centroid with random eccentricity
    and orientation; its scale is bisected until the covered fraction matches
    to about a percent.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    fg = mask.pixels >= 0.5
    total = int(fg.sum())
    if total == 0:
        raise ValueError("empty mask")
    h, w = fg.shape
    ys, xs = np.nonzero(fg)
    cy, cx = float(ys.mean()), float(xs.mean())
    cx += float(rng.uniform(-0.08, 0.08)) * w
    cy += float(rng.uniform(-0.08, 0.08)) * h
    ratio = float(rng.uniform(0.75, 1.3))
    ang = float(rng.uniform(0.0, math.pi))
    ca, sa = math.cos(ang), math.sin(ang)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    ex = ca * (xx - cx) + sa * (yy - cy)
    ey = (-sa * (xx - cx) + ca * (yy - cy)) / ratio
    rr = np.hypot(ex, ey)

    lo, hi = 1.0, float(max(h, w)) * 3.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        got = int(np.count_nonzero(fg & (rr <= mid)))
        if got < fraction * total:
            lo = mid
        else:
            hi = mid
    return SegMask((rr <= 0.5 * (lo + hi)).astype(float))


# ---------------------------------------------------------------------------
# patch augmentation


@dataclass(frozen=True)
class AugmentConfig:
    max_translation: float = 10.0  # px
    max_rotation_deg: float = 5.0
    noise_sigma: float = 0.05
    gamma_range: tuple = (0.7, 1.4)
    distortion_magnitude: float = 2.0  # small patch-level warp, px
    distortion_grid: int = 3

    def __post_init__(self):
        if self.max_translation < 0 or self.max_rotation_deg < 0:
            raise ValueError("ranges must be non-negative")
        if self.noise_sigma < 0 or self.distortion_magnitude < 0:
            raise ValueError("ranges must be non-negative")
        lo, hi = self.gamma_range
        if not (0 < lo <= hi):
            raise ValueError("bad gamma range")


def apply_augmentation(patch: Patch, translation=(0.0, 0.0), rotation: float = 0.0,
                       gamma: float = 1.0, noise_sigma: float = 0.0,
                       displacement=None, rng=None) -> Patch:
    """Deterministic augmentation core with explicit parameters.

    Geometry (translation + rotation about the patch center + optional dense
    displacement field) is applied in a single bilinear resample; identity
    parameters skip resampling entirely. rotation is in radians; displacement
    is a pair of (H, W) source-offset arrays.
    """
    img = patch.image.pixels
    n = img.shape[0]
    tx, ty = float(translation[0]), float(translation[1])
    out = img
    if tx != 0.0 or ty != 0.0 or rotation != 0.0 or displacement is not None:
        c = (n - 1) / 2.0
        yy, xx = np.mgrid[0:n, 0:n].astype(float)
        ca, sa = math.cos(rotation), math.sin(rotation)
        gx, gy = xx - c, yy - c
        sx = ca * gx + sa * gy + c - tx
        sy = -sa * gx + ca * gy + c - ty
        if displacement is not None:
            sx = sx + displacement[0]
            sy = sy + displacement[1]
        out = bilinear_sample(img, sx, sy, fill=1.0)
    if gamma != 1.0:
        out = np.power(np.clip(out, 0.0, 1.0), gamma)
    if noise_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        out = out + noise_sigma * rng.standard_normal(out.shape)
    return Patch(GrayImage(np.clip(out, 0.0, 1.0)), patch.anchor)


def augment(patch: Patch, cfg: AugmentConfig = AugmentConfig(), seed: int = 0) -> Patch:
    """Random capture-nuisance augmentation, deterministic per seed."""
    rng = np.random.default_rng(seed)
    tx = float(rng.uniform(-cfg.max_translation, cfg.max_translation))
    ty = float(rng.uniform(-cfg.max_translation, cfg.max_translation))
    rot = math.radians(float(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)))
    gamma = float(rng.uniform(*cfg.gamma_range))
    displacement = None
    if cfg.distortion_magnitude > 0.0:
        n = patch.image.pixels.shape[0]
        dcfg = DistortionConfig(cfg.distortion_magnitude, cfg.distortion_grid,
                                seed=int(rng.integers(0, 2**31)))
        sp_dx, sp_dy = _displacement_splines((n, n), dcfg)
        axis = np.arange(n, dtype=float)
        displacement = (sp_dx(axis, axis, grid=True), sp_dy(axis, axis, grid=True))
    return apply_augmentation(patch, (tx, ty), rot, gamma, cfg.noise_sigma,
                              displacement, rng)


# ---------------------------------------------------------------------------
# patch ground truth and the oracle extractor


@dataclass(frozen=True)
class PatchGroundTruth:
    """Ground-truth fields resampled into a minutia-aligned patch frame."""

    orientation: np.ndarray  # (P, P), ridge orientation in [0, pi)
    period: np.ndarray  # (P, P)
    mask: np.ndarray  # (P, P) in [0, 1]
    minutiae: tuple  # Minutia records in patch coordinates


def patch_ground_truth(fp: SynthFingerprint, m: Minutia,
                       patch_size: int = PATCH_SIZE) -> PatchGroundTruth:
    """Resample orientation/period/mask into the frame of align_to_minutia."""
    c = patch_size // 2
    yy, xx = np.mgrid[0:patch_size, 0:patch_size].astype(float)
    gx, gy = xx - c, yy - c
    ca, sa = math.cos(m.theta), math.sin(m.theta)
    sx = m.x + ca * gx - sa * gy
    sy = m.y + sa * gx + ca * gy

    mask = bilinear_sample(fp.mask.pixels, sx, sy, fill=0.0)
    period = bilinear_sample(fp.period, sx, sy, fill=PERIOD_REF)
    c2 = bilinear_sample(np.cos(2.0 * fp.orientation), sx, sy, fill=1.0)
    s2 = bilinear_sample(np.sin(2.0 * fp.orientation), sx, sy, fill=0.0)
    c2p = c2 * math.cos(2.0 * m.theta) + s2 * math.sin(2.0 * m.theta)
    s2p = s2 * math.cos(2.0 * m.theta) - c2 * math.sin(2.0 * m.theta)
    orientation = np.mod(0.5 * np.arctan2(s2p, c2p), math.pi)

    local = []
    for mm in fp.minutiae:
        dx, dy = mm.x - m.x, mm.y - m.y
        px = ca * dx + sa * dy + c
        py = -sa * dx + ca * dy + c
        if 0 <= px < patch_size and 0 <= py < patch_size:
            local.append(Minutia(float(px), float(py),
                                 normalize_angle(mm.theta - m.theta)))
    return PatchGroundTruth(orientation, period, np.clip(mask, 0.0, 1.0), tuple(local))


# fixed affine calibration of the oracle channels: raw cell statistics are
# shifted/scaled into a roughly unit range so float cosines are well
# conditioned; the constants are frozen from generator statistics and must
# not depend on the input patch. Channels whose corpus spread is tiny
# (contrast, coherence, gradient energy) are deliberately left uncentered:
# centering them would turn their sign bits into coin flips under capture
# nuisance, which costs far more binary margin than the lost bit balance.
# Their scales are kept large so the always-positive values contribute only
# weakly to float cosines; otherwise they act as a common-mode term that
# inflates impostor similarity.
_FT_CENTER = np.array([0.9723, -0.0013, 0.0263, 0.0, 0.0, 0.0])
_FT_SCALE = np.array([0.2444, 0.3535, 0.15, 0.60, 0.60, 0.60])
_FM_CENTER = np.array([0.0001, 0.0318, 0.0, 0.1152, 0.1421, 0.0001])
_FM_SCALE = np.array([0.1571, 0.2274, 0.15, 0.1717, 0.1151, 0.1668])


def oracle_extract(patch: Patch, gt: PatchGroundTruth,
                   cfg: DescriptorConfig = DescriptorConfig()):
    """Handcrafted texture and minutia-context channels, pooled to 8x8 cells.

    Returns (f_t, f_m, h): raw (unmasked) channel grids plus the pooled soft
    mask; assemble_dmd applies the mask. Cells with no foreground are zero.
    """
    grid = cfg.grid
    p = patch.image.pixels
    n = p.shape[0]
    if gt.orientation.shape != p.shape or gt.mask.shape != p.shape:
        raise ValueError("ground truth does not match the patch")
    cell = n // grid

    def blocks(a):
        return a.reshape(grid, cell, grid, cell).transpose(0, 2, 1, 3)

    mk = blocks(gt.mask)
    h = mk.mean(axis=(2, 3))
    wsum = mk.sum(axis=(2, 3))
    valid = wsum > 1e-9
    safe = np.where(valid, wsum, 1.0)

    def wmean(a):
        return np.where(valid, (blocks(a) * mk).sum(axis=(2, 3)) / safe, 0.0)

    c2 = wmean(np.cos(2.0 * gt.orientation))
    s2 = wmean(np.sin(2.0 * gt.orientation))
    freq = wmean(PERIOD_REF / np.maximum(gt.period, 1e-6) - 1.0)
    pm = wmean(p)
    contrast = np.sqrt(np.maximum(wmean(p * p) - pm * pm, 0.0))
    coherence = np.where(valid, np.hypot(c2, s2), 0.0)
    gyv, gxv = np.gradient(p)
    energy = wmean(np.hypot(gxv, gyv))
    f_t = np.stack([c2, s2, freq, contrast, coherence, energy])

    cy, cx = np.mgrid[0:grid, 0:grid].astype(float)
    centers_x = cx * cell + (cell - 1) / 2.0
    centers_y = cy * cell + (cell - 1) / 2.0
    mlist = gt.minutiae
    if mlist:
        mx = np.array([mm.x for mm in mlist])
        my = np.array([mm.y for mm in mlist])
        mt = np.array([mm.theta for mm in mlist])
        dx = mx[None, None, :] - centers_x[:, :, None]
        dy = my[None, None, :] - centers_y[:, :, None]
        dist = np.hypot(dx, dy)
        count = np.exp(-(dist**2) / (2.0 * 6.0**2)).sum(axis=2)
        order = np.argsort(dist, axis=2)
        i0 = order[:, :, 0]
        d1 = np.take_along_axis(dist, order, axis=2)[:, :, 0]
        if len(mlist) > 1:
            d2 = np.take_along_axis(dist, order, axis=2)[:, :, 1]
        else:
            d2 = np.full_like(d1, np.inf)
        th1 = mt[i0]
        w1 = np.exp(-d1 / 12.0)
        w2 = np.exp(-np.where(np.isfinite(d2), d2, 1e9) / 24.0)
        bearing = np.arctan2(np.take_along_axis(dy, order, axis=2)[:, :, 0],
                             np.take_along_axis(dx, order, axis=2)[:, :, 0])
        with np.errstate(invalid="ignore"):
            rel = np.where(d1 > 1e-9, np.cos(bearing - th1), 1.0)
        f_m = np.stack([count, w1 * np.cos(th1), w1 * np.sin(th1),
                        w1, w2, w1 * rel])
    else:
        f_m = np.zeros((6, grid, grid))

    f_t = (f_t - _FT_CENTER[:, None, None]) / _FT_SCALE[:, None, None]
    f_m = (f_m - _FM_CENTER[:, None, None]) / _FM_SCALE[:, None, None]
    f_t = np.where(valid[None], f_t, 0.0)
    f_m = np.where(valid[None], f_m, 0.0)
    return f_t, f_m, h


def extract_descriptor(fp: SynthFingerprint, m: Minutia,
                       cfg: DescriptorConfig = DescriptorConfig()) -> DenseDescriptor:
    """Aligned patch + ground truth -> oracle descriptor at one minutia."""
    patch = align_to_minutia(fp.image, m, cfg.patch_size)
    gt = patch_ground_truth(fp, m, cfg.patch_size)
    f_t, f_m, h = oracle_extract(patch, gt, cfg)
    return assemble_dmd(f_t, f_m, h, m, cfg)


def enroll_template(fp: SynthFingerprint, binary: bool = False,
                    cfg: DescriptorConfig = DescriptorConfig()) -> Template:
    """Extract descriptors at every ground-truth minutia."""
    recs = [extract_descriptor(fp, m, cfg) for m in fp.minutiae]
    if binary:
        recs = [binarize(r) for r in recs]
    return Template(tuple(recs), cfg.channels, binary)


# ---------------------------------------------------------------------------
# field estimation for externally supplied images


def estimate_fields(image: GrayImage, mask: SegMask):
    """Structure-tensor orientation and spectral period for a bare image.

    Fallback for enrolling fingerprints that arrive without ground truth:
    orientation from the smoothed gradient outer product, one global period
    from the radial power spectrum of the masked image.
    """
    p = image.pixels
    gy, gx = np.gradient(p)
    j11 = ndimage.gaussian_filter(gx * gx, 6.0)
    j22 = ndimage.gaussian_filter(gy * gy, 6.0)
    j12 = ndimage.gaussian_filter(gx * gy, 6.0)
    # dominant gradient direction, then +90 deg for the ridge orientation
    orientation = np.mod(0.5 * np.arctan2(2.0 * j12, j11 - j22) + 0.5 * math.pi,
                         math.pi)

    fg = mask.pixels >= 0.5
    window = p * fg - (p * fg).mean()
    spec = np.abs(np.fft.rfft2(window)) ** 2
    fy = np.fft.fftfreq(p.shape[0])[:, None]
    fx = np.fft.rfftfreq(p.shape[1])[None, :]
    rad = np.hypot(fy, fx)
    band = (rad > 1.0 / _MAX_PERIOD) & (rad < 1.0 / _MIN_PERIOD)
    if np.any(band):
        peak = rad[band][np.argmax(spec[band])]
        period = float(np.clip(1.0 / peak, _MIN_PERIOD, _MAX_PERIOD))
    else:
        period = PERIOD_REF
    return orientation, np.full_like(p, period)
