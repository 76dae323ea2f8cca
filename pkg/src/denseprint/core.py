"""Core data model: minutiae, images, masks, affine transforms, angles.

Conventions used across the whole package:

* Pixel coordinates are (x, y) with x = column, y = row, so y grows downward.
* All angles are radians in [0, 2pi). theta = 0 points along +x and the
  direction vector of an angle is (cos theta, sin theta) in (x, y) coords.
* Images hold float values in [0, 1]; 0 is ink (ridge), 1 is background.
* Degrees appear only at I/O boundaries (minutiae text files).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# two minutiae closer than this in both position and direction are duplicates
DUPLICATE_POS_TOL = 1.0
DUPLICATE_ANG_TOL = 0.05


def normalize_angle(theta: float) -> float:
    """Wrap an angle to [0, 2pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod of values just below 2pi can round back up to 2pi
    if t >= TWO_PI:
        t = 0.0
    return t


def angle_diff(a: float, b: float) -> float:
    """Signed minimal circular difference a - b, in (-pi, pi]."""
    d = math.fmod(a - b, TWO_PI)
    if d <= -math.pi:
        d += TWO_PI
    elif d > math.pi:
        d -= TWO_PI
    return d


def angle_diff_vec(a, b):
    """Vectorized angle_diff for ndarray inputs."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), TWO_PI)
    return np.where(d > math.pi, d - TWO_PI, d)


@dataclass(frozen=True)
class Minutia:
    """A minutia: position in pixels at the image ppi, direction in radians.

    theta is normalized to [0, 2pi) at construction and points in the
    direction the ridge ending (or bifurcation) points.
    """

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError("minutia coordinates and angle must be finite")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])


class MinutiaSet:
    """An ordered collection of minutiae with stable iteration order.

    Duplicates (closer than 1 px in position and 0.05 rad in direction)
    are rejected at construction.
    """

    def __init__(self, minutiae):
        items = tuple(minutiae)
        for m in items:
            if not isinstance(m, Minutia):
                raise TypeError("MinutiaSet holds Minutia instances")
        n = len(items)
        if n > 1:
            xy = np.array([[m.x, m.y] for m in items])
            th = np.array([m.theta for m in items])
            d2 = np.sum((xy[:, None, :] - xy[None, :, :]) ** 2, axis=-1)
            ad = np.abs(angle_diff_vec(th[:, None], th[None, :]))
            dup = (d2 < DUPLICATE_POS_TOL**2) & (ad < DUPLICATE_ANG_TOL)
            dup[np.arange(n), np.arange(n)] = False
            if dup.any():
                i, j = np.argwhere(dup)[0]
                raise ValueError(f"duplicate minutiae at indices {i} and {j}")
        self._items = items

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, idx):
        return self._items[idx]

    @property
    def positions(self) -> np.ndarray:
        """(n, 2) array of (x, y) positions."""
        if not self._items:
            return np.zeros((0, 2))
        return np.array([[m.x, m.y] for m in self._items])

    @property
    def thetas(self) -> np.ndarray:
        if not self._items:
            return np.zeros((0,))
        return np.array([m.theta for m in self._items])

    def __repr__(self):
        return f"MinutiaSet({len(self._items)} minutiae)"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Affine2D:
    """2D affine transform p -> linear @ p + translation.

    The linear part must be non-singular (|det| > 1e-9).
    """

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float)
        tr = np.asarray(self.translation, dtype=float).reshape(2)
        if lin.shape != (2, 2):
            raise ValueError("linear part must be 2x2")
        if not np.all(np.isfinite(lin)) or not np.all(np.isfinite(tr)):
            raise ValueError("affine entries must be finite")
        if abs(float(np.linalg.det(lin))) <= 1e-9:
            raise ValueError("affine transform is singular")
        object.__setattr__(self, "linear", _readonly(lin))
        object.__setattr__(self, "translation", _readonly(tr))

    @classmethod
    def identity(cls) -> "Affine2D":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def rotation(cls, theta: float, center=(0.0, 0.0)) -> "Affine2D":
        """Rotation by theta about center (positive theta rotates +x toward +y)."""
        c, s = math.cos(theta), math.sin(theta)
        lin = np.array([[c, -s], [s, c]])
        ctr = np.asarray(center, dtype=float)
        return cls(lin, ctr - lin @ ctr)

    @classmethod
    def translate(cls, tx: float, ty: float) -> "Affine2D":
        return cls(np.eye(2), np.array([tx, ty]))

    def apply(self, points) -> np.ndarray:
        """Apply to one (2,) point or an (n, 2) array of points."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        out = np.atleast_2d(p) @ self.linear.T + self.translation
        return out[0] if single else out

    def compose(self, other: "Affine2D") -> "Affine2D":
        """self o other: applies other first, then self."""
        return Affine2D(self.linear @ other.linear,
                        self.linear @ other.translation + self.translation)

    def inverse(self) -> "Affine2D":
        inv = np.linalg.inv(self.linear)
        return Affine2D(inv, -inv @ self.translation)

    def rotation_angle(self) -> float:
        """Angle that the +x direction vector maps to under the linear part."""
        v = self.linear @ np.array([1.0, 0.0])
        return normalize_angle(math.atan2(v[1], v[0]))

    def __repr__(self):
        return f"Affine2D(linear={self.linear.tolist()}, translation={self.translation.tolist()})"


def transform_minutia(m: Minutia, t: Affine2D) -> Minutia:
    """Map a minutia through an affine transform.

    The position maps as a point; the direction vector is pushed through the
    linear part, which makes composition exact for every affine (for rigid
    and similarity transforms this equals rotating theta by the rotation
    angle).
    """
    p = t.apply(m.xy)
    v = t.linear @ m.direction()
    return Minutia(float(p[0]), float(p[1]), math.atan2(v[1], v[0]))


def transform_minutiae(ms: MinutiaSet, t: Affine2D) -> MinutiaSet:
    return MinutiaSet([transform_minutia(m, t) for m in ms])


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale image, float pixels in [0, 1], row-major (H, W)."""

    pixels: np.ndarray
    ppi: float = 500.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ValueError("image must be a non-empty 2D array")
        if not np.all(np.isfinite(px)):
            raise ValueError("image has non-finite pixels")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.ppi <= 0:
            raise ValueError("ppi must be positive")
        object.__setattr__(self, "pixels", _readonly(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class SegMask:
    """Segmentation mask, float in [0, 1]; 1 = foreground."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ValueError("mask must be a non-empty 2D array")
        if not np.all(np.isfinite(px)):
            raise ValueError("mask has non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _readonly(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def is_hard(self) -> bool:
        return bool(np.all((self.pixels == 0.0) | (self.pixels == 1.0)))

    def coverage(self) -> float:
        return float(np.mean(self.pixels >= 0.5))


# ---------------------------------------------------------------------------
# minutiae text format: one "x y theta_degrees" triple per line, '#' comments


def parse_minutiae_text(text: str) -> MinutiaSet:
    minutiae = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'x y theta_degrees', got {raw!r}")
        try:
            x, y, deg = (float(p) for p in parts)
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
        minutiae.append(Minutia(x, y, math.radians(deg)))
    return MinutiaSet(minutiae)


def format_minutiae_text(ms: MinutiaSet) -> str:
    lines = [f"{m.x:.3f} {m.y:.3f} {math.degrees(m.theta):.4f}" for m in ms]
    return "\n".join(lines) + ("\n" if lines else "")


def load_minutiae_text(path) -> MinutiaSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_minutiae_text(fh.read())


def save_minutiae_text(path, ms: MinutiaSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_minutiae_text(ms))
