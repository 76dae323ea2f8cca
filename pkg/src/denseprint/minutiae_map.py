"""Multi-channel minutiae heatmaps.

A minutia set over a patch becomes a (channels, grid, grid) volume: each
minutia drops an unnormalized Gaussian at its position, on the channel
matching its direction. Channels split the circle evenly, and channel
distance is circular. Cells combine contributions by max, so values stay
in [0, 1]. Decoding finds local 3D maxima and refines them with a
log-quadratic fit per axis, which is exact for an isolated Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Minutia, MinutiaSet, normalize_angle

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MapConfig:
    channels: int = 6
    grid: int = 64
    scale: float = 2.0  # patch pixels per map cell
    sigma_pos: float = 1.0  # cells
    sigma_ang: float = 1.0  # channel units

    def __post_init__(self):
        if self.channels < 2 or self.grid < 4:
            raise ValueError("map too small")
        if self.scale <= 0 or self.sigma_pos <= 0 or self.sigma_ang <= 0:
            raise ValueError("scale and sigmas must be positive")


@dataclass(frozen=True, eq=False)
class MinutiaeMap:
    values: np.ndarray
    config: MapConfig

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        c = self.config
        if v.shape != (c.channels, c.grid, c.grid):
            raise ValueError(f"expected shape {(c.channels, c.grid, c.grid)}, got {v.shape}")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def _channel_distance(ch: np.ndarray, center: float, channels: int) -> np.ndarray:
    d = np.abs(np.mod(ch - center, channels))
    return np.minimum(d, channels - d)


def encode_map(minutiae: MinutiaSet, cfg: MapConfig = MapConfig()) -> MinutiaeMap:
    """Rasterize minutiae into the heatmap volume.

    Positions must lie inside [0, grid*scale) on both axes.
    """
    g, nc = cfg.grid, cfg.channels
    out = np.zeros((nc, g, g))
    cols = np.arange(g, dtype=float)
    chans = np.arange(nc, dtype=float)
    limit = g * cfg.scale
    for m in minutiae:
        if not (0.0 <= m.x < limit and 0.0 <= m.y < limit):
            raise ValueError(f"minutia ({m.x}, {m.y}) outside the map extent {limit}")
        cx = m.x / cfg.scale
        cy = m.y / cfg.scale
        ct = m.theta / TWO_PI * nc
        dx2 = (cols - cx) ** 2
        dy2 = (cols - cy) ** 2
        spatial = np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * cfg.sigma_pos**2))
        dch = _channel_distance(chans, ct, nc)
        angular = np.exp(-(dch**2) / (2.0 * cfg.sigma_ang**2))
        np.maximum(out, angular[:, None, None] * spatial[None, :, :], out=out)
    return MinutiaeMap(out, cfg)


def _axis_offset(vm: float, v0: float, vp: float) -> float:
    """Sub-cell peak offset from a log-quadratic fit through three samples."""
    if vm <= 0.0 or v0 <= 0.0 or vp <= 0.0:
        return 0.0
    lm, l0, lp = math.log(vm), math.log(v0), math.log(vp)
    denom = lm - 2.0 * l0 + lp
    if denom >= -1e-12:  # not a proper peak
        return 0.0
    off = 0.5 * (lm - lp) / denom
    return float(np.clip(off, -1.0, 1.0))


def decode_map(mp: MinutiaeMap, threshold: float = 0.5) -> MinutiaSet:
    """Recover minutiae from a heatmap: local 3D maxima + sub-cell refinement.

    A cell is a peak when it meets the threshold and no 3x3x3 neighbor
    (channel axis wraps, spatial edges clamp) exceeds it. Nearby peaks are
    merged, strongest first.
    """
    v = mp.values
    cfg = mp.config
    nc, g = cfg.channels, cfg.grid

    # neighborhood max via shifted views; channel axis wraps around
    neigh = np.full_like(v, -np.inf)
    for dc in (-1, 0, 1):
        rolled = np.roll(v, dc, axis=0) if dc else v
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dc == 0 and dy == 0 and dx == 0:
                    continue
                shifted = np.full_like(v, -np.inf)
                ys = slice(max(0, dy), g + min(0, dy))
                yd = slice(max(0, -dy), g + min(0, -dy))
                xs = slice(max(0, dx), g + min(0, dx))
                xd = slice(max(0, -dx), g + min(0, -dx))
                shifted[:, yd, xd] = rolled[:, ys, xs]
                np.maximum(neigh, shifted, out=neigh)
    peaks = np.argwhere((v >= threshold) & (v >= neigh))
    if peaks.size == 0:
        return MinutiaSet([])

    candidates = []
    for ch, row, col in peaks:
        val = v[ch, row, col]
        dx = _axis_offset(v[ch, row, col - 1], val, v[ch, row, col + 1]) if 0 < col < g - 1 else 0.0
        dy = _axis_offset(v[ch, row - 1, col], val, v[ch, row + 1, col]) if 0 < row < g - 1 else 0.0
        dc = _axis_offset(v[(ch - 1) % nc, row, col], val, v[(ch + 1) % nc, row, col])
        x = (col + dx) * cfg.scale
        y = (row + dy) * cfg.scale
        theta = normalize_angle((ch + dc) / nc * TWO_PI)
        candidates.append((float(val), float(x), float(y), float(theta)))

    # strongest first; suppress candidates too close to an accepted one
    candidates.sort(key=lambda t: (-t[0], t[2], t[1]))
    accepted = []
    for val, x, y, theta in candidates:
        close = False
        for _, ax, ay, atheta in accepted:
            dpos = math.hypot(x - ax, y - ay)
            dth = abs(math.remainder(theta - atheta, TWO_PI))
            if dpos < 1.5 * cfg.scale and dth < 0.75 * TWO_PI / nc:
                close = True
                break
        if not close:
            accepted.append((val, x, y, theta))
    return MinutiaSet([Minutia(x, y, th) for _, x, y, th in accepted])
