"""Template matching: local descriptor similarity, relaxation, assignment.

The local score between two descriptors is an overlap-normalized cosine:

    S = <f_a, f_b> / (||f_a * h_b|| * ||f_b * h_a||) * sqrt(h_o / H_o)

where features are stored pre-masked, the denominators cross-mask each side
with the other's soft mask, and h_o counts cells of the 64x64 upsampled
masks where both sides reach 0.5. H_o is a fixed reference area, so a
self-match with full masks scores sqrt(4096 / 1326) ~ 1.7576.

Whole-template matching relaxes the local similarity matrix with pairwise
geometric compatibility, solves the assignment problem, and averages the
top n_m assigned pairs, with n_m chosen from the template sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import angle_diff_vec
from .descriptor import BinaryDescriptor, DenseDescriptor, Template, mask_board


@dataclass(frozen=True)
class MatchConfig:
    min_nm: int = 4
    max_nm: int = 12
    tau: float = 0.4
    mu: float = 20.0
    relax_iterations: int = 5
    relax_weight: float = 0.6
    relax_sigma_dist: float = 10.0  # px
    relax_sigma_dir: float = 0.26  # rad
    relax_sigma_radial: float = 0.26  # rad
    h_o_reference: float = 1326.0
    denom_epsilon: float = 1e-9
    overlap_normalization: bool = True

    def __post_init__(self):
        if not (1 <= self.min_nm <= self.max_nm):
            raise ValueError("need 1 <= min_nm <= max_nm")
        if not (0.0 <= self.relax_weight <= 1.0):
            raise ValueError("relax_weight must be in [0, 1]")
        if self.relax_iterations < 0:
            raise ValueError("relax_iterations must be >= 0")


@dataclass(frozen=True)
class MatchResult:
    score: float
    pairs: tuple  # (i, j, relaxed_score), sorted by descending score
    n_m: int


# ---------------------------------------------------------------------------
# local similarity


def local_similarity(a: DenseDescriptor, b: DenseDescriptor,
                     cfg: MatchConfig = MatchConfig()) -> float:
    """Overlap-normalized local similarity of two float descriptors."""
    if a.features.shape != b.features.shape:
        raise ValueError("descriptor shapes differ")
    num = float(np.sum(a.features * b.features))
    if not cfg.overlap_normalization:
        den = float(np.linalg.norm(a.features)) * float(np.linalg.norm(b.features))
        return num / den if den >= cfg.denom_epsilon else 0.0
    den = float(np.linalg.norm(a.features * b.mask[None])) * float(
        np.linalg.norm(b.features * a.mask[None])
    )
    if den < cfg.denom_epsilon:
        return 0.0
    h_o = int(np.count_nonzero(mask_board(a.mask) & mask_board(b.mask)))
    if h_o == 0:
        return 0.0
    return num / den * math.sqrt(h_o / cfg.h_o_reference)


def binary_local_similarity(a: BinaryDescriptor, b: BinaryDescriptor,
                            cfg: MatchConfig = MatchConfig()) -> float:
    """Local similarity of binarized descriptors.

    Bits map to -1/+1 and the comparison is restricted to cells where both
    mask bits are set; the overlap factor uses the same upsampled-board
    count as the float path, so descriptors that binarize losslessly score
    identically in both forms.
    """
    if a.channels != b.channels:
        raise ValueError("descriptor channel counts differ")
    ja = a.mask_grid()
    jb = b.mask_grid()
    joint = ja & jb
    slots = 2 * a.channels * int(np.count_nonzero(joint))
    if slots == 0:
        return 0.0
    sa = a.feature_signs()[:, joint]
    sb = b.feature_signs()[:, joint]
    ratio = float(np.sum(sa * sb)) / slots
    if not cfg.overlap_normalization:
        return ratio
    h_o = int(np.count_nonzero(mask_board(ja.astype(float)) & mask_board(jb.astype(float))))
    if h_o == 0:
        return 0.0
    return ratio * math.sqrt(h_o / cfg.h_o_reference)


# ---------------------------------------------------------------------------
# batched template preparation

class _Prepared:
    """Flattened per-template arrays for batched similarity."""

    __slots__ = ("n", "binary", "feats", "cellq", "masks", "boards",
                 "norms", "positions", "thetas", "channels")

    def __init__(self, t: Template):
        self.n = len(t)
        self.binary = t.binary
        self.channels = t.channels
        self.positions = np.array([[r.anchor.x, r.anchor.y] for r in t]).reshape(-1, 2)
        self.thetas = np.array([r.anchor.theta for r in t])
        feats, cellq, masks, boards, norms = [], [], [], [], []
        for r in t:
            if t.binary:
                signs = r.feature_signs()  # (2C, 8, 8)
                cells = r.mask_grid().astype(float)
                f = (signs * cells[None]).reshape(-1)
                feats.append(f)
                cellq.append(cells.reshape(-1))
                masks.append(cells.reshape(-1))
                boards.append(mask_board(cells).reshape(-1))
                norms.append(0.0)
            else:
                f = r.features.reshape(-1)
                feats.append(f)
                q = np.sum(r.features**2, axis=0).reshape(-1)
                cellq.append(q)
                masks.append(r.mask.reshape(-1))
                boards.append(mask_board(r.mask).reshape(-1))
                norms.append(float(np.linalg.norm(f)))
        stack = lambda xs, dt: (np.array(xs, dtype=dt) if xs
                                else np.zeros((0, 0), dtype=dt))
        self.feats = stack(feats, float)
        self.cellq = stack(cellq, float)
        self.masks = stack(masks, float)
        self.boards = stack(boards, float)
        self.norms = np.array(norms)


def similarity_matrix(a: Template, b: Template,
                      cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """All-pairs local similarity, shape (len(a), len(b))."""
    if a.binary != b.binary:
        raise ValueError("cannot mix float and binary templates")
    if a.channels != b.channels:
        raise ValueError("templates have different channel counts")
    return _similarity_matrix(_Prepared(a), _Prepared(b), cfg)


def _similarity_matrix(pa: _Prepared, pb: _Prepared, cfg: MatchConfig) -> np.ndarray:
    if pa.n == 0 or pb.n == 0:
        return np.zeros((pa.n, pb.n))
    num = pa.feats @ pb.feats.T
    if pa.binary:
        slots = 2.0 * pa.channels * (pa.masks @ pb.masks.T)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(slots > 0, num / np.maximum(slots, 1e-300), 0.0)
        if not cfg.overlap_normalization:
            return ratio
        overlap = pa.boards @ pb.boards.T
        return np.where(overlap > 0,
                        ratio * np.sqrt(overlap / cfg.h_o_reference), 0.0)
    if not cfg.overlap_normalization:
        den = np.outer(pa.norms, pb.norms)
        return np.where(den >= cfg.denom_epsilon, num / np.maximum(den, 1e-300), 0.0)
    den = np.sqrt(pa.cellq @ (pb.masks**2).T) * np.sqrt((pa.masks**2) @ pb.cellq.T)
    overlap = pa.boards @ pb.boards.T
    ok = (den >= cfg.denom_epsilon) & (overlap > 0)
    return np.where(ok, num / np.maximum(den, 1e-300)
                    * np.sqrt(np.maximum(overlap, 0.0) / cfg.h_o_reference), 0.0)


# ---------------------------------------------------------------------------
# relaxation

def _pair_geometry(positions: np.ndarray, thetas: np.ndarray):
    """Pairwise distances, relative directions, and radial angles."""
    diff = positions[None, :, :] - positions[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    ddir = angle_diff_vec(thetas[None, :], thetas[:, None])
    bearing = np.arctan2(diff[..., 1], diff[..., 0])
    radial = angle_diff_vec(bearing, thetas[:, None])
    return dist, ddir, radial


def compatibility_matrix(minutiae_a, minutiae_b, cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """rho as a flat ((na*nb), (na*nb)) matrix indexed by i*nb+j.

    rho multiplies Gaussian penalties on the pairwise distance difference,
    the relative-direction difference, and the radial-angle difference.
    Entries where the two cells share a minutia on either side carry no
    relative geometry and are zero.
    """
    pa = np.array([[m.x, m.y] for m in minutiae_a]).reshape(-1, 2)
    ta = np.array([m.theta for m in minutiae_a])
    pb = np.array([[m.x, m.y] for m in minutiae_b]).reshape(-1, 2)
    tb = np.array([m.theta for m in minutiae_b])
    return _compatibility_arrays(pa, ta, pb, tb, cfg)


def _compatibility_arrays(pa, ta, pb, tb, cfg: MatchConfig) -> np.ndarray:
    na, nb = len(pa), len(pb)
    da, dira, rada = _pair_geometry(pa, ta)
    db, dirb, radb = _pair_geometry(pb, tb)
    inv_d = 1.0 / (2.0 * cfg.relax_sigma_dist**2)
    inv_t = 1.0 / (2.0 * cfg.relax_sigma_dir**2)
    inv_r = 1.0 / (2.0 * cfg.relax_sigma_radial**2)
    out = np.zeros((na * nb, na * nb))
    for i in range(na):
        # axes: j (nb), k (na), l (nb)
        e = (da[i][None, :, None] - db[:, None, :]) ** 2 * inv_d
        e += angle_diff_vec(dira[i][None, :, None], dirb[:, None, :]) ** 2 * inv_t
        e += angle_diff_vec(rada[i][None, :, None], radb[:, None, :]) ** 2 * inv_r
        rho = np.exp(-e)
        rho[:, i, :] = 0.0  # k == i
        for j in range(nb):
            rho[j, :, j] = 0.0  # l == j
        out[i * nb:(i + 1) * nb] = rho.reshape(nb, na * nb)
    return out


def relax_with_compatibility(S: np.ndarray, rho: np.ndarray, n: int,
                             cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """Iterate S <- w*S + (1-w) * (rho @ S) / (n - 1)."""
    if n < 2:
        return S.copy()
    w = cfg.relax_weight
    flat = S.reshape(-1)
    for _ in range(cfg.relax_iterations):
        support = rho @ flat
        flat = w * flat + (1.0 - w) * support / (n - 1)
    return flat.reshape(S.shape)


def relax(S: np.ndarray, minutiae_a, minutiae_b,
          cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """Geometric relaxation of a local similarity matrix.

    Compatible cells (pairs whose relative geometry agrees on both sides)
    reinforce each other across cfg.relax_iterations rounds; incompatible
    cells decay toward w**iterations of their value. With fewer than two
    minutiae on a side the matrix is returned unchanged.
    """
    S = np.asarray(S, dtype=float)
    na, nb = S.shape
    if len(minutiae_a) != na or len(minutiae_b) != nb:
        raise ValueError("similarity matrix does not match the minutia sets")
    n = min(na, nb)
    if n < 2 or cfg.relax_iterations == 0:
        return S.copy()
    rho = compatibility_matrix(minutiae_a, minutiae_b, cfg)
    return relax_with_compatibility(S, rho, n, cfg)


def _relax_prepared(S: np.ndarray, pa: _Prepared, pb: _Prepared,
                    cfg: MatchConfig) -> np.ndarray:
    n = min(pa.n, pb.n)
    if n < 2 or cfg.relax_iterations == 0:
        return S.copy()
    rho = _compatibility_arrays(pa.positions, pa.thetas, pb.positions, pb.thetas, cfg)
    return relax_with_compatibility(S, rho, n, cfg)


# ---------------------------------------------------------------------------
# assignment and final score

def lsa_hungarian(S: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-total-score one-to-one assignment, min(na, nb) pairs.

    Solved exactly; among equal-total optima the result is canonicalized by
    equal-sum pair swaps so that column indices come in lexicographic order
    where ties allow. Pairs are returned sorted by row index.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.size == 0:
        raise ValueError("similarity matrix must be non-empty 2D")
    rows, cols = linear_sum_assignment(S, maximize=True)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    changed = True
    while changed:
        changed = False
        for p in range(len(pairs)):
            for q in range(p + 1, len(pairs)):
                (r1, c1), (r2, c2) = pairs[p], pairs[q]
                if c2 < c1 and S[r1, c1] + S[r2, c2] == S[r1, c2] + S[r2, c1]:
                    pairs[p], pairs[q] = (r1, c2), (r2, c1)
                    changed = True
    return pairs


def select_nm(n_a: int, n_b: int, cfg: MatchConfig = MatchConfig()) -> int:
    """Pair budget from template sizes: a rounded logistic between the bounds."""
    if n_a < 0 or n_b < 0:
        raise ValueError("set sizes must be non-negative")
    span = cfg.max_nm - cfg.min_nm
    x = span / (1.0 + math.exp(-cfg.tau * (min(n_a, n_b) - cfg.mu)))
    return cfg.min_nm + int(math.floor(x + 0.5))  # round half away from zero


def score_from_assignment(S_relaxed: np.ndarray, pairs, n_m: int) -> MatchResult:
    """Mean of the top n_m assigned pair scores (all pairs if fewer)."""
    scored = sorted(((int(i), int(j), float(S_relaxed[i, j])) for i, j in pairs),
                    key=lambda t: (-t[2], t[0], t[1]))
    if not scored:
        raise ValueError("empty assignment")
    top = scored[:n_m]
    return MatchResult(float(np.mean([s for _, _, s in top])), tuple(scored), n_m)


def prepare_template(t: Template) -> _Prepared:
    """Precompute the flattened arrays used by matching.

    match_score and identify accept prepared templates in place of Template
    objects; preparing gallery templates once amortizes the cost across
    many probes.
    """
    return _Prepared(t)


def _as_prepared(t) -> _Prepared:
    return t if isinstance(t, _Prepared) else _Prepared(t)


def _match_prepared(pa: _Prepared, pb: _Prepared, cfg: MatchConfig) -> MatchResult:
    if pa.n == 0 or pb.n == 0:
        raise ValueError("cannot match empty templates")
    if pa.binary != pb.binary:
        raise ValueError("cannot mix float and binary templates")
    if pa.channels != pb.channels:
        raise ValueError("templates have different channel counts")
    S = _similarity_matrix(pa, pb, cfg)
    S_rel = _relax_prepared(S, pa, pb, cfg)
    pairs = lsa_hungarian(S_rel)
    n_m = select_nm(pa.n, pb.n, cfg)
    return score_from_assignment(S_rel, pairs, n_m)


def match_score(a, b, cfg: MatchConfig = MatchConfig()) -> MatchResult:
    """Full pipeline: similarity matrix, relaxation, assignment, top-n_m mean."""
    return _match_prepared(_as_prepared(a), _as_prepared(b), cfg)


# ---------------------------------------------------------------------------
# identification

_WORKER = {}


def _identify_init(probe, gallery, cfg):
    _WORKER["probe"] = _as_prepared(probe)
    _WORKER["gallery"] = gallery
    _WORKER["cfg"] = cfg


def _identify_one(idx):
    pb = _as_prepared(_WORKER["gallery"][idx])
    return idx, _match_prepared(_WORKER["probe"], pb, _WORKER["cfg"]).score


def identify(probe, gallery, cfg: MatchConfig = MatchConfig(),
             workers: int = 1) -> list[tuple[int, float]]:
    """Score the probe against every gallery template.

    Returns (gallery_index, score) sorted by descending score with index as
    the tie-break. The result does not depend on the worker count; probe
    and gallery entries may be Template objects or prepared templates.
    """
    gallery = list(gallery)
    if not gallery:
        return []
    if workers <= 1:
        pa = _as_prepared(probe)
        scores = [(i, _match_prepared(pa, _as_prepared(g), cfg).score)
                  for i, g in enumerate(gallery)]
    else:
        ctx = get_context()
        with ctx.Pool(workers, initializer=_identify_init,
                      initargs=(probe, gallery, cfg)) as pool:
            scores = pool.map(_identify_one, range(len(gallery)), chunksize=1)
    return sorted(scores, key=lambda t: (-t[1], t[0]))
