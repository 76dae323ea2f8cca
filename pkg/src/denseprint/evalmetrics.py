"""Identification and verification metrics: CMC, DET, TAR at fixed FAR.

All metrics are order statistics of the score sets, so they are invariant
under any strictly increasing rescoring. Ties always count against the
matcher: an impostor score equal to the threshold is a false match.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoreSets:
    """Genuine and impostor comparison scores."""

    genuine: tuple
    impostor: tuple

    def __post_init__(self):
        g = tuple(float(v) for v in self.genuine)
        i = tuple(float(v) for v in self.impostor)
        if not all(math.isfinite(v) for v in g + i):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)

    def require_nonempty(self):
        if not self.genuine or not self.impostor:
            raise ValueError("need at least one genuine and one impostor score")


@dataclass(frozen=True)
class IdentificationRun:
    """Per-probe gallery rankings (best first) and the mated gallery id."""

    rankings: tuple  # tuple of tuples of gallery ids
    mates: tuple  # one mate id per probe

    def __post_init__(self):
        rankings = tuple(tuple(int(g) for g in r) for r in self.rankings)
        mates = tuple(int(m) for m in self.mates)
        if len(rankings) != len(mates):
            raise ValueError("one mate id per probe required")
        for r in rankings:
            if len(set(r)) != len(r):
                raise ValueError("ranking contains duplicate gallery ids")
        object.__setattr__(self, "rankings", rankings)
        object.__setattr__(self, "mates", mates)

    def __len__(self):
        return len(self.mates)

    def mate_ranks(self):
        """1-indexed rank of each probe's mate; None when absent."""
        out = []
        for ranking, mate in zip(self.rankings, self.mates):
            try:
                out.append(ranking.index(mate) + 1)
            except ValueError:
                out.append(None)
        return out


def cmc_curve(run: IdentificationRun, max_rank: int) -> np.ndarray:
    """Cumulative match characteristic: entry k-1 = P(mate rank <= k)."""
    if len(run) == 0:
        raise ValueError("empty identification run")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    ranks = run.mate_ranks()
    curve = np.zeros(max_rank)
    for k in range(1, max_rank + 1):
        curve[k - 1] = sum(1 for r in ranks if r is not None and r <= k) / len(run)
    return curve


def det_curve(s: ScoreSets) -> np.ndarray:
    """(FMR, FNMR) rows over every distinct score threshold, sorted by FMR.

    FMR(t) = fraction of impostor scores >= t; FNMR(t) = fraction of genuine
    scores < t. A final threshold above every score contributes the
    (0, 1) endpoint.
    """
    s.require_nonempty()
    gen = np.asarray(s.genuine)
    imp = np.asarray(s.impostor)
    top = max(gen.max(), imp.max())
    # descending thresholds give rows already sorted by FMR (non-decreasing)
    # with FNMR non-increasing, including across FMR ties
    thresholds = np.unique(np.concatenate([gen, imp, [top + 1.0]]))[::-1]
    fmr = np.array([np.mean(imp >= t) for t in thresholds])
    fnmr = np.array([np.mean(gen < t) for t in thresholds])
    return np.stack([fmr, fnmr], axis=1)


def tar_at_far(s: ScoreSets, far: float) -> float:
    """True accept rate with the impostor pass rate held below `far`.

    The operating threshold sits just above the ceil(far * n)-th largest
    impostor score, so at most ceil(far * n) - 1 impostors could pass and
    ties sit below the threshold. For far < 1/n this is the conservative
    max-impostor-score threshold.
    """
    s.require_nonempty()
    if not (0.0 < far < 1.0):
        raise ValueError("far must be in (0, 1)")
    imp = np.sort(np.asarray(s.impostor))[::-1]
    k = math.ceil(far * len(imp))
    threshold = imp[k - 1]
    gen = np.asarray(s.genuine)
    return float(np.mean(gen > threshold))


def write_cmc_csv(path, curve) -> None:
    with open(path, "w") as f:
        f.write("rank,rate\n")
        for k, rate in enumerate(np.asarray(curve), start=1):
            f.write(f"{k},{rate:.10g}\n")


def write_det_csv(path, points) -> None:
    with open(path, "w") as f:
        f.write("fmr,fnmr\n")
        for fmr, fnmr in np.asarray(points):
            f.write(f"{fmr:.10g},{fnmr:.10g}\n")
