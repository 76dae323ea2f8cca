"""Mated-minutia selection funnel and patch-pair generation."""

import dataclasses
import math
from collections import namedtuple

import numpy as np
import pytest

from denseprint.core import Affine2D, Minutia, MinutiaSet, SegMask, transform_minutia
from denseprint.synth import rigid_copy, synth_fingerprint
from denseprint.traingen import (
    MatedPair,
    TrainGenConfig,
    generate_patch_pairs,
    select_mated_minutiae,
)

Record = namedtuple("Record", "image minutiae mask")


def planted_scene(seed, n_spurious=2):
    """B = rigid copy of A plus spurious minutiae placed away from real ones."""
    fp = synth_fingerprint(seed, 448)
    t = Affine2D.rotation(0.2 + 0.05 * seed, center=(224.0, 224.0)).compose(
        Affine2D.translate(6.0 - seed % 11, 4.0))
    bfp = rigid_copy(fp, t)
    rng = np.random.default_rng(seed + 77)
    hard = bfp.mask.pixels >= 0.5
    real = np.array([[m.x, m.y] for m in bfp.minutiae])
    spurious = []
    while len(spurious) < n_spurious:
        x, y = rng.uniform(40.0, 408.0, size=2)
        if (hard[int(y), int(x)]
                and np.min(np.hypot(real[:, 0] - x, real[:, 1] - y)) > 25.0):
            spurious.append(Minutia(float(x), float(y),
                                    float(rng.uniform(0.0, 2.0 * math.pi))))
    b = dataclasses.replace(
        bfp, minutiae=MinutiaSet(list(bfp.minutiae) + spurious))
    return fp, b, t, len(bfp.minutiae)


class TestConfig:
    def test_defaults(self):
        cfg = TrainGenConfig()
        assert cfg.top_n == 12 and cfg.fps_k == 5
        assert cfg.erosion_radius == 16 and cfg.patch_size == 128

    def test_invariants(self):
        with pytest.raises(ValueError):
            TrainGenConfig(top_n=3, fps_k=5)
        with pytest.raises(ValueError):
            TrainGenConfig(fps_k=0)
        with pytest.raises(ValueError):
            TrainGenConfig(erosion_radius=-1)


class TestSelectMated:
    def test_identical_fingerprints_self_pairs(self):
        fp = synth_fingerprint(3, 448)
        pairs = select_mated_minutiae(fp, fp)
        assert 1 <= len(pairs) <= 5
        for p in pairs:
            assert p.index_a == p.index_b
            assert p.score == 1.0

    def test_deterministic(self):
        fp = synth_fingerprint(4, 448)
        a = select_mated_minutiae(fp, fp)
        b = select_mated_minutiae(fp, fp)
        assert a == b

    def test_one_to_one(self):
        for seed in range(4):
            a, b, _, _ = planted_scene(seed)
            pairs = select_mated_minutiae(a, b)
            assert len({p.index_a for p in pairs}) == len(pairs)
            assert len({p.index_b for p in pairs}) == len(pairs)

    def test_planted_transform_no_spurious(self):
        for seed in range(8):
            a, b, t, n_real = planted_scene(seed)
            pairs = select_mated_minutiae(a, b)
            assert len(pairs) >= 3
            for p in pairs:
                assert p.index_b < n_real, "spurious minutia selected"
                ma = transform_minutia(a.minutiae[p.index_a], t)
                mb = b.minutiae[p.index_b]
                assert math.hypot(ma.x - mb.x, ma.y - mb.y) <= 8.0

    def test_pair_cap(self):
        a, b, _, _ = planted_scene(1)
        assert len(select_mated_minutiae(a, b)) <= 5
        few = select_mated_minutiae(a, b, TrainGenConfig(fps_k=2))
        assert len(few) <= 2

    def test_fps_order_property(self):
        # with no cap the survivors come out in farthest-point order; verify
        # against a brute-force greedy max-min walk over the same points
        a, b, _, _ = planted_scene(2)
        cfg = TrainGenConfig(fps_k=12)
        pairs = select_mated_minutiae(a, b, cfg)
        assert len(pairs) >= 3
        pos = np.array([[a.minutiae[p.index_a].x, a.minutiae[p.index_a].y]
                        for p in pairs])
        assert max(p.score for p in pairs) == pairs[0].score
        chosen = [0]
        while len(chosen) < len(pos):
            best, best_d = None, -1.0
            for i in range(len(pos)):
                if i in chosen:
                    continue
                d = min(float(np.hypot(*(pos[i] - pos[j]))) for j in chosen)
                if d > best_d:
                    best, best_d = i, d
            chosen.append(best)
        assert chosen == list(range(len(pos)))

    def test_eroded_to_empty(self):
        fp = synth_fingerprint(0, 448)
        assert select_mated_minutiae(fp, fp, TrainGenConfig(erosion_radius=300)) == []

    def test_two_survivors_is_empty(self):
        # mask that keeps only two minutiae after erosion: fewer than three
        # pairs reach the fitting stage, so the fingerprint pair is skipped
        fp = synth_fingerprint(5, 448)
        pos = fp.minutiae.positions
        d = np.hypot(pos[:, 0, None] - pos[None, :, 0],
                     pos[:, 1, None] - pos[None, :, 1])
        i, j = np.unravel_index(np.argmax(d), d.shape)
        yy, xx = np.mgrid[0:448, 0:448].astype(float)
        keep = np.zeros((448, 448))
        for k in (i, j):
            keep[np.hypot(xx - pos[k, 0], yy - pos[k, 1]) <= 30.0] = 1.0
        small = Record(fp.image, fp.minutiae, SegMask(keep))
        assert select_mated_minutiae(small, small) == []

    def test_too_few_minutiae_rejected(self):
        fp = synth_fingerprint(0, 448)
        tiny = Record(fp.image, MinutiaSet(list(fp.minutiae)[:2]), fp.mask)
        with pytest.raises(ValueError):
            select_mated_minutiae(tiny, fp)
        with pytest.raises(ValueError):
            select_mated_minutiae(fp, tiny)


class TestGeneratePatchPairs:
    def test_self_pairs_identical_patches(self):
        fp = synth_fingerprint(3, 448)
        pairs = select_mated_minutiae(fp, fp)
        out = generate_patch_pairs(fp, fp, pairs)
        assert len(out) == len(pairs)
        for pa, pb, _ in out:
            assert np.array_equal(pa.image.pixels, pb.image.pixels)

    def test_class_ids_fresh(self):
        fp = synth_fingerprint(3, 448)
        pairs = select_mated_minutiae(fp, fp)
        out = generate_patch_pairs(fp, fp, pairs, start_class=40)
        assert [cid for _, _, cid in out] == list(range(40, 40 + len(pairs)))

    def test_planted_motion_patches_agree(self):
        for seed in range(4):
            a, b, _, _ = planted_scene(seed)
            pairs = select_mated_minutiae(a, b)
            for pa, pb, _ in generate_patch_pairs(a, b, pairs):
                diff = float(np.mean(np.abs(pa.image.pixels - pb.image.pixels)))
                assert diff < 0.02

    def test_patch_geometry(self):
        fp = synth_fingerprint(1, 448)
        pairs = select_mated_minutiae(fp, fp)
        pa, pb, _ = generate_patch_pairs(fp, fp, pairs)[0]
        assert pa.image.pixels.shape == (128, 128)
        assert pa.anchor == fp.minutiae[pairs[0].index_a]

    def test_empty_pairs(self):
        fp = synth_fingerprint(0, 448)
        assert generate_patch_pairs(fp, fp, []) == []

    def test_anchor_metadata_roundtrip(self):
        a, b, _, _ = planted_scene(0)
        pairs = select_mated_minutiae(a, b)
        out = generate_patch_pairs(a, b, pairs)
        for (pa, pb, _), p in zip(out, pairs):
            assert pa.anchor == a.minutiae[p.index_a]
            assert pb.anchor == b.minutiae[p.index_b]
