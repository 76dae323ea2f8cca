"""Score anatomy for one genuine and one impostor comparison.

Builds a gallery print plus a distorted, cropped probe of the same finger
and an unrelated finger, then walks through the stages of a comparison:
similarity matrix, relaxation, assignment, and the final averaged score.
"""

import numpy as np

from denseprint.matcher import (
    MatchConfig,
    match_score,
    relax,
    select_nm,
    similarity_matrix,
)
from denseprint.synth import (
    DistortionConfig,
    apply_distortion,
    enroll_template,
    random_crop_mask,
    simulate_plain,
    synth_fingerprint,
)

cfg = MatchConfig()

gallery_fp = synth_fingerprint(seed=3, size=448)
warped = apply_distortion(gallery_fp, DistortionConfig(magnitude=8.0, seed=31))
probe_fp = simulate_plain(warped, random_crop_mask(warped.mask, 0.6, seed=32))
other_fp = synth_fingerprint(seed=4, size=448)

gal = enroll_template(gallery_fp)
probe = enroll_template(probe_fp)
other = enroll_template(other_fp)

S = similarity_matrix(probe, gal, cfg)
print(f"similarity matrix {S.shape}, top value {S.max():+.3f}")
R = relax(S, [d.anchor for d in probe.records], [d.anchor for d in gal.records], cfg)
print(f"after relaxation   top value {R.max():+.3f} "
      f"(geometric consensus reweights each cell)")

n_m = select_nm(len(probe.records), len(gal.records), cfg)
print(f"pair budget n_m    {n_m} for {len(probe.records)}x{len(gal.records)} minutiae")

genuine = match_score(probe, gal, cfg)
impostor = match_score(probe, other, cfg)
print(f"\ngenuine score      {genuine.score:+.3f}")
for i, j, s in genuine.pairs[: genuine.n_m]:
    print(f"  probe {i:2d} <-> gallery {j:2d}   {s:+.3f}")
print(f"impostor score     {impostor.score:+.3f}")

margin = genuine.score - impostor.score
print(f"\nseparation         {margin:+.3f} "
      f"({'comfortable' if margin > 0.5 else 'thin'})")
