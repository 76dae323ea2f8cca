"""Walk through the synthetic fingerprint generator.

Generates one fingerprint, reports what the model planted, then shows the
two impression effects used by the benchmarks: elastic distortion and a
plain-impression crop. Images land in demos/out/.
"""

from pathlib import Path

import numpy as np

from denseprint.cli import save_gray_png
from denseprint.synth import (
    DistortionConfig,
    apply_distortion,
    random_crop_mask,
    simulate_plain,
    synth_fingerprint,
)

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

fp = synth_fingerprint(seed=7, size=448)
print(f"canvas           {fp.image.height}x{fp.image.width}")
print(f"minutiae         {len(fp.minutiae)}")
print(f"mask coverage    {fp.mask.coverage():.2f}")
print(f"ridge period     {np.mean(fp.period[fp.mask.pixels >= 0.5]):.1f} px (mean inside mask)")

save_gray_png(out / "synth.png", fp.image.pixels)
save_gray_png(out / "synth_mask.png", fp.mask.pixels)

warped = apply_distortion(fp, DistortionConfig(magnitude=8.0, seed=1))
kept = len(warped.minutiae)
print(f"\nafter distortion magnitude 8: {kept}/{len(fp.minutiae)} minutiae kept")
save_gray_png(out / "synth_distorted.png", warped.image.pixels)

plain = simulate_plain(warped, random_crop_mask(warped.mask, 0.6, seed=2))
print(f"after 60% crop:               {len(plain.minutiae)} minutiae, "
      f"coverage {plain.mask.coverage():.2f}")
save_gray_png(out / "synth_plain.png", plain.image.pixels)

print(f"\nwrote {out}/synth*.png")
