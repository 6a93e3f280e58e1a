"""
Blue/brown color separation and threshold calibration
=====================================================

Shows why the CMYK decomposition separates counterstained (blue) from
positively stained (brown) nuclei, then fits classification thresholds
from labeled samples and checks they reclassify the training set.
"""

import numpy as np

from ihcquant.stain import (CmykPixel, StainClass, calibrate_thresholds,
                            rgb_to_cmyk, stain_class_from_mean)

rng = np.random.default_rng(42)

# Blue nuclei have their blue channel on top, so yellow vanishes in the
# conversion; brown nuclei have red on top, so cyan vanishes. One
# channel each is therefore a clean stain indicator.
print("family      R    G    B   ->    C     M     Y     K")
for label, rgb in (("blue", (80, 85, 180)), ("pale blue", (120, 125, 200)),
                   ("brown", (150, 80, 20)), ("dark brown", (60, 30, 8))):
    px = rgb_to_cmyk(rgb)
    print(f"{label:11s}{rgb[0]:4d} {rgb[1]:4d} {rgb[2]:4d}   -> "
          f"{px.c:5.2f} {px.m:5.2f} {px.y:5.2f} {px.k:5.2f}")

# Simulate mean nucleus colors for each class. Unstained means are
# blue-dominant with low yellow; stained means are brown-dominant and
# differ only in darkness (the K channel).
samples = []
for _ in range(50):
    samples.append((CmykPixel(rng.uniform(0.35, 0.6), 0.3,
                              rng.uniform(0.0, 0.12),
                              rng.uniform(0.1, 0.4)),
                    StainClass.UNSTAINED))
for k_lo, k_hi, cls in ((0.08, 0.30, StainClass.LIGHT),
                        (0.40, 0.60, StainClass.MODERATE),
                        (0.70, 0.92, StainClass.DARK)):
    for _ in range(50):
        samples.append((CmykPixel(rng.uniform(0.0, 0.1), 0.3,
                                  rng.uniform(0.55, 0.9),
                                  rng.uniform(k_lo, k_hi)), cls))

# Calibration places each threshold midway between the adjacent class
# ranges: delta_u on the yellow channel (stained vs not), delta_sl and
# delta_su on the K channel (light / moderate / dark).
thresholds = calibrate_thresholds(samples)
print(f"\nfitted thresholds: delta_u={thresholds.delta_u:.3f} "
      f"delta_sl={thresholds.delta_sl:.3f} "
      f"delta_su={thresholds.delta_su:.3f}")

relabeled = sum(stain_class_from_mean(mean, thresholds) is label
                for mean, label in samples)
print(f"reclassified {relabeled}/{len(samples)} calibration samples")

# The same classifier collapses to stained/unstained for Ki67, where
# intensity grades do not matter.
mean = CmykPixel(0.02, 0.3, 0.8, 0.5)
print(f"\nmean {tuple(round(v, 2) for v in mean)} classifies as "
      f"{stain_class_from_mean(mean, thresholds).value} for ER and "
      f"{stain_class_from_mean(mean, thresholds, marker='ki67').value} "
      f"for Ki67")
