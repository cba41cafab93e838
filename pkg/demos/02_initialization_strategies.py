"""Why initialization matters for non-convex targets.

A ring kernel has an empty interior, so random or radial starting offsets park
samples where the target has no mass. Support-aware rejection sampling places
the first layer's samples on the ring itself, and the radial tail grows the
receptive field deterministically. This script fits the same budget from all
four strategies and prints the final losses side by side.
"""

import numpy as np

from sparsekern import InitStrategy, TrainConfig, fit, ring_kernel

target = ring_kernel(5.5, 9.0, 23)
layout = (4,) * 12

print("Ring target (inner 5.5, outer 9), 12x4 budget, 600 steps, 3 seeds each\n")
print(f"{'strategy':8s} {'per-seed final loss':30s} median")
for tag in ("rand", "ir", "ss", "ss-ir"):
    finals = [
        fit(target, layout, InitStrategy(tag, seed=s), TrainConfig(steps=600, seed=s)).best_loss
        for s in range(3)
    ]
    shown = " ".join(f"{v:.4f}" for v in finals)
    print(f"{tag:8s} {shown:30s} {np.median(finals):.4f}")

print("\nSupport sampling (ss) captures the ring; the radial tail (ss-ir) adds")
print("stable receptive-field growth. Their combination is the default.")
