"""Parameter initialization strategies for kernel-complex fitting.

Four strategies, ablatable independently:
  rand  - first layer uniform over the target support's bounding box, later
          layers uniform in local boxes matching the radial schedule's extent
  ir    - deterministic radial rings with linearly increasing radius per layer
  ss    - first layer rejection-sampled inside the target support, random
          local tail as in rand
  ss-ir - rejection-sampled first layer plus a radial tail (the default)

All strategies start every weight at 1/N for its layer, and all share the same
cumulative spatial extent (about half the target size beyond the first layer),
so their synthesis canvases and loss floors stay comparable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import KernelComplex, SparseLayer
from .kernels import SUPPORT_THRESHOLD_REL, DenseKernel, KernelError

__all__ = [
    "InitStrategy",
    "radial_init",
    "bbox_random_init",
    "support_rejection_sample",
    "ss_init",
    "hybrid_init",
    "build_init",
]

STRATEGY_TAGS = ("rand", "ir", "ss", "ss-ir")


@dataclass(frozen=True)
class InitStrategy:
    tag: str = "ss-ir"
    seed: int = 0
    delta_r: float | None = None  # explicit radial step for 'ir'; auto when None

    def __post_init__(self):
        if self.tag not in STRATEGY_TAGS:
            raise KernelError(f"unknown init strategy {self.tag!r}; choose from {STRATEGY_TAGS}")
        if self.delta_r is not None and self.delta_r <= 0:
            raise KernelError(f"delta_r must be positive, got {self.delta_r}")


def _uniform_layer(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _radial_ring(radius: float, n: int, kws: bool) -> np.ndarray:
    """n offsets on a circle.

    Plain mode places sample i at angle 2*pi*i/n (i = 1..n). KWS mode uses
    half-step angles grouped as exact sign-mirrored quadruples so the 4-fold
    symmetry tie starts consistent to the last bit.
    """
    if kws:
        if n % 4 != 0:
            raise KernelError(f"KWS layers need sample counts divisible by 4, got {n}")
        out = np.empty((n, 2))
        for g in range(n // 4):
            phi = 2.0 * math.pi * (g + 0.5) / n  # first-quadrant base angle
            dx, dy = radius * math.cos(phi), radius * math.sin(phi)
            out[4 * g:4 * g + 4] = [(dx, dy), (-dx, dy), (-dx, -dy), (dx, -dy)]
        return out
    i = np.arange(1, n + 1, dtype=np.float64)
    ang = 2.0 * math.pi * i / n
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def radial_init(layout, m_target: float, delta_r: float | None = None,
                kws: bool = False) -> KernelComplex:
    """Rings of linearly increasing radius r_l = l * delta_r, uniform weights.

    The automatic step delta_r = M / (L (L + 1)) makes the cumulative radius
    sum to M/2, so the composed receptive field spans the target's half-extent.
    """
    layout = tuple(int(n) for n in layout)
    nlayers = len(layout)
    if nlayers < 1:
        raise KernelError("radial init needs at least one layer")
    if delta_r is None:
        delta_r = m_target / (nlayers * (nlayers + 1))
    layers = []
    for l, n in enumerate(layout, start=1):
        layers.append(SparseLayer(_radial_ring(l * delta_r, n, kws), _uniform_layer(n)))
    return KernelComplex(tuple(layers))


def _support_pixels(k_tgt: DenseKernel) -> np.ndarray:
    """Support pixel centers in centered (x, y) offset coordinates."""
    mask = k_tgt.support_mask(SUPPORT_THRESHOLD_REL)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise KernelError("kernel has empty support")
    c = k_tgt.radius
    return np.stack([cols - c, rows - c], axis=1).astype(np.float64)


def _bbox_layer(rng: np.random.Generator, bbox, n: int) -> np.ndarray:
    xmin, xmax, ymin, ymax = bbox
    xs = rng.uniform(xmin, xmax, size=n)
    ys = rng.uniform(ymin, ymax, size=n)
    return np.stack([xs, ys], axis=1)


def _random_tail(rng: np.random.Generator, layout, m_target: float):
    """Unstructured counterpart of the radial tail: layer l uniform in a local
    box of half-width l * delta_r, same cumulative extent as the rings."""
    nlayers = len(layout)
    delta_r = m_target / (nlayers * (nlayers + 1))
    layers = []
    for l, n in enumerate(layout[1:], start=2):
        half = l * delta_r
        off = rng.uniform(-half, half, size=(n, 2))
        layers.append(SparseLayer(off, _uniform_layer(n)))
    return layers


def bbox_random_init(k_tgt: DenseKernel, layout, seed: int = 0) -> KernelComplex:
    """First layer uniform over the support bounding box, local random tail."""
    layout = tuple(int(n) for n in layout)
    bbox = k_tgt.support_bbox()
    rng = np.random.default_rng(seed)
    layers = [SparseLayer(_bbox_layer(rng, bbox, layout[0]), _uniform_layer(layout[0]))]
    layers += _random_tail(rng, layout, k_tgt.size)
    return KernelComplex(tuple(layers))


def support_rejection_sample(k_tgt: DenseKernel, n_samples: int, seed: int = 0,
                             return_radius: bool = False):
    """Dart-throw offsets onto the target's support pixels with a min-distance rule.

    The initial exclusion radius r = sqrt(S / (N pi)) spreads N samples evenly
    over S support pixels regardless of the support's shape, so non-convex
    targets (rings, hearts) get covered without wasting samples on empty
    bounding-box area. Every 200 consecutive rejections r relaxes to 0.9 r,
    which guarantees termination with exactly N distinct support pixels.
    """
    if n_samples < 1:
        raise KernelError(f"need at least one sample, got {n_samples}")
    pixels = _support_pixels(k_tgt)
    s = pixels.shape[0]
    rng = np.random.default_rng(seed)
    if s < n_samples:
        warnings.warn(
            f"support has {s} pixels < {n_samples} samples; sampling with replacement",
            stacklevel=2,
        )
        offsets = pixels[rng.integers(0, s, size=n_samples)]
        return (offsets, 0.0) if return_radius else offsets
    r = math.sqrt(s / (n_samples * math.pi))
    accepted = np.empty((n_samples, 2))
    count = 0
    fails = 0
    while count < n_samples:
        cand = pixels[rng.integers(0, s)]
        if count == 0 or np.min(np.hypot(*(accepted[:count] - cand).T)) >= r:
            accepted[count] = cand
            count += 1
            fails = 0
        else:
            fails += 1
            if fails >= 200:
                r *= 0.9
                fails = 0
    return (accepted, r) if return_radius else accepted


def ss_init(k_tgt: DenseKernel, layout, seed: int = 0) -> KernelComplex:
    """Rejection-sampled first layer; random local tail as in bbox_random_init."""
    layout = tuple(int(n) for n in layout)
    rng = np.random.default_rng(seed)
    first = support_rejection_sample(k_tgt, layout[0], seed=seed)
    layers = [SparseLayer(first, _uniform_layer(layout[0]))]
    layers += _random_tail(rng, layout, k_tgt.size)
    return KernelComplex(tuple(layers))


def hybrid_init(k_tgt: DenseKernel, layout, seed: int = 0, kws: bool = False) -> KernelComplex:
    """Rejection-sampled first layer plus a radial tail spanning M/2 cumulative radius.

    The tail's step is recomputed for L-1 layers (delta_r = M / ((L-1) L)) so
    the receptive-field growth matches a pure radial schedule of that depth.
    With a single layer this degenerates to pure support sampling.
    """
    layout = tuple(int(n) for n in layout)
    first = support_rejection_sample(k_tgt, layout[0], seed=seed)
    layers = [SparseLayer(first, _uniform_layer(layout[0]))]
    nlayers = len(layout)
    if nlayers > 1:
        m = k_tgt.size
        delta_r = m / ((nlayers - 1) * nlayers)
        for l, n in enumerate(layout[1:], start=1):
            layers.append(SparseLayer(_radial_ring(l * delta_r, n, kws), _uniform_layer(n)))
    return KernelComplex(tuple(layers))


def build_init(strategy: InitStrategy, k_tgt: DenseKernel, layout,
               kws: bool = False) -> KernelComplex:
    """Materialize an initialization strategy for a given target and layout."""
    layout = tuple(int(n) for n in layout)
    if strategy.tag == "rand":
        return bbox_random_init(k_tgt, layout, seed=strategy.seed)
    if strategy.tag == "ir":
        return radial_init(layout, k_tgt.size, delta_r=strategy.delta_r, kws=kws)
    if strategy.tag == "ss":
        return ss_init(k_tgt, layout, seed=strategy.seed)
    return hybrid_init(k_tgt, layout, seed=strategy.seed, kws=kws)
