"""Compiled inner loop for batched impulse-response evaluation.

The tempering baseline evaluates ~100k impulse responses per run; numpy's
per-op dispatch dominates at these canvas sizes, so the layer chain runs under
numba when available. Results match engine.synthesize_ir_batch to float64
rounding; callers fall back to the numpy path if numba is missing.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

try:
    from numba import NumbaWarning, njit, prange

    # harmless on hosts whose TBB is too old; numba falls back by itself
    warnings.filterwarnings("ignore", category=NumbaWarning, message=".*TBB.*")
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on minimal installs
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True, parallel=True)
def _ir_batch_loop(offsets, weights, canvas, out):  # pragma: no cover - compiled
    nb, nl, ns = weights.shape[0], weights.shape[1], weights.shape[2]
    half = canvas // 2
    # chains are fully independent: parallel scheduling cannot change results
    for b in prange(nb):
        img = np.zeros((canvas, canvas))
        nxt = np.zeros((canvas, canvas))
        img[half, half] = 1.0
        live = 0
        for l in range(nl):
            pad = 1
            for i in range(ns):
                r = int(max(abs(math.floor(offsets[b, l, i, 0])),
                            abs(math.floor(offsets[b, l, i, 0]) + 1),
                            abs(math.floor(offsets[b, l, i, 1])),
                            abs(math.floor(offsets[b, l, i, 1]) + 1)))
                if r > pad:
                    pad = r
            grown = live + pad
            if grown > half:
                grown = half
            # support half-width so far bounds the accumulation loops; the
            # buffer is zeroed fully so reads beyond the old support are clean
            nxt[:] = 0.0
            y_lo, y_hi = half - grown, half + grown
            for i in range(ns):
                ox = offsets[b, l, i, 0]
                oy = offsets[b, l, i, 1]
                w = weights[b, l, i]
                ix = math.floor(ox)
                iy = math.floor(oy)
                fx = ox - ix
                fy = oy - iy
                for c in range(4):
                    dx = int(ix) + (c & 1)
                    dy = int(iy) + (c >> 1)
                    cw = w * ((fx if (c & 1) else 1.0 - fx)
                              * (fy if (c >> 1) else 1.0 - fy))
                    if cw == 0.0:
                        continue
                    y0 = y_lo if y_lo > -dy else -dy
                    y1 = (y_hi + 1) if (y_hi + 1) < canvas - dy else canvas - dy
                    x0 = y_lo if y_lo > -dx else -dx
                    x1 = (y_hi + 1) if (y_hi + 1) < canvas - dx else canvas - dx
                    for y in range(y0, y1):
                        src = img[y + dy]
                        dst = nxt[y]
                        for x in range(x0, x1):
                            dst[x] += cw * src[x + dx]
            img, nxt = nxt, img
            live = grown
        out[b] = img


def ir_batch_compiled(offsets: np.ndarray, weights: np.ndarray, canvas: int) -> np.ndarray:
    """Batched impulse responses (B, canvas, canvas) via the compiled loop."""
    out = np.zeros((weights.shape[0], canvas, canvas))
    _ir_batch_loop(
        np.ascontiguousarray(offsets), np.ascontiguousarray(weights), canvas, out
    )
    return out


@njit(cache=True, parallel=True)
def _sv_pass_loop(prev, nxt, k0, k1, t, oxl, oyl, wl):  # pragma: no cover - compiled
    h, w = prev.shape
    n = oxl.shape[1]
    # rows are independent within a pass; parallel order cannot change results
    for y in prange(h):
        for x in range(w):
            kk0 = k0[y, x]
            kk1 = k1[y, x]
            tt = t[y, x]
            acc = 0.0
            for i in range(n):
                ox = (1.0 - tt) * oxl[kk0, i] + tt * oxl[kk1, i]
                oy = (1.0 - tt) * oyl[kk0, i] + tt * oyl[kk1, i]
                wt = (1.0 - tt) * wl[kk0, i] + tt * wl[kk1, i]
                sx = x + ox
                sy = y + oy
                x0 = int(math.floor(sx))
                y0 = int(math.floor(sy))
                fx = sx - x0
                fy = sy - y0
                val = 0.0
                if 0 <= y0 < h:
                    if 0 <= x0 < w:
                        val += (1.0 - fx) * (1.0 - fy) * prev[y0, x0]
                    if 0 <= x0 + 1 < w:
                        val += fx * (1.0 - fy) * prev[y0, x0 + 1]
                if 0 <= y0 + 1 < h:
                    if 0 <= x0 < w:
                        val += (1.0 - fx) * fy * prev[y0 + 1, x0]
                    if 0 <= x0 + 1 < w:
                        val += fx * fy * prev[y0 + 1, x0 + 1]
                acc += wt * val
            nxt[y, x] = acc


def sv_filter_compiled(img, k0, k1, t, ox, oy, w, layout) -> np.ndarray:
    """Multi-pass spatially varying filtering with per-pixel blended parameters.

    ox/oy/w are (Mb, L, Nmax) stacked basis parameters; k0/k1/t are the
    per-pixel bracketing entries and blend factor.
    """
    cur = np.ascontiguousarray(img)
    k0 = np.ascontiguousarray(k0)
    k1 = np.ascontiguousarray(k1)
    t = np.ascontiguousarray(t, dtype=np.float64)
    for l, n in enumerate(layout):
        nxt = np.empty_like(cur)
        _sv_pass_loop(cur, nxt, k0, k1, t,
                      np.ascontiguousarray(ox[:, l, :n]),
                      np.ascontiguousarray(oy[:, l, :n]),
                      np.ascontiguousarray(w[:, l, :n]))
        cur = nxt
    return cur
