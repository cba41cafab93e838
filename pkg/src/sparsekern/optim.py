"""Differentiable fitting of a kernel complex to a target kernel.

The forward pass synthesizes the impulse response layer by layer; the backward
pass propagates the loss gradient through every bilinear read analytically,
yielding exact derivatives for all sample offsets and weights. Optimization is
plain Adam with a linearly decayed learning rate plus optional weight
normalization (sum-to-one projection or softmax reparameterization) and a
Kawase-like 4-fold symmetry tie.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .engine import (
    KernelComplex,
    SparseLayer,
    auto_canvas,
    required_canvas,
    sample_shifted,
)
from .kernels import DenseKernel

__all__ = [
    "OptimError",
    "LossKind",
    "ConstraintConfig",
    "TrainConfig",
    "FitResult",
    "loss",
    "backward",
    "AdamState",
    "adam_step",
    "fit",
    "parse_layout",
    "save_theta",
    "load_theta",
    "theta_to_dict",
    "theta_from_dict",
    "write_trace_csv",
]

SUM_DEGENERACY_EPS = 1e-8

# 4-fold symmetry tie: consecutive quadruples share |dx|, |dy| and one weight,
# with signs (+,+), (-,+), (-,-), (+,-)
KWS_SX = (1.0, -1.0, -1.0, 1.0)
KWS_SY = (1.0, 1.0, -1.0, -1.0)


class OptimError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossKind:
    kind: str = "charbonnier"  # charbonnier | l1 | l2
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("charbonnier", "l1", "l2"):
            raise OptimError(f"unknown loss kind {self.kind!r}")
        if self.epsilon <= 0:
            raise OptimError(f"loss epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class ConstraintConfig:
    weight_norm: str = "sum"  # none | sum | sofm
    symmetry: str = "none"    # none | kws

    def __post_init__(self):
        if self.weight_norm not in ("none", "sum", "sofm"):
            raise OptimError(f"unknown weight norm {self.weight_norm!r}")
        if self.symmetry not in ("none", "kws"):
            raise OptimError(f"unknown symmetry constraint {self.symmetry!r}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise OptimError(f"steps must be >= 1, got {self.steps}")
        if not self.lr_start >= self.lr_end > 0:
            raise OptimError(
                f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}"
            )

    def lr_at(self, step: int) -> float:
        if self.steps == 1:
            return self.lr_start
        t = min(max(step, 0), self.steps - 1)
        return self.lr_start + (self.lr_end - self.lr_start) * t / (self.steps - 1)


def parse_layout(text) -> tuple:
    """Layout 'LxN' (L layers of N samples) or explicit per-layer counts."""
    if isinstance(text, str):
        try:
            l, n = text.lower().split("x")
            l, n = int(l), int(n)
        except ValueError as exc:
            raise OptimError(f"cannot parse layout {text!r} (expected LxN)") from exc
        if l < 1 or n < 1:
            raise OptimError(f"layout must have positive layers and samples, got {text!r}")
        return (n,) * l
    layout = tuple(int(n) for n in text)
    if len(layout) < 1 or any(n < 1 for n in layout):
        raise OptimError(f"layout must have positive sample counts, got {layout}")
    return layout


# ---------------------------------------------------------------------------
# Losses on impulse responses

def _common_canvas(a: DenseKernel, b: DenseKernel):
    size = max(a.size, b.size)
    return a.embedded(size).weights, b.embedded(size).weights


def _loss_value(diff: np.ndarray, kind: LossKind) -> float:
    if kind.kind == "charbonnier":
        return float(np.sum(np.sqrt(diff * diff + kind.epsilon * kind.epsilon)))
    if kind.kind == "l1":
        return float(np.sum(np.abs(diff)))
    return float(np.sum(diff * diff))


def _loss_grad(diff: np.ndarray, kind: LossKind) -> np.ndarray:
    if kind.kind == "charbonnier":
        return diff / np.sqrt(diff * diff + kind.epsilon * kind.epsilon)
    if kind.kind == "l1":
        return np.sign(diff)
    return 2.0 * diff


def loss(k_syn: DenseKernel, k_tgt: DenseKernel, kind: LossKind = LossKind()) -> float:
    """Pixel-summed loss between two impulse responses (smaller one zero-embedded)."""
    a, b = _common_canvas(k_syn, k_tgt)
    return _loss_value(a - b, kind)


# ---------------------------------------------------------------------------
# Parameter set: per layer an (N, 2) offset array and an (N,) weight parameter
# array (raw weights, or logits under softmax normalization)

def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _effective_weights(wparam: np.ndarray, weight_norm: str) -> np.ndarray:
    return _softmax(wparam) if weight_norm == "sofm" else wparam


def _params_from_complex(cpx: KernelComplex, weight_norm: str):
    params = []
    for lay in cpx.layers:
        if weight_norm == "sofm":
            wp = np.log(np.clip(lay.weights, 1e-12, None))
        else:
            wp = lay.weights.copy()
        params.append([lay.offsets.copy(), wp])
    return params


def _complex_from_params(params, weight_norm: str) -> KernelComplex:
    return KernelComplex(tuple(
        SparseLayer(off, _effective_weights(wp, weight_norm)) for off, wp in params
    ))


def _corner_shifts(img: np.ndarray, ox: float, oy: float):
    """Four integer-shifted reads around a fractional offset plus the fracs."""
    ix, iy = math.floor(ox), math.floor(oy)
    fx, fy = ox - ix, oy - iy
    s = []
    for dy in (0, 1):
        for dx in (0, 1):
            buf = np.zeros_like(img)
            h, w = img.shape
            a, b = ix + dx, iy + dy
            y0, y1 = max(0, -b), min(h, h - b)
            x0, x1 = max(0, -a), min(w, w - a)
            if y1 > y0 and x1 > x0:
                buf[y0:y1, x0:x1] = img[y0 + b:y1 + b, x0 + a:x1 + a]
            s.append(buf)
    s00, s10, s01, s11 = s
    return s00, s10, s01, s11, fx, fy


def _forward_ir(params, weight_norm: str, canvas: int):
    """Impulse response plus all per-layer intermediates (for the backward pass)."""
    img = np.zeros((canvas, canvas))
    img[canvas // 2, canvas // 2] = 1.0
    intermediates = [img]
    for li, (off, wp) in enumerate(params):
        weights = _effective_weights(wp, weight_norm)
        nxt = np.zeros_like(img)
        for (ox, oy), w in zip(off, weights):
            sample_shifted(img, ox, oy, w, nxt)
        if not np.all(np.isfinite(nxt)):
            bad = _first_nonfinite_sample(off, weights)
            raise OptimError(
                f"non-finite intermediate at layer {li}"
                + (f", sample {bad}" if bad is not None else " (accumulated overflow)")
            )
        intermediates.append(nxt)
        img = nxt
    return intermediates


def _first_nonfinite_sample(off: np.ndarray, weights: np.ndarray):
    bad = ~(np.all(np.isfinite(off), axis=1) & np.isfinite(weights))
    idx = np.nonzero(bad)[0]
    return int(idx[0]) if idx.size else None


def _backward_pass(params, weight_norm: str, intermediates, g_out: np.ndarray):
    """Gradients of the loss w.r.t. every offset and effective weight.

    The adjoint of a bilinear-gather layer is the same layer with negated
    offsets (the interpolation tent is symmetric), so the image gradient flows
    back through sample_shifted as well. Offset gradients use the derivative of
    the interpolation weights within the floor cell.
    """
    grads = []
    g = g_out
    for li in range(len(params) - 1, -1, -1):
        off, wp = params[li]
        weights = _effective_weights(wp, weight_norm)
        prev = intermediates[li]
        d_off = np.zeros_like(off)
        d_w = np.zeros_like(weights)
        for i, ((ox, oy), w) in enumerate(zip(off, weights)):
            s00, s10, s01, s11, fx, fy = _corner_shifts(prev, ox, oy)
            sample = ((1 - fx) * (1 - fy) * s00 + fx * (1 - fy) * s10
                      + (1 - fx) * fy * s01 + fx * fy * s11)
            ddx = (1 - fy) * (s10 - s00) + fy * (s11 - s01)
            ddy = (1 - fx) * (s01 - s00) + fx * (s11 - s10)
            d_w[i] = float(np.vdot(g, sample))
            d_off[i, 0] = w * float(np.vdot(g, ddx))
            d_off[i, 1] = w * float(np.vdot(g, ddy))
        if li > 0:
            g_prev = np.zeros_like(g)
            for (ox, oy), w in zip(off, weights):
                sample_shifted(g, -ox, -oy, w, g_prev)
            g = g_prev
        grads.append([d_off, d_w])
    grads.reverse()
    return grads


def _chain_weight_norm(grads, params, weight_norm: str):
    """Map d/d(effective weight) to d/d(weight parameter)."""
    if weight_norm != "sofm":
        return grads
    out = []
    for (d_off, d_w), (_, wp) in zip(grads, params):
        w = _softmax(wp)
        d_logit = w * (d_w - float(np.dot(d_w, w)))
        out.append([d_off, d_logit])
    return out


def backward(cpx: KernelComplex, k_tgt: DenseKernel, kind: LossKind = LossKind(),
             canvas: int | None = None):
    """Loss and its gradients over all (offset, weight) parameters of `cpx`.

    Returns (loss_value, grads) with grads[l] = (d_offsets (N,2), d_weights (N,)).
    """
    if canvas is None:
        canvas = max(auto_canvas(cpx), k_tgt.size)
    params = _params_from_complex(cpx, "none")
    intermediates = _forward_ir(params, "none", canvas)
    tgt = k_tgt.embedded(canvas).weights
    diff = intermediates[-1] - tgt
    value = _loss_value(diff, kind)
    grads = _backward_pass(params, "none", intermediates, _loss_grad(diff, kind))
    return value, [(d_off, d_w) for d_off, d_w in grads]


# ---------------------------------------------------------------------------
# Adam + constraint projections

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m=[[np.zeros_like(off), np.zeros_like(wp)] for off, wp in params],
            v=[[np.zeros_like(off), np.zeros_like(wp)] for off, wp in params],
        )


def _project_kws(params) -> None:
    sx = np.array(KWS_SX)
    sy = np.array(KWS_SY)
    for off, wp in params:
        n = off.shape[0]
        if n % 4 != 0:
            raise OptimError(f"KWS symmetry needs sample counts divisible by 4, got {n}")
        for g in range(n // 4):
            sl = slice(4 * g, 4 * g + 4)
            dx = float(np.mean(sx * off[sl, 0]))
            dy = float(np.mean(sy * off[sl, 1]))
            off[sl, 0] = sx * dx
            off[sl, 1] = sy * dy
            wp[sl] = wp[sl].mean()


def _project_sum(params) -> None:
    for li, (off, wp) in enumerate(params):
        s = float(wp.sum())
        if abs(s) < SUM_DEGENERACY_EPS:
            raise OptimError(
                f"SUM normalization degenerate at layer {li}: |weight sum| = {abs(s):.3e}"
            )
        wp /= s


def adam_step(params, grads, state: AdamState, step_index: int, cfg: TrainConfig,
              constraints: ConstraintConfig = ConstraintConfig(),
              offset_lr_scale: float = 1.0):
    """One Adam update with bias correction, then constraint projections.

    Returns the updated parameter list; moment arrays update in place and the
    state's step counter advances. `offset_lr_scale` optimizes offsets in
    scaled units (Adam's direction is invariant under parameter rescaling, so
    this is exactly Adam on offsets divided by the scale): one learning-rate
    schedule then serves targets of any spatial extent.
    """
    lr = cfg.lr_at(step_index)
    t = step_index + 1
    out = []
    for (off, wp), (g_off, g_wp), ms, vs in zip(params, grads, state.m, state.v):
        new = []
        for p, g, m, v, s in zip((off, wp), (g_off, g_wp), ms, vs,
                                 (offset_lr_scale, 1.0)):
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            new.append(p - s * lr * m_hat / (np.sqrt(v_hat) + cfg.eps))
        out.append(new)
    state.step = t
    if constraints.symmetry == "kws":
        _project_kws(out)
    if constraints.weight_norm == "sum":
        _project_sum(out)
    return out


# ---------------------------------------------------------------------------
# Fit loop

@dataclass
class FitResult:
    complex: KernelComplex
    trace: np.ndarray          # rows of (step, loss, lr)
    best_loss: float
    best_step: int
    initial_loss: float
    final_loss: float
    canvas: int

    @property
    def losses(self) -> np.ndarray:
        return self.trace[:, 1]


def fit(k_tgt: DenseKernel, layout, init, cfg: TrainConfig = TrainConfig(),
        constraints: ConstraintConfig = ConstraintConfig(),
        loss_kind: LossKind = LossKind()) -> FitResult:
    """Optimize a kernel complex against a target impulse response.

    `init` is an InitStrategy (resolved through the initializers module) or an
    explicit KernelComplex used as a warm start. Offsets are optimized in
    target-size-normalized units so the default learning-rate schedule covers
    kernels of any extent. Returns the best parameters seen across all steps,
    not merely the last iterate.
    """
    layout = parse_layout(layout)
    if constraints.symmetry == "kws" and any(n % 4 for n in layout):
        raise OptimError(f"KWS symmetry needs sample counts divisible by 4, got {layout}")
    if isinstance(init, KernelComplex):
        start = init
    else:
        from .initializers import build_init
        start = build_init(init, k_tgt, layout, kws=constraints.symmetry == "kws")
    if start.layout != layout:
        raise OptimError(f"init layout {start.layout} does not match requested {layout}")
    offset_lr_scale = float(k_tgt.size)

    params = _params_from_complex(start, constraints.weight_norm)
    if constraints.symmetry == "kws":
        _project_kws(params)
    if constraints.weight_norm == "sum":
        _project_sum(params)

    canvas = max(auto_canvas(_complex_from_params(params, constraints.weight_norm)),
                 k_tgt.size)
    tgt = k_tgt.embedded(canvas).weights

    state = AdamState.for_params(params)
    trace = []
    best_loss = math.inf
    best_params = None
    best_step = 0

    def embed_if_grown(cur):
        nonlocal canvas, tgt
        need = required_canvas(cur)
        if need > canvas:
            canvas = need + 4
            tgt = k_tgt.embedded(canvas).weights

    for step in range(cfg.steps):
        embed_if_grown(_complex_from_params(params, constraints.weight_norm))
        intermediates = _forward_ir(params, constraints.weight_norm, canvas)
        diff = intermediates[-1] - tgt
        value = _loss_value(diff, loss_kind)
        trace.append((step, value, cfg.lr_at(step)))
        if value < best_loss:
            best_loss = value
            best_step = step
            best_params = [[off.copy(), wp.copy()] for off, wp in params]
        grads = _backward_pass(params, constraints.weight_norm, intermediates,
                               _loss_grad(diff, loss_kind))
        grads = _chain_weight_norm(grads, params, constraints.weight_norm)
        params = adam_step(params, grads, state, step, cfg, constraints,
                           offset_lr_scale=offset_lr_scale)

    embed_if_grown(_complex_from_params(params, constraints.weight_norm))
    final_ir = _forward_ir(params, constraints.weight_norm, canvas)[-1]
    final_loss = _loss_value(final_ir - tgt, loss_kind)
    trace.append((cfg.steps, final_loss, cfg.lr_at(cfg.steps - 1)))
    if final_loss < best_loss:
        best_loss = final_loss
        best_step = cfg.steps
        best_params = [[off.copy(), wp.copy()] for off, wp in params]

    return FitResult(
        complex=_complex_from_params(best_params, constraints.weight_norm),
        trace=np.array(trace, dtype=np.float64),
        best_loss=best_loss,
        best_step=best_step,
        initial_loss=float(trace[0][1]),
        final_loss=final_loss,
        canvas=canvas,
    )


# ---------------------------------------------------------------------------
# Serialization

def theta_to_dict(cpx: KernelComplex) -> dict:
    return {
        "layers": [
            {
                "samples": [
                    {"ox": float(ox), "oy": float(oy), "w": float(w)}
                    for (ox, oy), w in zip(lay.offsets, lay.weights)
                ]
            }
            for lay in cpx.layers
        ]
    }


def theta_from_dict(doc: dict) -> KernelComplex:
    layers = []
    for lay in doc["layers"]:
        off = np.array([[s["ox"], s["oy"]] for s in lay["samples"]], dtype=np.float64)
        wts = np.array([s["w"] for s in lay["samples"]], dtype=np.float64)
        layers.append(SparseLayer(off, wts))
    return KernelComplex(tuple(layers))


def save_theta(cpx: KernelComplex, path) -> None:
    """JSON with shortest round-trip floats; load_theta restores bit-exactly."""
    with open(path, "w") as fh:
        json.dump(theta_to_dict(cpx), fh, indent=1)
        fh.write("\n")


def load_theta(path) -> KernelComplex:
    with open(path) as fh:
        return theta_from_dict(json.load(fh))


def write_trace_csv(trace: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,lr\n")
        for step, value, lr in trace:
            fh.write(f"{int(step)},{float(value)!r},{float(lr)!r}\n")
