"""Comparison baselines: separable low-rank decomposition and parallel tempering.

LowRank factors the target kernel through its SVD into rank-1 separable passes.
PST searches the same sparse offset/weight parameter space as the gradient fit
but with multi-chain Metropolis moves over a geometric temperature ladder and
periodic state swaps between adjacent chains; it shares the gradient method's
Charbonnier energy so results are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._fastpath import HAVE_NUMBA, ir_batch_compiled
from .engine import (
    KernelComplex,
    SparseLayer,
    auto_canvas,
    synthesize_ir_batch,
    _accum_shift,
)
from .kernels import DenseKernel, KernelError
from .initializers import InitStrategy, build_init
from .optim import LossKind, parse_layout

__all__ = [
    "LowRankFilter",
    "lowrank_decompose",
    "lowrank_filter",
    "PSTConfig",
    "PSTResult",
    "pst_fit",
]


@dataclass(frozen=True, eq=False)
class LowRankFilter:
    """Rank-r separable approximation: sum_k outer(u_k, v_k), singular values folded in."""

    us: np.ndarray  # (r, M) column factors (vertical pass kernels)
    vs: np.ndarray  # (r, M) row factors (horizontal pass kernels)

    @property
    def rank(self) -> int:
        return self.us.shape[0]

    @property
    def size(self) -> int:
        return self.us.shape[1]

    def reconstruct(self) -> DenseKernel:
        return DenseKernel(np.einsum("kj,ki->ji", self.us, self.vs))


def lowrank_decompose(k_tgt: DenseKernel, rank: int) -> LowRankFilter:
    """Keep the top `rank` singular triplets; sqrt(sigma) goes into both factors."""
    m = k_tgt.size
    if not 1 <= rank <= m:
        raise KernelError(f"rank must be in [1, {m}], got {rank}")
    try:
        u, s, vt = np.linalg.svd(k_tgt.weights)
    except np.linalg.LinAlgError as exc:
        raise KernelError(f"SVD did not converge: {exc}") from exc
    root = np.sqrt(s[:rank])
    return LowRankFilter(us=(u[:, :rank] * root).T, vs=vt[:rank] * root[:, None])


def _convolve_1d(img: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(img)
    r = taps.shape[0] // 2
    for j in range(-r, r + 1):
        if axis == 0:
            _accum_shift(out, img, 0, -j, taps[r + j])
        else:
            _accum_shift(out, img, -j, 0, taps[r + j])
    return out


def lowrank_filter(img: np.ndarray, f: LowRankFilter) -> np.ndarray:
    """r vertical + r horizontal passes; equals dense convolution with reconstruct()."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return np.stack([lowrank_filter(img[:, :, c], f) for c in range(img.shape[2])], axis=2)
    out = np.zeros_like(img)
    for k in range(f.rank):
        out += _convolve_1d(_convolve_1d(img, f.us[k], axis=0), f.vs[k], axis=1)
    return out


@dataclass(frozen=True)
class PSTConfig:
    chains: int = 10
    iterations: int = 10000
    t_max: float | None = None      # default 1e-2 * initial energy
    t_min: float | None = None      # default 1e-6 * initial energy
    sigma_offset: float | None = None  # default 0.05 * target size
    sigma_weight: float = 0.02
    swap_interval: int = 10
    seed: int = 0
    sum_normalize: bool = True

    def __post_init__(self):
        if self.chains < 2:
            raise KernelError(f"PST needs >= 2 chains, got {self.chains}")
        if self.iterations < 1:
            raise KernelError(f"PST needs >= 1 iteration, got {self.iterations}")
        if self.swap_interval < 1:
            raise KernelError(f"swap interval must be >= 1, got {self.swap_interval}")
        # equal temperatures allowed: a flat ladder is the zero-temperature limit
        if self.t_max is not None and self.t_min is not None and not self.t_max >= self.t_min >= 0:
            raise KernelError("temperature ladder must be decreasing (t_max >= t_min)")


@dataclass
class PSTResult:
    complex: KernelComplex
    best_energy: float
    trace: np.ndarray  # rows of (iter, best_energy, chain energies...)
    ladder: np.ndarray


def _ladder(t_max: float, t_min: float, chains: int) -> np.ndarray:
    if t_max <= 0 or t_min <= 0:
        raise KernelError("temperatures must be positive")
    ratio = t_min / t_max
    return t_max * ratio ** (np.arange(chains) / (chains - 1))


def _attempt_swaps(states_off, states_w, energies, ladder, rng):
    """Sequential adjacent-pair swap sweep; exchanges states, never duplicates."""
    for c in range(len(ladder) - 1):
        exponent = (1.0 / ladder[c] - 1.0 / ladder[c + 1]) * (energies[c] - energies[c + 1])
        prob = 1.0 if exponent >= 0 else math.exp(max(exponent, -745.0))
        if rng.uniform() < prob:
            states_off[[c, c + 1]] = states_off[[c + 1, c]]
            states_w[[c, c + 1]] = states_w[[c + 1, c]]
            energies[[c, c + 1]] = energies[[c + 1, c]]


def pst_fit(k_tgt: DenseKernel, layout, cfg: PSTConfig = PSTConfig(),
            init: InitStrategy = InitStrategy("ss"),
            loss_kind: LossKind = LossKind()) -> PSTResult:
    """Parallel simulated tempering over sparse offsets and weights.

    Every iteration each chain perturbs all parameters with Gaussian noise
    (weights renormalized to sum 1 when sum_normalize), accepts by Metropolis
    at its ladder temperature, and every swap_interval iterations adjacent
    chains exchange states. Returns the best parameters seen anywhere.
    """
    layout = parse_layout(layout)
    start = build_init(init, k_tgt, layout)
    nl = len(layout)
    nmax = max(layout)
    canvas = max(auto_canvas(start), k_tgt.size) + 6
    if canvas % 2 == 0:
        canvas += 1
    tgt = k_tgt.embedded(canvas).weights

    # (chains, L, Nmax) state arrays; ragged layouts padded with zero weights
    off = np.zeros((cfg.chains, nl, nmax, 2))
    wts = np.zeros((cfg.chains, nl, nmax))
    active = np.zeros((nl, nmax), dtype=bool)
    for l, lay in enumerate(start.layers):
        n = lay.sample_count
        off[:, l, :n] = lay.offsets
        wts[:, l, :n] = lay.weights
        active[l, :n] = True

    eps = loss_kind.epsilon
    synthesize = ir_batch_compiled if HAVE_NUMBA else synthesize_ir_batch

    def energies_of(off_batch, wts_batch):
        irs = synthesize(off_batch, wts_batch, canvas)
        diffs = irs - tgt[None]
        if loss_kind.kind == "charbonnier":
            e = np.sqrt(diffs * diffs + eps * eps).sum(axis=(1, 2))
        elif loss_kind.kind == "l1":
            e = np.abs(diffs).sum(axis=(1, 2))
        else:
            e = (diffs * diffs).sum(axis=(1, 2))
        # leak wall: proposals drifting off the canvas break sum(IR) = prod(sum w)
        # by the truncated mass; beyond energy resolution they become invalid
        expected = np.prod(wts_batch.sum(axis=2), axis=1)
        leak = np.abs(irs.sum(axis=(1, 2)) - expected) > 1e-6 * np.maximum(
            np.abs(expected), 1.0
        )
        e[leak] = np.inf
        return e

    energies = energies_of(off, wts)
    e_init = float(energies[0])
    t_scale = e_init if e_init > 0 else 1.0
    t_max = cfg.t_max if cfg.t_max is not None else 1e-2 * t_scale
    t_min = cfg.t_min if cfg.t_min is not None else 1e-6 * t_scale
    if not t_max >= t_min > 0:
        raise KernelError(f"bad temperature ladder: t_max={t_max}, t_min={t_min}")
    ladder = _ladder(t_max, t_min, cfg.chains) if t_max > t_min else np.full(cfg.chains, t_max)

    sigma_o = cfg.sigma_offset if cfg.sigma_offset is not None else 0.05 * k_tgt.size
    rng = np.random.default_rng(cfg.seed)

    best_energy = float(energies.min())
    best_idx = int(energies.argmin())
    best_off = off[best_idx].copy()
    best_w = wts[best_idx].copy()

    trace = np.empty((cfg.iterations, 2 + cfg.chains))
    for it in range(cfg.iterations):
        prop_off = off + rng.normal(0.0, sigma_o, size=off.shape)
        prop_w = wts + rng.normal(0.0, cfg.sigma_weight, size=wts.shape)
        prop_off[:, ~active] = 0.0
        prop_w[:, ~active] = 0.0
        if cfg.sum_normalize:
            sums = prop_w.sum(axis=2, keepdims=True)
            ok = np.abs(sums) >= 1e-8
            prop_w = np.where(ok, prop_w / np.where(ok, sums, 1.0), prop_w)
            bad_chain = ~ok.all(axis=(1, 2))
        else:
            bad_chain = np.zeros(cfg.chains, dtype=bool)
        e_prop = energies_of(prop_off, prop_w)
        e_prop[bad_chain] = np.inf
        de = e_prop - energies
        u = rng.uniform(size=cfg.chains)
        with np.errstate(over="ignore", invalid="ignore"):
            accept = (de <= 0) | (u < np.exp(-np.where(de > 0, de, 0.0) / ladder))
        accept &= np.isfinite(e_prop)
        off[accept] = prop_off[accept]
        wts[accept] = prop_w[accept]
        energies[accept] = e_prop[accept]

        e_min = float(energies.min())
        if e_min < best_energy:
            best_energy = e_min
            k = int(energies.argmin())
            best_off = off[k].copy()
            best_w = wts[k].copy()
        if (it + 1) % cfg.swap_interval == 0:
            _attempt_swaps(off, wts, energies, ladder, rng)
        trace[it, 0] = it
        trace[it, 1] = best_energy
        trace[it, 2:] = energies

    layers = tuple(
        SparseLayer(best_off[l, :n], best_w[l, :n]) for l, n in enumerate(layout)
    )
    return PSTResult(
        complex=KernelComplex(layers),
        best_energy=best_energy,
        trace=trace,
        ladder=ladder,
    )


def write_pst_trace_csv(trace: np.ndarray, path) -> None:
    chains = trace.shape[1] - 2
    with open(path, "w") as fh:
        fh.write("iter,best_energy," + ",".join(f"chain_{c}" for c in range(chains)) + "\n")
        for row in trace:
            fh.write(f"{int(row[0])}," + ",".join(repr(float(v)) for v in row[1:]) + "\n")
