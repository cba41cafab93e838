"""Command-line surface: optimize kernels, run baselines, filter images,
build/apply spatially varying bases, benchmark, and emit comparison reports.

Config precedence: CLI flags > --config file (key=value lines) > defaults.
SPARSEKERN_THREADS caps how many compare cells run concurrently.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels as K
from .baselines import PSTConfig, lowrank_decompose, lowrank_filter, pst_fit, write_pst_trace_csv
from .engine import apply_complex, dense_convolve, psnr, sse, synthesize_ir
from .initializers import InitStrategy
from .optim import (
    ConstraintConfig,
    LossKind,
    TrainConfig,
    fit,
    load_theta,
    parse_layout,
    save_theta,
    write_trace_csv,
)
from .svfilter import (
    FilterBasis,
    build_basis,
    load_basis,
    save_basis,
    sv_filter,
    sv_ground_truth,
)

LOSS_NAMES = {"charb": "charbonnier", "l1": "l1", "l2": "l2"}


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("SPARSEKERN_THREADS", "1")))
    except ValueError:
        return 1


def _layout_arg(text: str):
    try:
        return parse_layout(text)
    except Exception as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _params_arg(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad parameter list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty parameter list")
    return vals


def _kernel_list_arg(text: str):
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsekern",
        description="Sparse kernel decomposition and spatially varying filtering.",
    )
    parser.add_argument("--config", help="key=value config file (flags override it)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help=argparse.SUPPRESS)

    p_opt = sub.add_parser("optimize", help="fit a sparse kernel complex to a target")
    common(p_opt)
    p_opt.add_argument("--kernel", required=True, help="target spec, e.g. gaussian:5")
    p_opt.add_argument("--layout", type=_layout_arg, default=(4,) * 12, help="LxN")
    p_opt.add_argument("--init", choices=["rand", "ir", "ss", "ss-ir"], default="ss-ir")
    p_opt.add_argument("--loss", choices=sorted(LOSS_NAMES), default="charb")
    p_opt.add_argument("--norm", choices=["none", "sum", "sofm"], default="sum")
    p_opt.add_argument("--sym", choices=["none", "kws"], default="none")
    p_opt.add_argument("--steps", type=int, default=1000)

    p_pst = sub.add_parser("pst", help="parallel simulated tempering baseline")
    common(p_pst)
    p_pst.add_argument("--kernel", required=True)
    p_pst.add_argument("--layout", type=_layout_arg, default=(4,) * 12)
    p_pst.add_argument("--init", choices=["rand", "ir", "ss", "ss-ir"], default="ss")
    p_pst.add_argument("--loss", choices=sorted(LOSS_NAMES), default="charb")
    p_pst.add_argument("--chains", type=int, default=10)
    p_pst.add_argument("--iters", type=int, default=10000)
    p_pst.add_argument("--swap-interval", type=int, default=10)
    p_pst.add_argument("--sigma-offset", type=float, default=None)
    p_pst.add_argument("--sigma-weight", type=float, default=0.02)
    p_pst.add_argument("--tmax", type=float, default=None)
    p_pst.add_argument("--tmin", type=float, default=None)

    p_lr = sub.add_parser("lowrank", help="separable low-rank decomposition")
    common(p_lr)
    p_lr.add_argument("--kernel", required=True)
    p_lr.add_argument("--rank", type=int, default=3)

    p_f = sub.add_parser("filter", help="filter an image")
    common(p_f)
    p_f.add_argument("--image", required=True)
    p_f.add_argument("--theta", help="optimized complex JSON")
    p_f.add_argument("--kernel", help="dense kernel spec (oracle path)")
    p_f.add_argument("--rank", type=int, help="low-rank filtering of --kernel")

    p_svb = sub.add_parser("sv-build", help="fit a basis over a parameter range")
    common(p_svb)
    p_svb.add_argument("--kernel", required=True,
                       help="family shape; --params fills its first parameter")
    p_svb.add_argument("--params", type=_params_arg, required=True)
    p_svb.add_argument("--layout", type=_layout_arg, default=(4,) * 12)
    p_svb.add_argument("--init", choices=["rand", "ir", "ss", "ss-ir"], default="ss-ir")
    p_svb.add_argument("--loss", choices=sorted(LOSS_NAMES), default="charb")
    p_svb.add_argument("--norm", choices=["none", "sum", "sofm"], default="sum")
    p_svb.add_argument("--sym", choices=["none", "kws"], default="none")
    p_svb.add_argument("--steps", type=int, default=1000)
    p_svb.add_argument("--no-warm-start", action="store_true")

    p_sva = sub.add_parser("sv-apply", help="spatially varying filtering")
    common(p_sva)
    p_sva.add_argument("--image", required=True)
    p_sva.add_argument("--basis", required=True)
    p_sva.add_argument("--pmap", required=True,
                       help="PGM map; values scale linearly onto the basis range")

    p_b = sub.add_parser("bench", help="wall-clock benchmarks")
    common(p_b)
    p_b.add_argument("--image", required=True)
    p_b.add_argument("--kernel", help="dense oracle target (enables dense/lowrank rows)")
    p_b.add_argument("--theta", help="sparse complex JSON (else radial init of --layout)")
    p_b.add_argument("--layout", type=_layout_arg, default=(4,) * 12)
    p_b.add_argument("--rank", type=int, default=3)
    p_b.add_argument("--basis", help="basis JSON (enables sv rows; needs --pmap)")
    p_b.add_argument("--pmap")
    p_b.add_argument("--params", type=_params_arg,
                     help="family parameters for the sv ground-truth row")
    p_b.add_argument("--reps", type=int, default=5)

    p_c = sub.add_parser("compare", help="methods x kernels report with CSV + SVG")
    common(p_c)
    p_c.add_argument("--kernel", type=_kernel_list_arg, required=True,
                     help="comma-separated kernel specs")
    p_c.add_argument("--methods", type=_kernel_list_arg, default=["ours", "pst", "lowrank"])
    p_c.add_argument("--layout", type=_layout_arg, default=(4,) * 12)
    p_c.add_argument("--init", choices=["rand", "ir", "ss", "ss-ir"], default="ss-ir")
    p_c.add_argument("--loss", choices=sorted(LOSS_NAMES), default="charb")
    p_c.add_argument("--norm", choices=["none", "sum", "sofm"], default="sum")
    p_c.add_argument("--sym", choices=["none", "kws"], default="none")
    p_c.add_argument("--steps", type=int, default=1000)
    p_c.add_argument("--chains", type=int, default=10)
    p_c.add_argument("--iters", type=int, default=10000)
    p_c.add_argument("--rank", type=int, default=3)
    return parser


def _apply_config_file(parser, argv):
    """Config file values become parser defaults; explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    overrides = {}
    with open(known.config) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            overrides[key.strip().replace("-", "_")] = value.strip()
    for action in parser._subparsers._group_actions[0].choices.values():
        usable = {}
        for act in action._actions:
            name = act.dest
            if name in overrides:
                raw = overrides[name]
                if act.type is not None:
                    usable[name] = act.type(raw)
                elif isinstance(act.default, bool) or isinstance(act, argparse._StoreTrueAction):
                    usable[name] = raw.lower() in ("1", "true", "yes")
                elif isinstance(act.default, int):
                    usable[name] = int(raw)
                elif isinstance(act.default, float):
                    usable[name] = float(raw)
                else:
                    usable[name] = raw
        action.set_defaults(**usable)


def _train_config(args) -> TrainConfig:
    return TrainConfig(steps=args.steps, seed=args.seed)


def _constraints(args) -> ConstraintConfig:
    return ConstraintConfig(weight_norm=args.norm, symmetry=args.sym)


def _loss_kind(args) -> LossKind:
    return LossKind(LOSS_NAMES[args.loss])


def _target(args) -> K.DenseKernel:
    return K.generate_kernel(K.KernelSpec.parse(args.kernel))


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _family_from_spec(text: str):
    """Kernel family: the swept parameter fills the shape's first slot."""
    head = text.split(":")
    shape = head[0].lower()
    if shape in ("gaussian", "disk", "heart"):
        return lambda p: K.KernelSpec(shape, (float(p),))
    if shape in ("polygon", "star"):
        if len(head) < 2:
            raise K.KernelError(f"family {shape} needs a side count, e.g. {shape}:6")
        n = int(head[1])
        return lambda p: K.KernelSpec(shape, (n, float(p)))
    if shape == "ring":
        if len(head) < 2:
            raise K.KernelError("ring family needs an inner/outer ratio, e.g. ring:0.6")
        ratio = float(head[1])
        if not 0 < ratio < 1:
            raise K.KernelError(f"ring family ratio must be in (0,1), got {ratio}")
        return lambda p: K.KernelSpec("ring", (ratio * float(p), float(p)))
    raise K.KernelError(f"shape {shape!r} cannot be used as a 1-parameter family")


def _ir_psnr(cpx, target) -> float:
    ir = synthesize_ir(cpx)
    size = max(ir.size, target.size)
    return psnr(target.embedded(size).weights, ir.embedded(size).weights)


def _ir_sse(cpx, target) -> float:
    ir = synthesize_ir(cpx)
    size = max(ir.size, target.size)
    return sse(target.embedded(size).weights, ir.embedded(size).weights)


def cmd_optimize(args) -> int:
    out = _outdir(args)
    target = _target(args)
    t0 = time.perf_counter()
    result = fit(target, args.layout, InitStrategy(args.init, seed=args.seed),
                 _train_config(args), _constraints(args), _loss_kind(args))
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    save_theta(result.complex, os.path.join(out, "theta.json"))
    K.save_kernel_image(synthesize_ir(result.complex), os.path.join(out, "ir.pgm"))
    write_trace_csv(result.trace, os.path.join(out, "trace.csv"))
    layout_txt = f"{len(args.layout)}x{args.layout[0]}"
    print("kernel,layout,init,final_loss,psnr_ir,time_ms")
    print(f"{args.kernel},{layout_txt},{args.init},{result.best_loss!r},"
          f"{_ir_psnr(result.complex, target)!r},{elapsed_ms:.1f}")
    return 0


def cmd_pst(args) -> int:
    out = _outdir(args)
    target = _target(args)
    cfg = PSTConfig(chains=args.chains, iterations=args.iters, t_max=args.tmax,
                    t_min=args.tmin, sigma_offset=args.sigma_offset,
                    sigma_weight=args.sigma_weight, swap_interval=args.swap_interval,
                    seed=args.seed)
    t0 = time.perf_counter()
    result = pst_fit(target, args.layout, cfg, InitStrategy(args.init, seed=args.seed),
                     _loss_kind(args))
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    save_theta(result.complex, os.path.join(out, "theta.json"))
    write_pst_trace_csv(result.trace, os.path.join(out, "trace.csv"))
    layout_txt = f"{len(args.layout)}x{args.layout[0]}"
    print("kernel,layout,init,best_energy,psnr_ir,time_ms")
    print(f"{args.kernel},{layout_txt},{args.init},{result.best_energy!r},"
          f"{_ir_psnr(result.complex, target)!r},{elapsed_ms:.1f}")
    return 0


def cmd_lowrank(args) -> int:
    out = _outdir(args)
    target = _target(args)
    f = lowrank_decompose(target, args.rank)
    recon = f.reconstruct()
    err = float(np.linalg.norm(recon.weights - target.weights))
    with open(os.path.join(out, "factors.json"), "w") as fh:
        json.dump({
            "rank": f.rank,
            "us": [[float(v) for v in row] for row in f.us],
            "vs": [[float(v) for v in row] for row in f.vs],
        }, fh, indent=1)
        fh.write("\n")
    peak = recon.weights.max()
    if peak > 0:
        K.save_kernel_image(K.DenseKernel(np.clip(recon.weights, 0, None)),
                            os.path.join(out, "recon.pgm"))
    print("kernel,rank,frobenius_error")
    print(f"{args.kernel},{args.rank},{err!r}")
    return 0


def cmd_filter(args) -> int:
    out = _outdir(args)
    img = K.read_image(args.image)
    if args.theta:
        result = apply_complex(img, load_theta(args.theta))
    elif args.kernel:
        target = _target(args)
        if args.rank:
            result = lowrank_filter(img, lowrank_decompose(target, args.rank))
        else:
            result = dense_convolve(img, target)
    else:
        print("filter needs --theta or --kernel", file=sys.stderr)
        return 1
    suffix = ".ppm" if result.ndim == 3 else ".pgm"
    path = os.path.join(out, "filtered" + suffix)
    K.write_image(result, path)
    print(f"wrote {path}")
    return 0


def cmd_sv_build(args) -> int:
    out = _outdir(args)
    family = _family_from_spec(args.kernel)
    basis = build_basis(family, args.params, args.layout, _train_config(args),
                        _constraints(args), InitStrategy(args.init, seed=args.seed),
                        _loss_kind(args), warm_start=not args.no_warm_start)
    path = os.path.join(out, "basis.json")
    save_basis(basis, path)
    print("param,ir_sum")
    for p, f in zip(basis.params, basis.filters):
        print(f"{float(p)!r},{float(synthesize_ir(f).weights.sum())!r}")
    print(f"wrote {path}")
    return 0


def _scaled_pmap(path, basis: FilterBasis) -> np.ndarray:
    raw = K.read_image(path)
    if raw.ndim != 2:
        raise K.KernelError("parameter maps must be grayscale PGM")
    lo, hi = float(basis.params[0]), float(basis.params[-1])
    return lo + raw * (hi - lo)


def cmd_sv_apply(args) -> int:
    out = _outdir(args)
    basis = load_basis(args.basis)
    img = K.read_image(args.image)
    shape2d = img.shape[:2]
    pmap = _scaled_pmap(args.pmap, basis)
    if pmap.shape != shape2d:
        raise K.KernelError(f"pmap {pmap.shape} must match image {shape2d}")
    result = sv_filter(img, basis, pmap)
    suffix = ".ppm" if result.ndim == 3 else ".pgm"
    path = os.path.join(out, "sv" + suffix)
    K.write_image(result, path)
    print(f"wrote {path}")
    return 0


def _median_time(fn, reps: int):
    times = []
    value = None
    for _ in range(reps):
        t0 = time.perf_counter()
        value = fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times)), value


def cmd_bench(args) -> int:
    out = _outdir(args)
    img = K.read_image(args.image)
    rows = []
    reference = None
    if args.kernel:
        target = _target(args)
        t_dense, reference = _median_time(lambda: dense_convolve(img, target), args.reps)
        rows.append(("dense", 1, target.size * target.size, t_dense, psnr(reference, reference)))
        f = lowrank_decompose(target, args.rank)
        t_lr, lr_out = _median_time(lambda: lowrank_filter(img, f), args.reps)
        rows.append(("lowrank", 2 * args.rank, 2 * args.rank * target.size, t_lr,
                     psnr(reference, lr_out)))
    if args.theta:
        cpx = load_theta(args.theta)
    else:
        from .initializers import radial_init
        cpx = radial_init(args.layout, target.size if args.kernel else 33)
    t_sparse, sparse_out = _median_time(lambda: apply_complex(img, cpx), args.reps)
    q = psnr(reference, sparse_out) if reference is not None else float("nan")
    rows.append(("sparse", cpx.layer_count, cpx.total_samples, t_sparse, q))
    if args.basis and args.pmap:
        basis = load_basis(args.basis)
        pmap = _scaled_pmap(args.pmap, basis)
        t_sv, sv_out = _median_time(lambda: sv_filter(img, basis, pmap), args.reps)
        if args.kernel:
            family = _family_from_spec(args.kernel)
            t_gt, gt_out = _median_time(lambda: sv_ground_truth(img, family, pmap),
                                        args.reps)
            rows.append(("sv_ground_truth", 1, 0, t_gt, 99.0))
            rows.append(("sv_filter", len(basis.layout), sum(basis.layout), t_sv,
                         psnr(gt_out, sv_out)))
        else:
            rows.append(("sv_filter", len(basis.layout), sum(basis.layout), t_sv,
                         float("nan")))
    path = os.path.join(out, "bench.csv")
    with open(path, "w") as fh:
        if args.reps == 1:
            fh.write("# repetitions=1 noisy\n")
        fh.write("method,layers,samples,latency_ms,psnr_db\n")
        for method, layers, samples, latency, quality in rows:
            fh.write(f"{method},{layers},{samples},{latency:.3f},{quality:.3f}\n")
    with open(path) as fh:
        print(fh.read().rstrip())
    return 0


def _compare_cell(spec_text, method, args):
    target = K.generate_kernel(K.KernelSpec.parse(spec_text))
    t0 = time.perf_counter()
    if method == "ours":
        res = fit(target, args.layout, InitStrategy(args.init, seed=args.seed),
                  _train_config(args), _constraints(args), _loss_kind(args))
        cpx = res.complex
        budget = f"{len(args.layout)}x{args.layout[0]}"
    elif method == "pst":
        cfg = PSTConfig(chains=args.chains, iterations=args.iters, seed=args.seed)
        cpx = pst_fit(target, args.layout, cfg,
                      InitStrategy("ss", seed=args.seed), _loss_kind(args)).complex
        budget = f"{len(args.layout)}x{args.layout[0]}"
    elif method == "lowrank":
        f = lowrank_decompose(target, args.rank)
        recon = f.reconstruct()
        latency = (time.perf_counter() - t0) * 1e3
        size = max(recon.size, target.size)
        a = target.embedded(size).weights
        b = recon.embedded(size).weights
        return (spec_text, method, f"rank{args.rank}", psnr(a, b), sse(a, b), latency, "ok")
    else:
        raise K.KernelError(f"unknown method {method!r}")
    latency = (time.perf_counter() - t0) * 1e3
    return (spec_text, method, budget, _ir_psnr(cpx, target), _ir_sse(cpx, target),
            latency, "ok")


def _write_svg_bars(path, rows) -> None:
    """Grouped bar chart of impulse-response PSNR per (kernel, method)."""
    kernels = sorted({r[0] for r in rows})
    methods = sorted({r[1] for r in rows})
    fills = {m: f for m, f in zip(methods, ("#4878a8", "#b05a5a", "#6a9a58", "#8868a8"))}
    width, height, margin = 640, 360, 48
    ok_rows = [r for r in rows if r[6] == "ok"]
    peak = max((r[3] for r in ok_rows), default=1.0)
    peak = max(peak, 1.0)
    group_w = (width - 2 * margin) / max(len(kernels), 1)
    bar_w = group_w / (len(methods) + 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{margin - 40}" y="{margin}" font-size="11">{peak:.0f} dB</text>',
    ]
    for gi, kname in enumerate(kernels):
        gx = margin + gi * group_w
        parts.append(
            f'<text x="{gx + group_w / 2:.1f}" y="{height - margin + 16}" '
            f'font-size="11" text-anchor="middle">{kname}</text>'
        )
        for mi, m in enumerate(methods):
            cell = next((r for r in rows if r[0] == kname and r[1] == m), None)
            if cell is None or cell[6] != "ok":
                continue
            h = (height - 2 * margin) * (cell[3] / peak)
            x = gx + (mi + 0.5) * bar_w
            parts.append(
                f'<rect x="{x:.1f}" y="{height - margin - h:.1f}" width="{bar_w * 0.9:.1f}" '
                f'height="{h:.1f}" fill="{fills[m]}"/>'
            )
    for mi, m in enumerate(methods):
        parts.append(
            f'<rect x="{margin + mi * 110}" y="{12}" width="10" height="10" '
            f'fill="{fills[m]}"/><text x="{margin + mi * 110 + 14}" y="22" '
            f'font-size="11">{m}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def cmd_compare(args) -> int:
    out = _outdir(args)
    cells = [(spec, method) for spec in args.kernel for method in args.methods]

    def run(cell):
        spec_text, method = cell
        try:
            return _compare_cell(spec_text, method, args)
        except Exception as exc:  # record the failure, keep the run going
            return (spec_text, method, "-", float("nan"), float("nan"), float("nan"),
                    f"error: {exc}")

    workers = thread_cap()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(c) for c in cells]
    rows.sort(key=lambda r: (r[0], r[1]))
    csv_path = os.path.join(out, "compare.csv")
    with open(csv_path, "w") as fh:
        fh.write("kernel,method,budget,ir_psnr_db,sse,latency_ms,status\n")
        for spec_text, method, budget, q, s, latency, status in rows:
            fh.write(f"{spec_text},{method},{budget},{q!r},{s!r},{latency:.1f},{status}\n")
    _write_svg_bars(os.path.join(out, "compare.svg"), rows)
    with open(csv_path) as fh:
        print(fh.read().rstrip())
    return 0 if all(r[6] == "ok" for r in rows) else 1


COMMANDS = {
    "optimize": cmd_optimize,
    "pst": cmd_pst,
    "lowrank": cmd_lowrank,
    "filter": cmd_filter,
    "sv-build": cmd_sv_build,
    "sv-apply": cmd_sv_apply,
    "bench": cmd_bench,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (K.KernelError, OSError, ValueError, RuntimeError) as exc:
        print(f"sparsekern: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
