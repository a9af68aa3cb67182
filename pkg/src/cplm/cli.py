"""Command-line front end.

Subcommands: decompose (tensor/image/synthetic -> CPD3 model + trace +
summary), reconstruct (CPD3 -> tensor or image), compare (classic vs
modified solver on one input, matched init), bench (grid of random
tensors -> CSV), info (version/backend or file inspection).

Exit codes: 0 success, 1 usage, 2 unreadable or malformed input,
3 unwritable output, 4 solver divergence.

Settings resolve as: command-line flags, then a JSON ``--config`` file,
then built-in defaults.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from contextlib import nullcontext

import numpy as np

from . import __version__, backend
from .errors import DivergenceError, FormatError
from .image import (
    image_to_tensor,
    psnr,
    PSNR_CAP_DB,
    read_image,
    tensor_to_image,
    write_image,
)
from .model import (
    CpModel,
    compression_percent,
    cp_reconstruct,
    read_cpd3,
    write_cpd3,
)
from .optimizer import LmConfig, run
from .tensor import DenseTensor3, read_tns3, write_tns3

_IMAGE_SUFFIXES = (".png", ".ppm", ".pnm")
_TENSOR_SUFFIXES = (".tns3", ".tns")

# key -> (cast, default); None flag values defer to config then default
_SETTINGS = {
    "rank": (int, None),
    "method": (str, "mlm"),
    "max_iters": (int, 200),
    "tol": (float, 0.0),
    "rel_tol": (float, 0.0),
    "grad_tol": (float, 1e-12),
    "step_tol": (float, 1e-12),
    "mu0": (float, None),
    "nu0": (float, 2.0),
    "gamma": (float, 0.0),
    "seed": (int, 0),
    "data_seed": (int, 0),
    "true_rank": (int, None),
    "scale": (str, "unit"),
    "threads": (int, None),
    "methods": (str, "lm,mlm"),
}


class _CliError(Exception):
    """Carries the process exit code alongside the message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_dims(text: str):
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected IxJxK")
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected IxJxK")
    return tuple(parts)


def _parse_int_list(text: str):
    try:
        return [int(p) for p in text.split(",") if p != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}")


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _build_parser() -> _Parser:
    parser = _Parser(prog="cplm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cplm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    inp = _Parser(add_help=False)
    inp.add_argument("input", nargs="?", help="TNS3 tensor or PNG/PPM image path")
    inp.add_argument(
        "--synthetic",
        type=_parse_dims,
        metavar="IxJxK",
        help="generate a random tensor instead of reading a file",
    )
    inp.add_argument(
        "--true-rank",
        type=int,
        help="build the synthetic tensor from this many random rank-one terms",
    )
    inp.add_argument("--data-seed", type=int, help="seed for synthetic data (default 0)")
    inp.add_argument(
        "--scale",
        choices=("unit", "byte"),
        help="image sample scaling: unit=[0,1], byte=[0,255] (default unit)",
    )

    solver = _Parser(add_help=False)
    solver.add_argument("--rank", type=int, help="CP rank R")
    solver.add_argument("--method", choices=("lm", "mlm"), help="solver (default mlm)")
    solver.add_argument("--max-iters", type=int, help="iteration cap (default 200)")
    solver.add_argument("--tol", type=float, help="absolute residual-norm tolerance")
    solver.add_argument("--rel-tol", type=float, help="residual tolerance relative to the data norm")
    solver.add_argument("--grad-tol", type=float, help="max-norm gradient tolerance")
    solver.add_argument("--step-tol", type=float, help="relative step-size tolerance")
    solver.add_argument("--mu0", type=float, help="initial damping (default: scaled from J^T J)")
    solver.add_argument("--nu0", type=float, help="damping growth multiplier (default 2)")
    solver.add_argument("--gamma", type=float, help="gain-ratio acceptance threshold (default 0)")
    solver.add_argument("--seed", type=int, help="factor initialization seed (default 0)")
    solver.add_argument("--config", help="JSON file with default settings")
    solver.add_argument("--threads", type=int, help="cap BLAS thread count")

    p = sub.add_parser(
        "decompose", parents=[inp, solver], help="fit a rank-R CP model"
    )
    p.add_argument("--out", help="CPD3 model output path")
    p.add_argument("--trace", help="per-iteration CSV output path")
    p.add_argument("--summary", help="summary JSON output path")
    p.add_argument(
        "--trace-timing",
        action="store_true",
        help="record wall times in the trace CSV (breaks byte-reproducibility)",
    )
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser(
        "reconstruct", help="expand a CPD3 model to a tensor or image"
    )
    p.add_argument("model", help="CPD3 model path")
    p.add_argument("--out", required=True, help="output path (.tns3, .png or .ppm)")
    p.add_argument("--scale", choices=("unit", "byte"))
    p.add_argument("--reference", help="tensor or image to report residual against")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser(
        "compare", parents=[inp, solver], help="run classic and modified solvers head to head"
    )
    p.add_argument("--out", help="comparison table CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser(
        "bench", parents=[solver], help="benchmark a grid of random tensors"
    )
    p.add_argument("--dims", type=_parse_dims, action="append", metavar="IxJxK")
    p.add_argument("--ranks", type=_parse_int_list, metavar="R1,R2,...")
    p.add_argument("--seeds", type=_parse_int_list, metavar="S1,S2,...")
    p.add_argument("--methods", help="comma list of solvers to run (default lm,mlm)")
    p.add_argument("--out", help="benchmark CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("info", help="describe the install or inspect a data file")
    p.add_argument("path", nargs="?", help="TNS3/CPD3/PNG/PPM file to inspect")
    p.set_defaults(func=cmd_info)

    return parser


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise _CliError(2, f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise _CliError(2, f"malformed config {path}: {exc}")
    if not isinstance(raw, dict):
        raise _CliError(2, f"config {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(_SETTINGS) - {"grid"})
    if unknown:
        raise _CliError(1, f"unknown config keys: {', '.join(unknown)}")
    return raw


def _effective(args) -> tuple[dict, dict]:
    """Merge flags over config-file values over defaults."""
    config = {}
    if getattr(args, "config", None):
        config = _load_config_file(args.config)
    eff = {}
    for key, (cast, default) in _SETTINGS.items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, default)
        try:
            eff[key] = None if value is None else cast(value)
        except (TypeError, ValueError):
            raise _CliError(1, f"bad value for {key}: {value!r}")
    if eff["scale"] not in ("unit", "byte"):
        raise _CliError(1, f"scale must be unit or byte, got {eff['scale']!r}")
    return eff, config


def _lm_config(eff: dict, method: str | None = None) -> LmConfig:
    try:
        return LmConfig(
            max_iters=eff["max_iters"],
            tol=eff["tol"],
            rel_tol=eff["rel_tol"],
            grad_tol=eff["grad_tol"],
            step_tol=eff["step_tol"],
            mu0=eff["mu0"],
            nu0=eff["nu0"],
            gamma=eff["gamma"],
            seed=eff["seed"],
            method=method or eff["method"],
        )
    except ValueError as exc:
        raise _CliError(1, str(exc))


def _synthetic_tensor(dims, true_rank, data_seed) -> DenseTensor3:
    if true_rank is not None:
        return cp_reconstruct(CpModel.random_uniform(dims, true_rank, data_seed))
    rng = np.random.default_rng(np.random.SeedSequence(data_seed))
    I, J, K = dims
    return DenseTensor3(dims, rng.random(I * J * K))


def _load_input(args, eff) -> tuple[DenseTensor3, str]:
    """Resolve the single input source to a tensor."""
    if (args.input is None) == (args.synthetic is None):
        raise _CliError(1, "exactly one of INPUT or --synthetic is required")
    if args.synthetic is not None:
        dims = args.synthetic
        seed = eff["data_seed"] if eff["data_seed"] is not None else 0
        label = "x".join(str(d) for d in dims)
        return (
            _synthetic_tensor(dims, eff["true_rank"], seed),
            f"synthetic:{label}:seed={seed}:true_rank={eff['true_rank']}",
        )
    path = args.input
    low = path.lower()
    try:
        if low.endswith(_TENSOR_SUFFIXES):
            return read_tns3(path), path
        if low.endswith(_IMAGE_SUFFIXES):
            return image_to_tensor(read_image(path), eff["scale"]), path
    except (OSError, FormatError) as exc:
        raise _CliError(2, f"cannot load {path}: {exc}")
    raise _CliError(2, f"unrecognized input type: {path}")


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _write(fn, *a, **kw):
    try:
        fn(*a, **kw)
    except OSError as exc:
        raise _CliError(3, f"cannot write output: {exc}")


def cmd_decompose(args) -> int:
    eff, _ = _effective(args)
    if eff["rank"] is None:
        raise _CliError(1, "--rank is required")
    observed, source = _load_input(args, eff)
    cfg = _lm_config(eff)
    try:
        with _threads(eff["threads"]):
            model, trace, reason = run(observed, eff["rank"], cfg)
    except DivergenceError as exc:
        raise _CliError(4, str(exc))
    I, J, K = observed.dims
    comp = compression_percent(I, J, K, eff["rank"])
    if not comp.storage_reduced:
        print(
            f"warning: rank {eff['rank']} stores no less than the dense tensor",
            file=sys.stderr,
        )
    summary = trace.summary(
        rank=eff["rank"],
        seed=eff["seed"],
        dims=[I, J, K],
        input=source,
        scale=eff["scale"],
        compression_percent=comp.percent,
        compression_displayed=comp.displayed,
        storage_reduced=comp.storage_reduced,
        backend=backend.BACKEND,
    )
    if args.out:
        _write(write_cpd3, model, args.out)
    if args.trace:
        _write(trace.write_csv, args.trace, include_timing=args.trace_timing)
    if args.summary:
        _write(trace.write_summary, args.summary, **{
            k: v for k, v in summary.items() if k not in trace.summary()
        })
    print(json.dumps(summary, indent=2))
    return 0


def _load_reference(path: str, scale: str) -> DenseTensor3:
    low = path.lower()
    try:
        if low.endswith(_TENSOR_SUFFIXES):
            return read_tns3(path)
        if low.endswith(_IMAGE_SUFFIXES):
            return image_to_tensor(read_image(path), scale)
    except (OSError, FormatError) as exc:
        raise _CliError(2, f"cannot load {path}: {exc}")
    raise _CliError(2, f"unrecognized reference type: {path}")


def cmd_reconstruct(args) -> int:
    scale = args.scale or "unit"
    try:
        model = read_cpd3(args.model)
    except (OSError, FormatError) as exc:
        raise _CliError(2, f"cannot load {args.model}: {exc}")
    recon = cp_reconstruct(model)
    out_low = args.out.lower()
    if out_low.endswith(_IMAGE_SUFFIXES):
        if model.dims[2] != 3:
            raise _CliError(
                2, f"model dims {model.dims} have no channel mode; image output needs K=3"
            )
        _write(write_image, tensor_to_image(recon, scale), args.out)
    else:
        _write(write_tns3, recon, args.out)
    if args.reference:
        ref = _load_reference(args.reference, scale)
        if ref.dims != recon.dims:
            raise _CliError(
                2, f"reference dims {ref.dims} do not match model dims {recon.dims}"
            )
        err = (ref - recon).norm()
        rel = err / ref.norm() if ref.norm() > 0 else float("inf")
        print(f"residual_fro={_fmt(err)}")
        print(f"residual_rel={_fmt(rel)}")
        if args.reference.lower().endswith(_IMAGE_SUFFIXES) and out_low.endswith(
            _IMAGE_SUFFIXES
        ):
            db = psnr(read_image(args.reference), tensor_to_image(recon, scale))
            print(f"psnr_db={_fmt(min(db, PSNR_CAP_DB))}")
    return 0


_COMPARE_COLUMNS = (
    "method,status,iters,jacobian_builds,residual_evals,"
    "final_residual,reason,wall_seconds,compression_percent"
)


def cmd_compare(args) -> int:
    eff, _ = _effective(args)
    if eff["rank"] is None:
        raise _CliError(1, "--rank is required")
    observed, source = _load_input(args, eff)
    I, J, K = observed.dims
    comp = compression_percent(I, J, K, eff["rank"])
    rows = []
    diverged = False
    for method in ("lm", "mlm"):
        cfg = _lm_config(eff, method=method)
        try:
            with _threads(eff["threads"]):
                _, trace, reason = run(observed, eff["rank"], cfg)
            rows.append(
                dict(
                    method=method,
                    status="ok",
                    iters=len(trace),
                    jacobian_builds=trace.jacobian_builds,
                    residual_evals=trace.residual_evals,
                    final_residual=trace.final_residual,
                    reason=reason,
                    wall_seconds=trace.total_seconds,
                    compression_percent=comp.percent,
                )
            )
        except DivergenceError as exc:
            diverged = True
            rows.append(
                dict(
                    method=method,
                    status="diverged",
                    iters=0,
                    jacobian_builds=0,
                    residual_evals=0,
                    final_residual=float("nan"),
                    reason=str(exc),
                    wall_seconds=0.0,
                    compression_percent=comp.percent,
                )
            )
    print(f"input: {source}  rank: {eff['rank']}  seed: {eff['seed']}")
    hdr = f"{'method':8} {'status':8} {'iters':>6} {'builds':>7} {'evals':>6} {'residual':>14} {'seconds':>9}  reason"
    print(hdr)
    for r in rows:
        print(
            f"{r['method']:8} {r['status']:8} {r['iters']:>6} {r['jacobian_builds']:>7} "
            f"{r['residual_evals']:>6} {r['final_residual']:>14.6g} "
            f"{r['wall_seconds']:>9.3f}  {r['reason']}"
        )
    if args.out:
        lines = [_COMPARE_COLUMNS]
        for r in rows:
            lines.append(
                f"{r['method']},{r['status']},{r['iters']},{r['jacobian_builds']},"
                f"{r['residual_evals']},{_fmt(r['final_residual'])},{r['reason']},"
                f"{_fmt(r['wall_seconds'])},{_fmt(r['compression_percent'])}"
            )
        from ._util import atomic_write_text

        _write(atomic_write_text, args.out, "\n".join(lines) + "\n")
    return 4 if diverged else 0


_BENCH_COLUMNS = (
    "I,J,K,rank,seed,method,status,iters,reason,final_residual,"
    "compression_percent,compression_displayed,seconds"
)


def _bench_grid(args, config) -> list[dict]:
    if "grid" in config:
        grid = config["grid"]
        if not isinstance(grid, list):
            raise _CliError(2, "config grid must be a list")
        cells = []
        for cell in grid:
            try:
                dims = tuple(int(d) for d in cell["dims"])
                ranks = [int(r) for r in cell["ranks"]]
                seeds = [int(s) for s in cell["seeds"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise _CliError(2, f"bad grid cell {cell!r}: {exc}")
            if len(dims) != 3 or min(dims) < 1:
                raise _CliError(2, f"bad grid dims {dims}")
            cells.append(dict(dims=dims, ranks=ranks, seeds=seeds))
        return cells
    if args.dims:
        ranks = args.ranks or []
        seeds = args.seeds if args.seeds is not None else [0]
        return [dict(dims=d, ranks=ranks, seeds=seeds) for d in args.dims]
    return []


def cmd_bench(args) -> int:
    eff, config = _effective(args)
    cells = _bench_grid(args, config)
    methods = [m.strip() for m in eff["methods"].split(",") if m.strip()]
    for m in methods:
        if m not in ("lm", "mlm"):
            raise _CliError(1, f"unknown method {m!r} in --methods")
    runs = [
        (cell["dims"], rank, seed, method)
        for cell in cells
        for rank in cell["ranks"]
        for seed in cell["seeds"]
        for method in methods
    ]
    if not runs:
        raise _CliError(1, "benchmark grid is empty")
    lines = [_BENCH_COLUMNS]
    for dims, rank, seed, method in runs:
        I, J, K = dims
        comp = compression_percent(I, J, K, rank)
        label = f"{I}x{J}x{K} rank={rank} seed={seed} method={method}"
        observed = _synthetic_tensor(dims, None, seed)
        cfg = dataclasses.replace(_lm_config(eff, method=method), seed=seed)
        t0 = time.perf_counter()
        try:
            with _threads(eff["threads"]):
                _, trace, reason = run(observed, rank, cfg)
            status, iters, final = "ok", len(trace), trace.final_residual
        except DivergenceError as exc:
            status, iters, final, reason = "diverged", 0, float("nan"), str(exc)
        seconds = time.perf_counter() - t0
        print(f"{label}: {status} residual={final:.6g} {seconds:.2f}s", file=sys.stderr)
        lines.append(
            f"{I},{J},{K},{rank},{seed},{method},{status},{iters},{reason},"
            f"{_fmt(final)},{_fmt(comp.percent)},{comp.displayed},{_fmt(seconds)}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        from ._util import atomic_write_text

        _write(atomic_write_text, args.out, text)
    else:
        print(text, end="")
    return 0


def _sniff(path: str) -> list[str]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise _CliError(2, f"cannot read {path}: {exc}")
    if magic == b"TNS3":
        t = read_tns3(path)
        I, J, K = t.dims
        return [
            "type: TNS3 tensor",
            f"dims: {I}x{J}x{K}",
            f"entries: {I * J * K}",
            f"frobenius_norm: {_fmt(t.norm())}",
        ]
    if magic == b"CPD3":
        m = read_cpd3(path)
        I, J, K = m.dims
        comp = compression_percent(I, J, K, m.rank)
        return [
            "type: CPD3 model",
            f"dims: {I}x{J}x{K}",
            f"rank: {m.rank}",
            f"compression_percent: {_fmt(comp.percent)}",
        ]
    img = read_image(path)
    return [
        "type: image",
        f"size: {img.width}x{img.height}",
    ]


def cmd_info(args) -> int:
    if args.path is None:
        print(f"cplm {__version__}")
        print(f"kernel backend: {backend.BACKEND}")
        print(f"available backends: {', '.join(sorted(backend.available_backends()))}")
        return 0
    try:
        lines = _sniff(args.path)
    except FormatError as exc:
        raise _CliError(2, f"cannot parse {args.path}: {exc}")
    for line in lines:
        print(line)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"cplm: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
