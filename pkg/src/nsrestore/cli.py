"""Command-line experiment runner.

Subcommands cover the full loop: build a prior, synthesize a degraded
measurement, restore it with one of the samplers, score the result, and
render report figures from the accumulated CSV.

Exit codes: 0 ok, 2 usage, 3 method/operator incompatibility, 4 I/O or
format failure, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shlex
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import baselines, formats, gmm, metrics, operators, report
from .denoiser import analytic_gmm_denoiser, external_denoiser
from .errors import (
    DimensionError,
    FormatError,
    IncompatibleError,
    NsError,
    NumericError,
    UsageError,
)
from .rng import RngStream
from .sampler import (
    RestorationProblem,
    SamplerParams,
    TimeTravelParams,
    run_ddnm,
    run_ddnm_plus,
)
from .schedule import build_schedule

METHODS = ("ddnm", "ddnm-plus", "ddpm", "repaint", "ilvr", "ddrm")

EXIT_USAGE = 2
EXIT_INCOMPATIBLE = 3
EXIT_IO = 4
EXIT_NUMERIC = 5


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(tok) for tok in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad dimension spec {text!r}; expected e.g. 3x16x16") from None
    if not dims or any(d <= 0 for d in dims):
        raise UsageError(f"dimensions must be positive, got {text!r}")
    return dims


def _write_outputs(out_path: str, tensor: np.ndarray, peak: float = 1.0) -> str | None:
    """Write a TEN1 file plus a netpbm companion when image-shaped."""
    formats.write_tensor(out_path, tensor)
    if tensor.ndim == 3 and tensor.shape[0] in (1, 3):
        stem = os.path.splitext(out_path)[0]
        preview = stem + (".pgm" if tensor.shape[0] == 1 else ".ppm")
        formats.write_image(preview, tensor, peak)
        return preview
    return None


def cmd_make_prior(args) -> int:
    dims = _parse_dims(args.dim)
    if len(dims) != 3:
        raise UsageError("--dim must be CxHxW for image priors")
    if args.scale < 0:
        raise UsageError("--scale must be nonnegative")
    prior = gmm.image_pattern_prior(dims, args.patterns, args.scale, seed=args.seed)
    gmm.write_prior(args.out, prior)
    print(f"wrote {args.out}: dim {prior.dim}, components {prior.K}")
    return 0


def cmd_degrade(args) -> int:
    x = formats.read_tensor(getattr(args, "in"))
    try:
        op = operators.build_operator(args.op, x.shape)
    except NsError as exc:
        raise type(exc)(f"operator spec {args.op!r}: {exc}") from exc
    if args.sigma_y < 0:
        raise UsageError("--sigma-y must be nonnegative")
    y = op.apply(x)
    if args.sigma_y > 0:
        y = y + args.sigma_y * RngStream(args.seed).gaussian(y.shape)
    preview = _write_outputs(args.out, y)
    msg = f"wrote {args.out} shape {tuple(y.shape)}"
    if preview:
        msg += f" (+ {preview})"
    print(msg)
    return 0


def _schedule_from_args(args):
    return build_schedule(args.T, args.beta_start, args.beta_end)


def _denoiser_from_args(args, shape, sched):
    if args.denoiser_cmd:
        return external_denoiser(shlex.split(args.denoiser_cmd), shape)
    if not args.prior:
        raise UsageError("--prior is required unless --denoiser-cmd is given")
    prior = gmm.read_prior(args.prior, shape=shape)
    return analytic_gmm_denoiser(prior, sched)


def _restore_one(args, seed: int, out_path: str) -> dict:
    sched = _schedule_from_args(args)
    shape = _parse_dims(args.dim) if args.dim else None
    y = formats.read_tensor(args.y) if args.y else None

    if args.method == "ddpm":
        if shape is None:
            raise UsageError("--dim is required for unconditional sampling")
        op = None
    else:
        if args.op is None:
            raise UsageError(f"--op is required for method {args.method}")
        if shape is None:
            if y is None:
                raise UsageError("need --dim or --y to determine the image shape")
            shape = tuple(y.shape)  # square operators: state shape equals y shape
        try:
            op = operators.build_operator(args.op, shape)
        except NsError as exc:
            raise type(exc)(f"operator spec {args.op!r}: {exc}") from exc
        if y is None:
            raise UsageError(f"--y is required for method {args.method}")

    den = _denoiser_from_args(args, shape, sched)
    steps = args.steps if args.steps else sched.T
    sp = SamplerParams(steps=steps, eta=args.eta, mode=args.mode, seed=seed)

    started = time.perf_counter()
    if args.method == "ddnm":
        problem = RestorationProblem(op=op, y=y, sigma_y=args.sigma_y)
        x0 = run_ddnm(problem, den, sched, sp)
    elif args.method == "ddnm-plus":
        problem = RestorationProblem(op=op, y=y, sigma_y=args.sigma_y)
        tt = TimeTravelParams(l=args.l, s=args.s, r=args.r)
        spectral = op.svd() if args.spectral else None
        x0 = run_ddnm_plus(problem, den, sched, sp, tt, spectral=spectral)
    elif args.method == "ddpm":
        x0 = baselines.run_ddpm_uncond(den, sched, RngStream(seed))
    elif args.method == "repaint":
        rp = baselines.RepaintParams(resample_counts=args.resample)
        x0 = baselines.run_repaint(y, op, den, sched, rp, RngStream(seed))
    elif args.method == "ilvr":
        x0 = baselines.run_ilvr(y, op, den, sched, RngStream(seed))
    elif args.method == "ddrm":
        problem = RestorationProblem(op=op, y=y, sigma_y=args.sigma_y)
        x0 = baselines.run_ddrm(problem, op.svd(), den, sched, args.eta, RngStream(seed))
    else:
        raise UsageError(f"unknown method {args.method!r}")
    wall_ms = (time.perf_counter() - started) * 1000.0

    preview = _write_outputs(out_path, x0)
    manifest = {
        "command": "restore",
        "method": args.method,
        "op": args.op,
        "y": args.y,
        "prior": args.prior,
        "denoiser_cmd": args.denoiser_cmd,
        "dim": list(shape) if shape else None,
        "T": args.T,
        "beta_start": args.beta_start,
        "beta_end": args.beta_end,
        "steps": steps,
        "eta": args.eta,
        "mode": args.mode,
        "sigma_y": args.sigma_y,
        "l": args.l,
        "s": args.s,
        "r": args.r,
        "resample": args.resample,
        "spectral": bool(args.spectral),
        "seed": seed,
        "out": out_path,
        "preview": preview,
        "ref": args.ref,
        "wall_ms": wall_ms,
    }
    if args.ref:
        ref = formats.read_tensor(args.ref)
        scores = {"psnr": metrics.psnr(ref, x0)}
        if x0.ndim == 3 and min(x0.shape[1:]) >= metrics.SSIM_WINDOW:
            scores["ssim"] = metrics.ssim(ref, x0)
        if op is not None and y is not None:
            scores["cons_l1"] = metrics.consistency(op, x0, y)
        manifest["metrics"] = scores
    with open(out_path + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _seed_out_path(base: str, seed: int, multi: bool) -> str:
    if not multi:
        return base
    stem, ext = os.path.splitext(base)
    return f"{stem}-s{seed}{ext}"


def cmd_restore(args) -> int:
    if args.replay:
        with open(args.replay, "r", encoding="utf-8") as fh:
            saved = json.load(fh)
        for key in (
            "method", "op", "y", "prior", "denoiser_cmd", "T", "beta_start", "beta_end",
            "steps", "eta", "mode", "sigma_y", "l", "s", "r", "resample", "spectral", "ref",
        ):
            setattr(args, key, saved[key])
        args.dim = "x".join(str(d) for d in saved["dim"]) if saved.get("dim") else None
        args.seeds = [saved["seed"]]
        if not args.out:
            args.out = saved["out"]
    if not args.out:
        raise UsageError("--out is required")
    seeds = args.seeds if args.seeds else [args.seed]
    multi = len(seeds) > 1
    jobs = max(1, args.jobs)
    if jobs == 1 or not multi:
        for seed in seeds:
            manifest = _restore_one(args, seed, _seed_out_path(args.out, seed, multi))
            print(f"seed {seed}: wrote {manifest['out']} ({manifest['wall_ms']:.0f} ms)")
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_restore_one, args, seed, _seed_out_path(args.out, seed, multi))
                for seed in seeds
            ]
            for fut in futures:
                manifest = fut.result()
                print(f"seed {manifest['seed']}: wrote {manifest['out']} ({manifest['wall_ms']:.0f} ms)")
    return 0


def cmd_eval(args) -> int:
    ref = formats.read_tensor(args.ref)
    out = formats.read_tensor(args.out)
    if ref.shape != out.shape:
        raise DimensionError(f"ref {ref.shape} vs out {out.shape}")
    row = {
        "id": args.id or os.path.splitext(os.path.basename(args.out))[0],
        "method": "",
        "psnr": format(metrics.psnr(ref, out), ".6g"),
        "ssim": "",
        "cons_l1": "",
        "wall_ms": "",
        "seed": "",
    }
    if out.ndim == 3 and min(out.shape[1:]) >= metrics.SSIM_WINDOW:
        row["ssim"] = format(metrics.ssim(ref, out), ".6g")
    if args.op and args.y:
        y = formats.read_tensor(args.y)
        op = operators.build_operator(args.op, out.shape)
        row["cons_l1"] = format(metrics.consistency(op, out, y), ".6g")
    manifest_path = args.out + ".json"
    if os.path.isfile(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        row["method"] = manifest.get("method", "")
        if manifest.get("wall_ms") is not None:
            row["wall_ms"] = format(manifest["wall_ms"], ".6g")
        if manifest.get("seed") is not None:
            row["seed"] = str(manifest["seed"])

    csv_dir = os.path.dirname(os.path.abspath(args.csv))
    if not os.path.isdir(csv_dir):
        raise FormatError(f"CSV directory does not exist: {csv_dir}")
    existing = []
    if os.path.isfile(args.csv):
        with open(args.csv, newline="", encoding="utf-8") as fh:
            existing = list(csv.reader(fh))
        if existing and existing[0] != report.EVAL_COLUMNS:
            raise FormatError(f"{args.csv} has unexpected columns {existing[0]}")
    tmp_path = args.csv + ".tmp"
    with open(tmp_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if existing:
            writer.writerows(existing)
        else:
            writer.writerow(report.EVAL_COLUMNS)
        writer.writerow([row[col] for col in report.EVAL_COLUMNS])
    os.replace(tmp_path, args.csv)
    print(f"appended {row['id']} to {args.csv}")
    return 0


def cmd_report(args) -> int:
    created = report.render_report(args.csv, args.outdir)
    for path in created:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsrestore",
        description="Zero-shot linear inverse-problem restoration with diffusion priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-prior", help="write a GMM1 image-pattern prior")
    p.add_argument("--dim", required=True, help="image shape CxHxW, e.g. 3x16x16")
    p.add_argument("--patterns", type=int, default=8)
    p.add_argument("--scale", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_prior)

    p = sub.add_parser("degrade", help="apply an operator (plus noise) to a TEN1 tensor")
    p.add_argument("--op", required=True, help="operator spec, e.g. avgpool:4")
    p.add_argument("--in", dest="in", required=True, metavar="TEN1")
    p.add_argument("--sigma-y", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("restore", help="run a restoration method")
    p.add_argument("--method", choices=METHODS, default="ddnm")
    p.add_argument("--op", help="operator spec (filter spec for ilvr)")
    p.add_argument("--y", help="measurement TEN1 (reference tensor for ilvr)")
    p.add_argument("--prior", help="GMM1 prior backing the analytic denoiser")
    p.add_argument("--denoiser-cmd", help="external denoiser command (TEN1 exchange)")
    p.add_argument("--dim", help="state shape CxHxW; defaults to the y shape")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--steps", type=int, help="sampling steps (default: T)")
    p.add_argument("--eta", type=float, default=0.85)
    p.add_argument("--mode", choices=("ddpm", "ddim"), default="ddim")
    p.add_argument("--sigma-y", type=float, default=0.0)
    p.add_argument("--l", type=int, default=0, help="travel length")
    p.add_argument("--s", type=int, default=1, help="travel interval")
    p.add_argument("--r", type=int, default=1, help="travel repeats")
    p.add_argument("--resample", type=int, default=1, help="repaint resampling rounds")
    p.add_argument("--spectral", action="store_true", help="per-singular-value scaling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, nargs="+", help="run several seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for --seeds")
    p.add_argument("--out", help="output TEN1 path")
    p.add_argument("--ref", help="ground-truth TEN1 for manifest metrics")
    p.add_argument("--replay", help="re-run the parameters of a saved manifest")
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("eval", help="append a metric row to a CSV")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--op")
    p.add_argument("--y")
    p.add_argument("--csv", required=True)
    p.add_argument("--id")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render figures + summary from an eval CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IncompatibleError, DimensionError) as exc:
        print(f"incompatible: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
