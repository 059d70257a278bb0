"""Render metric figures and a summary table from an evaluation CSV.

Reads rows appended by the eval command (id, method, psnr, ssim, cons_l1,
wall_ms, seed), aggregates them per method, and writes PNG figures plus a
summary CSV next to them.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import FormatError

EVAL_COLUMNS = ["id", "method", "psnr", "ssim", "cons_l1", "wall_ms", "seed"]


def read_eval_rows(csv_path) -> list[dict]:
    if not os.path.isfile(csv_path):
        raise FormatError(f"no such CSV: {csv_path}")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if reader.fieldnames is None or reader.fieldnames[:2] != ["id", "method"]:
        raise FormatError(f"{csv_path} does not look like an eval CSV")
    return rows


def _collect(rows, field):
    by_method = defaultdict(list)
    for row in rows:
        raw = (row.get(field) or "").strip()
        if not raw:
            continue
        try:
            by_method[row["method"]].append(float(raw))
        except ValueError:
            continue
    return by_method


def _bar_figure(by_method, ylabel, title, path, log=False):
    methods = sorted(by_method)
    means = [float(np.mean(by_method[m])) for m in methods]
    stds = [float(np.std(by_method[m])) for m in methods]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(methods)), 3.2))
    ax.bar(methods, means, yerr=stds, capsize=3, color="#4878a8")
    if log:
        ax.set_yscale("log")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(csv_path, outdir) -> list[str]:
    """Write figures and summary.csv; returns the created file paths."""
    rows = read_eval_rows(csv_path)
    os.makedirs(outdir, exist_ok=True)
    created = []

    psnr_by = _collect(rows, "psnr")
    ssim_by = _collect(rows, "ssim")
    cons_by = _collect(rows, "cons_l1")
    wall_by = _collect(rows, "wall_ms")

    if psnr_by:
        path = os.path.join(outdir, "psnr_by_method.png")
        _bar_figure(psnr_by, "PSNR (dB)", "Reconstruction fidelity", path)
        created.append(path)
    if cons_by:
        path = os.path.join(outdir, "consistency_by_method.png")
        positive = {m: v for m, v in cons_by.items() if any(x > 0 for x in v)}
        _bar_figure(
            cons_by,
            "sum |A x0 - y|",
            "Measurement consistency",
            path,
            log=bool(positive) and all(min(v) > 0 for v in positive.values()),
        )
        created.append(path)
    if psnr_by and ssim_by:
        path = os.path.join(outdir, "psnr_vs_ssim.png")
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        for method in sorted(psnr_by):
            xs, ys = [], []
            for row in rows:
                if row["method"] != method:
                    continue
                try:
                    xs.append(float(row["psnr"]))
                    ys.append(float(row["ssim"]))
                except (ValueError, KeyError):
                    continue
            if xs:
                ax.scatter(xs, ys, label=method, s=14, alpha=0.8)
        ax.set_xlabel("PSNR (dB)")
        ax.set_ylabel("SSIM")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        created.append(path)

    summary_path = os.path.join(outdir, "summary.csv")
    methods = sorted(set(psnr_by) | set(ssim_by) | set(cons_by) | set(wall_by))
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "n", "psnr_mean", "psnr_std", "ssim_mean", "cons_mean", "wall_ms_mean"]
        )
        for method in methods:
            psnrs = psnr_by.get(method, [])
            writer.writerow(
                [
                    method,
                    len(psnrs),
                    _fmt(np.mean(psnrs)) if psnrs else "",
                    _fmt(np.std(psnrs)) if psnrs else "",
                    _fmt(np.mean(ssim_by[method])) if ssim_by.get(method) else "",
                    _fmt(np.mean(cons_by[method])) if cons_by.get(method) else "",
                    _fmt(np.mean(wall_by[method])) if wall_by.get(method) else "",
                ]
            )
    created.append(summary_path)
    return created


def _fmt(v) -> str:
    return format(float(v), ".6g")
