"""Run artifacts: JSON report, per-step CSV, figures and grayscale map dumps.

The JSON report is written with sorted keys and no timestamps, so identical
runs produce byte-identical files. Figures are rendered with the Agg
backend straight to PNG; the plain-text P2 dump is a lossy, eyeball-friendly
export of a single token map.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DimensionError
from .metrics import RunReport
from .numerics import Tensor
from .pairing import TokenGroups


def report_to_dict(report: RunReport) -> dict:
    steps = []
    for rec in report.records:
        entry: dict = {"step": rec.step}
        if rec.loss is not None:
            entry["loss"] = rec.loss
        entry["binding"] = rec.binding
        entry["separation"] = rec.separation
        entry["scatter"] = rec.scatter
        steps.append(entry)
    return {
        "seed": report.seed,
        "guided": report.guided,
        "config": report.config,
        "steps": steps,
        "final_maps": {
            "shape": list(report.final_maps.shape),
            "data": report.final_maps.data.reshape(-1).tolist(),
        },
    }


def write_report(report: RunReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def write_metrics_csv(report: RunReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "binding", "separation", "scatter"])
        for rec in report.records:
            writer.writerow([
                rec.step,
                "" if rec.loss is None else repr(rec.loss),
                "" if rec.binding is None else repr(rec.binding),
                "" if rec.separation is None else repr(rec.separation),
                "" if rec.scatter is None else repr(rec.scatter),
            ])


def export_map(map_tensor: Tensor, path: str | Path) -> None:
    """Write one h x w map as a plain-text P2 grayscale image.

    The map's maximum is scaled to 255 and its minimum to 0 (a constant map
    becomes all zeros); values round half away from zero.
    """
    if map_tensor.ndim != 2:
        raise DimensionError(f"export_map: need a rank-2 map, got shape {map_tensor.shape}")
    values = map_tensor.data
    span = values.max() - values.min()
    if span == 0.0:
        pixels = np.zeros(values.shape, dtype=np.int64)
    else:
        scaled = (values - values.min()) / span * 255.0
        pixels = np.floor(scaled + 0.5).astype(np.int64)
    h, w = values.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(int(p)) for p in row) for row in pixels]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _steps_with(report: RunReport, attr: str):
    xs, ys = [], []
    for rec in report.records:
        value = getattr(rec, attr)
        if value is not None:
            xs.append(rec.step)
            ys.append(value)
    return xs, ys


def render_run_figures(report: RunReport, groups: TokenGroups, out_dir: str | Path) -> list[Path]:
    """Render loss/score curves and the final token maps; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    xs, ys = _steps_with(report, "loss")
    if ys:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(xs, ys, marker=".", lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("contrastive loss")
        ax.set_title("per-step loss (last refinement iteration)")
        fig.tight_layout()
        path = out_dir / "loss_curve.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for attr, style in (("binding", "-"), ("separation", "--"), ("scatter", ":")):
        xs, ys = _steps_with(report, attr)
        if ys:
            ax.plot(xs, ys, style, label=attr)
    ax.set_xlabel("step")
    ax.set_ylabel("score")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    ax.set_title("attention scores per step")
    fig.tight_layout()
    path = out_dir / "scores.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    tokens = groups.all_tokens()
    maps = report.final_maps.data
    if maps.size and tokens:
        fig, axes = plt.subplots(1, len(tokens), figsize=(2.2 * len(tokens), 2.6))
        if len(tokens) == 1:
            axes = [axes]
        for ax, tok in zip(axes, tokens):
            ax.imshow(maps[:, :, tok], cmap="gray", vmin=0.0)
            ax.set_title(f"token {tok}", fontsize=9)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.suptitle("final attention maps")
        fig.tight_layout()
        path = out_dir / "token_maps.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def write_ablation_csv(rows: list[dict], path: str | Path) -> None:
    """One aggregated row per temperature: tau, seeds, mean final scores."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "seeds", "binding_mean", "separation_mean"])
        for row in rows:
            writer.writerow([
                repr(row["tau"]), row["seeds"],
                repr(row["binding_mean"]), repr(row["separation_mean"]),
            ])


def write_ablation_runs_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "seed", "binding", "separation"])
        for row in rows:
            writer.writerow([repr(row["tau"]), row["seed"],
                             repr(row["binding"]), repr(row["separation"])])


def render_ablation_figure(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    taus = [row["tau"] for row in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(taus, [row["binding_mean"] for row in rows], "o-", label="binding (higher better)")
    ax.plot(taus, [row["separation_mean"] for row in rows], "s--", label="separation (lower better)")
    ax.set_xlabel("temperature")
    ax.set_ylabel("final score (mean over seeds)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
