"""Report artifacts: CSV tables, SVG plots, and run manifests.

Every figure goes out as a self-contained SVG with hashed ids salted by a
fixed string and no embedded creation date, so reruns with equal inputs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import platform
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "pledgespec"

_PALETTE = ("#30566b", "#b3552e", "#5a8a4c", "#7a5c8e", "#9a7d2e")


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return path


def write_manifest(outdir: Path, command: str, args: dict) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "args": {k: v for k, v in sorted(args.items())},
        "versions": {
            "python": platform.python_version(),
            "numpy": __import__("numpy").__version__,
            "matplotlib": matplotlib.__version__,
            "pledgespec": __import__("pledgespec").__version__,
        },
    }
    path = outdir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def save_figure(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_histogram(counts: dict[int, int], path: Path,
                   title: str = "Class distribution") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ks = sorted(counts)
    ax.bar([str(k) for k in ks], [counts[k] for k in ks], color=_PALETTE[0])
    ax.set_xlabel("specificity class")
    ax.set_ylabel("sentences")
    ax.set_title(title)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_training_curve(epochs: list[int], train_loss: list[float],
                        val_mmae: list[float], path: Path) -> Path:
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    ax1.plot(epochs, train_loss, color=_PALETTE[0], label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color=_PALETTE[0])
    ax2 = ax1.twinx()
    ax2.plot(epochs, val_mmae, color=_PALETTE[1], label="val MMAE")
    ax2.set_ylabel("val MMAE", color=_PALETTE[1])
    fig.tight_layout()
    return save_figure(fig, path)


def plot_ratio_curves(ratios: list[float], mmae: list[float],
                      rho: list[float], path: Path) -> Path:
    """Prediction quality against the labeled-data ratio."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ax1.plot(ratios, mmae, marker="o", color=_PALETTE[0])
    ax1.set_xlabel("labeled ratio (%)")
    ax1.set_ylabel("MMAE")
    ax1.invert_yaxis()
    ax2.plot(ratios, rho, marker="o", color=_PALETTE[1])
    ax2.set_xlabel("labeled ratio (%)")
    ax2.set_ylabel("Spearman rho")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_positions(variants: dict[str, dict[str, float]],
                   gold: dict[str, float], path: Path) -> Path:
    """Recovered positions per variant over manifestos ordered by gold."""
    order = sorted(gold, key=gold.get)
    xs = range(len(order))
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(xs, [gold[m] for m in order], color="black", lw=1.5, label="gold")
    for i, (name, positions) in enumerate(sorted(variants.items())):
        ax.plot(xs, [positions[m] for m in order], marker=".", lw=0.8,
                color=_PALETTE[i % len(_PALETTE)], label=name)
    ax.set_xlabel("manifesto (ordered by gold position)")
    ax.set_ylabel("position")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_salience(areas: list[str], ll_s: list[float], ll_c: list[float],
                  path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    x = range(len(areas))
    width = 0.38
    ax.bar([i - width / 2 for i in x], ll_s, width, color=_PALETTE[0],
           label="specificity features")
    ax.bar([i + width / 2 for i in x], ll_c, width, color=_PALETTE[1],
           label="count features")
    ax.set_xticks(list(x))
    ax.set_xticklabels(areas, rotation=20)
    ax.set_ylabel("log-likelihood")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return save_figure(fig, path)


def environment_line() -> str:
    return (f"python {platform.python_version()} on {sys.platform}, "
            f"numpy {__import__('numpy').__version__}")
