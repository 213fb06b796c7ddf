"""Static SVG figures with reproducible bytes (fixed hash salt, no date stamp)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "wavekin"
matplotlib.rcParams["path.simplify"] = False


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return Path(path)


def error_vs_time(report, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if report.experiment == "flatness":
        ax.plot(report.times, report.summary["flatness"], "o-", label="sup |F_K - g0|")
        ax.plot(report.times, report.summary["kinetic_drift"], "s--", label="kinetic drift")
        ax.axhline(0.25 * report.summary["g0_sup"], color="gray", lw=0.8, label="25% of sup g0")
    else:
        ax.plot(report.times, report.sup_error, "o-", label="sup-cell error")
        ax.plot(report.times, 4 * report.stderr.max(axis=1), ":", label="4 x max stderr")
    ax.set_xlabel("t")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def _cell_image(nodes, values):
    xs = np.unique(np.round(nodes[:, 0], 12))
    ys = np.unique(np.round(nodes[:, 1], 12))
    img = np.full((len(ys), len(xs)), np.nan)
    ix = np.searchsorted(xs, np.round(nodes[:, 0], 12))
    iy = np.searchsorted(ys, np.round(nodes[:, 1], 12))
    img[iy, ix] = values
    return xs, ys, img


def cell_heatmaps(report, path, s=-1):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5), sharey=True)
    vmax = float(np.nanmax(np.abs(np.concatenate([report.F_mc[s], report.F_kin[s]])))) or 1.0
    for ax, vals, title in ((axes[0], report.F_mc[s], "F (ensemble)"),
                            (axes[1], report.F_kin[s], "f (kinetic)")):
        xs, ys, img = _cell_image(report.nodes, vals)
        h = xs[1] - xs[0] if len(xs) > 1 else 1.0
        im = ax.imshow(img, origin="lower", cmap="RdBu_r", vmin=-vmax, vmax=vmax,
                       extent=(xs[0], xs[-1] + h, ys[0], ys[-1] + h), aspect="auto")
        ax.set_title(f"{title}, t={report.times[s]:.3g}", fontsize=9)
        ax.set_xlabel("K_x")
    axes[0].set_ylabel("K_y")
    fig.colorbar(im, ax=axes, shrink=0.8)
    return _save(fig, path)


def lambda_convergence(lams, errors, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    lams = np.asarray(lams, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ax.loglog(lams, errors, "o-", label="sup |f_lambda - f_res|")
    if len(lams):
        ref = errors[0] * np.sqrt(lams / lams[0])
        ax.loglog(lams, ref, "--", color="gray", label="slope 1/2")
    ax.set_xlabel("lambda")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def report_figures(report, outdir):
    out = Path(outdir)
    return [error_vs_time(report, out / "error_vs_time.svg"),
            cell_heatmaps(report, out / "cells.svg")]
