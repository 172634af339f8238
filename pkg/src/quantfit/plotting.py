"""Report figures rendered next to the CSV outputs (headless backend)."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .distributions import QuantileFunction
from .experiments import ResultRow
from .staircase import StaircaseApproximation


def _series(rows: list[ResultRow], metric_filter) -> dict:
    """(experiment, seed, metric) -> sorted (steps, values) arrays."""
    grouped = defaultdict(list)
    for r in rows:
        if metric_filter(r.metric):
            grouped[(r.experiment, r.seed, r.metric)].append((r.step, r.value))
    out = {}
    for key, pairs in grouped.items():
        pairs.sort()
        steps = np.array([p[0] for p in pairs])
        values = np.array([p[1] for p in pairs])
        out[key] = (steps, values)
    return out


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def staircase_overlay(
    qf: QuantileFunction,
    approximations: dict[str, StaircaseApproximation],
    path: str,
    title: str = "",
) -> str:
    """The target quantile curve with one staircase per labeled scheme."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ps = np.linspace(1e-4, 1.0 - 1e-4, 513)
    ax.plot(ps, [qf.evaluate(p) for p in ps], "k-", lw=1.5, label="target")
    for label, approx in approximations.items():
        ax.stairs(approx.values, approx.fractions.boundaries, label=label, lw=1.2)
    ax.set_xlabel("fraction")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def w1_bars(rows: list[ResultRow], path: str) -> str:
    """Grouped bars of the three schemes per (distribution, segment count)."""
    schemes = ("w1_optimized", "w1_equally_spaced", "w1_random_mean")
    table = defaultdict(dict)
    for r in rows:
        if r.metric in schemes:
            table[(r.experiment, r.step)][r.metric] = r.value
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(table)), 4))
    if table:
        cells = sorted(table)
        xs = np.arange(len(cells))
        width = 0.27
        for k, scheme in enumerate(schemes):
            vals = [table[c].get(scheme, np.nan) for c in cells]
            ax.bar(xs + (k - 1) * width, vals, width, label=scheme[3:])
        ax.set_xticks(xs)
        ax.set_xticklabels(
            [f"{exp.split('/', 1)[-1]}\nN={n}" for exp, n in cells], fontsize=7
        )
        ax.set_yscale("log")
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center")
    ax.set_ylabel("W1")
    return _finish(fig, path)


def optimize_traces(rows: list[ResultRow], path: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    series = _series(rows, lambda m: m == "w1")
    for (exp, seed, _), (steps, values) in sorted(series.items()):
        ax.plot(steps, values, label=f"{exp} seed {seed}", lw=1.0)
    if series:
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center")
    ax.set_xlabel("step")
    ax.set_ylabel("W1")
    return _finish(fig, path)


def learning_curves(rows: list[ResultRow], path: str) -> str:
    """Loss, action values, evaluation return, and ground-truth W1 panels."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = [
        (axes[0, 0], lambda m: m == "loss", "loss", "log"),
        (axes[0, 1], lambda m: m.startswith("q_action_"), "Q estimate", "linear"),
        (axes[1, 0], lambda m: m == "eval_return", "eval return", "linear"),
        (axes[1, 1], lambda m: m == "w1_start", "W1 vs ground truth", "log"),
    ]
    for ax, keep, ylabel, scale in panels:
        series = _series(rows, keep)
        for (exp, seed, metric), (steps, values) in sorted(series.items()):
            label = f"{exp.split('/', 1)[-1]} s{seed}"
            if metric.startswith("q_action_"):
                label += f" a{metric.rsplit('_', 1)[-1]}"
            ax.plot(steps, values, label=label, lw=1.0)
        if series:
            if scale == "log" and all(np.all(v > 0) for _, v in series.values()):
                ax.set_yscale("log")
            ax.legend(fontsize=6)
        ax.set_xlabel("update")
        ax.set_ylabel(ylabel)
    return _finish(fig, path)


def rel_err_histogram(rows: list[ResultRow], path: str, threshold: float = 1e-4) -> str:
    values = np.array(
        [r.value for r in rows if r.metric in ("max_rel_err", "rel_err")], dtype=float
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    if values.size:
        floored = np.maximum(values, 1e-16)
        bins = np.logspace(np.log10(floored.min()) - 0.5, np.log10(floored.max()) + 0.5, 40)
        ax.hist(floored, bins=bins)
        ax.set_xscale("log")
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center")
    ax.axvline(threshold, color="r", ls="--", label=f"tolerance {threshold:g}")
    ax.set_xlabel("relative error")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    return _finish(fig, path)
