"""Figure rendering for the report path; files only, no interactive backend."""

from __future__ import annotations

import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

import numpy as np  # noqa: E402


def _prepare(path: str):
    os.makedirs(os.path.dirname(str(path)) or ".", exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=120)
    return fig, ax


def density_figure(path, taus: Sequence[float], series: Mapping[str, Sequence[float]],
                   xlabel: str = "proper time", ylabel: str = "event density",
                   title: str | None = None) -> str:
    """One curve per labeled series over the proper-time grid."""
    fig, ax = _prepare(path)
    for label in sorted(series):
        ax.plot(taus, np.asarray(series[label], dtype=float), label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if series:
        ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)
    return str(path)


def sweep_figure(path, nodes: Sequence[int], errors: Mapping[str, Sequence[float]],
                 title: str | None = None) -> str:
    """Node-doubling error estimates on log-log axes.

    Zero errors (exactly converged scalars) are dropped from their curve
    rather than breaking the log scale.
    """
    fig, ax = _prepare(path)
    drew = False
    for label in sorted(errors):
        ns, errs = [], []
        for n, e in zip(nodes, errors[label]):
            if e > 0.0:
                ns.append(n)
                errs.append(e)
        if ns:
            ax.loglog(ns, errs, marker="o", label=str(label))
            drew = True
    ax.set_xlabel("quadrature nodes")
    ax.set_ylabel("node-doubling error estimate")
    if title:
        ax.set_title(title)
    if drew:
        ax.legend(loc="best", fontsize="small")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)
    return str(path)
