"""Optional PNG figures next to the CSV outputs (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("figures need matplotlib: pip install 'artifact[figures]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_field(path, field_, title: str = "") -> Path:
    """Colour map of a field over the first two chart coordinates.

    Higher-dimensional charts are sliced through the middle node of the
    remaining coordinates.
    """
    plt = _pyplot()
    chart = field_.chart
    vals = np.asarray(field_.values)
    while vals.ndim > 2:
        vals = np.take(vals, vals.shape[-1] // 2, axis=-1)
    (a0, b0), (a1, b1) = chart.box[0], chart.box[1]
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(vals.T, origin="lower", aspect="auto", extent=(a0, b0, a1, b1), cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel(chart.coords[0])
    ax.set_ylabel(chart.coords[1])
    ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_convergence(path, levels, order=None, title: str = "") -> Path:
    """Log-log residual against grid spacing with an h² guide."""
    plt = _pyplot()
    h = np.array([lv["h"] for lv in levels], dtype=float)
    r = np.array([lv["value"] for lv in levels], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(h, np.maximum(r, 1e-300), "o-", label="residual")
    if r[-1] > 0:
        ax.loglog(h, r[-1] * (h / h[-1]) ** 2, "k--", lw=0.8, label="h^2")
    ax.set_xlabel("h")
    ax.set_ylabel("sup residual")
    label = f"{title} (order {order:.2f})" if order is not None else title
    ax.set_title(label)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
