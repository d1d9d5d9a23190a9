"""Figures for aggregated campaign results, one PNG per criterion."""

from pathlib import Path

from matplotlib.figure import Figure

from .metrics import bin_sort_key
from .policy import PolicyMode

FIGURES = {
    "fig_latency": ("mean_latency", "Average latency after a cut (s)"),
    "fig_energy": ("mean_lost_bits", "Bits spent on unsuccessful emissions"),
    "fig_ratio": ("mean_ratio_pct", "Unsuccessful / transferred volume (%)"),
}

STYLE = {
    PolicyMode.TRADITIONAL: dict(color="#b2182b", marker="s", label="RTO-MM (traditional)"),
    PolicyMode.PERSISTENT: dict(color="#2166ac", marker="o", label="extended persistent"),
}


def _bin_mid(label):
    lo, hi = (float(x) for x in label.split("-"))
    return (lo + hi) / 2


def render_figures(aggregates, out_dir, fmt="png"):
    """Plot each metric against break-duration bin for every policy present.

    ``aggregates`` maps PolicyMode to AggregateRow lists.  Returns
    ``{figure name: path}``.
    """
    out = Path(out_dir)
    paths = {}
    for name, (attr, ylabel) in FIGURES.items():
        fig = Figure(figsize=(5.0, 3.4), dpi=120)
        ax = fig.add_subplot()
        for mode, rows in aggregates.items():
            rows = sorted(rows, key=lambda r: bin_sort_key(r.bin))
            if not rows:
                continue
            ax.plot([_bin_mid(r.bin) for r in rows], [getattr(r, attr) for r in rows],
                    linewidth=1.4, markersize=4, **STYLE[mode])
        ax.set_xlabel("Break duration (s)")
        ax.set_ylabel(ylabel)
        ax.set_xlim(20, 100)
        ax.grid(True, linewidth=0.4, alpha=0.5)
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        path = out / f"{name}.{fmt}"
        fig.savefig(path, metadata={"Software": None} if fmt == "png" else None)
        paths[name] = path
    return paths
