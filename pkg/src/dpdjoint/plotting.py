"""Boxplots of per-replication metrics, rendered headless to PNG."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = {
    "rmspe": "RMSPE (mean |y - y_hat|)",
    "rmse": "RMSE",
    "me": "misclassification error",
    "l2_beta": "l2 error, beta",
    "l2_omega": "l2 error, omega",
    "l2_eta": "l2 error, eta",
    "fp_rate": "false positive rate",
    "fn_rate": "false negative rate",
}

# fixed so repeated renders are byte-identical
_PNG_METADATA = {"Software": None}
_STYLE = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False, "svg.hashsalt": "dpdjoint"}


def _group_key(r):
    return (r["scenario"], float(r["rate"]), r["contamination"])


def metric_boxplot(rows, metric, path, title=None):
    """One panel per metric; boxes grouped by contamination setting, one per method."""
    rows = [r for r in rows if r["status"] == "ok"]
    groups = sorted({_group_key(r) for r in rows}, key=lambda k: (k[0], k[1], k[2]))
    methods = sorted({r["method"] for r in rows})
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(groups) * max(len(methods), 1)), 3.2))
        width = 0.8 / max(len(methods), 1)
        colors = plt.cm.tab10(np.arange(len(methods)) % 10)
        for j, m in enumerate(methods):
            data, pos = [], []
            for g, key in enumerate(groups):
                v = np.array([float(r[metric]) for r in rows if r["method"] == m and _group_key(r) == key])
                v = v[np.isfinite(v)]
                if v.size:
                    data.append(v)
                    pos.append(g + (j - (len(methods) - 1) / 2) * width)
            if data:
                bp = ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True,
                                manage_ticks=False, flierprops={"markersize": 2})
                for box in bp["boxes"]:
                    box.set_facecolor(colors[j])
                    box.set_alpha(0.6)
            ax.plot([], [], "s", color=colors[j], label=m)
        ax.set_xticks(range(len(groups)))
        ax.set_xticklabels([f"{c}\n{rate:g}" if len({g[0] for g in groups}) == 1 else f"{s}\n{c} {rate:g}"
                            for s, rate, c in groups])
        ax.set_ylabel(METRIC_LABELS.get(metric, metric))
        if title:
            ax.set_title(title)
        if methods:
            ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
        plt.close(fig)
    return path
