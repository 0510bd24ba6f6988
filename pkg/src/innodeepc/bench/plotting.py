"""Static SVG figures for the study reports.

The SVG backend is deterministic once the hash salt is fixed and the date
metadata is dropped, so reruns with the same data give identical files.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "innodeepc",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.0,
    "figure.dpi": 100,
}

COLORS = {
    "Inno-OP": "#1f77b4", "Inno-DeePC": "#1f77b4",
    "SPC": "#d62728",
    "SSKF": "#2ca02c", "SSKF-MPC": "#2ca02c",
    "Reg-DeePC": "#9467bd",
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def slug(*parts) -> str:
    return "-".join(str(p).replace(" ", "_") for p in parts)


def grouped_boxplots(path, panels, methods, groups, values, ylabel, group_label=str):
    """One panel per entry of ``panels``; inside each, boxes per (group, method).

    Args:
        panels: Panel keys, e.g. SNR values.
        methods: Method names, drawn side by side within a group.
        groups: Group keys within a panel, e.g. prediction steps. Use
            ``[None]`` for a single group.
        values: Callable ``(panel, group, method) -> array`` of samples.

    Every box carries the SVG id ``box-<method>-<panel>-<group>``.
    Whiskers span 1.5 IQR; points beyond are drawn as outliers.
    """
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.0 * len(panels), 2.6), squeeze=False)
        width = 0.8 / len(methods)
        for ax, panel in zip(axes[0], panels):
            for gi, group in enumerate(groups):
                for mi, method in enumerate(methods):
                    data = np.asarray(values(panel, group, method), dtype=float)
                    data = data[np.isfinite(data)]
                    pos = gi + (mi - (len(methods) - 1) / 2) * width
                    bp = ax.boxplot([data], positions=[pos], widths=width * 0.8, whis=1.5,
                                    patch_artist=True, manage_ticks=False,
                                    flierprops={"markersize": 2})
                    color = COLORS.get(method, "0.4")
                    box = bp["boxes"][0]
                    box.set_facecolor(color)
                    box.set_alpha(0.6)
                    box.set_gid(slug("box", method, panel, group))
            ax.set_xticks(range(len(groups)))
            ax.set_xticklabels([group_label(g) for g in groups])
            ax.set_title(f"{panel} dB")
            ax.set_ylabel(ylabel)
        handles = [plt.Rectangle((0, 0), 1, 1, color=COLORS.get(m, "0.4"), alpha=0.6)
                   for m in methods]
        axes[0][-1].legend(handles, methods, loc="best", frameon=False)
        fig.tight_layout()
        _save(fig, path)


def error_traces(path, traces, title=""):
    """Line plot of named one-dimensional traces against the step index."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.6))
        for label, trace in traces.items():
            trace = np.asarray(trace, dtype=float).ravel()
            line, = ax.plot(np.arange(1, trace.size + 1), trace, label=label)
            line.set_gid(slug("trace", label))
        ax.set_xlabel("step")
        ax.set_ylabel("one-step error")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def closed_loop_figure(path, logs):
    """Outputs against the reference (top) and inputs (bottom) per controller."""
    with plt.rc_context(STYLE):
        fig, (ax_y, ax_u) = plt.subplots(2, 1, figsize=(5.0, 4.0), sharex=True)
        ref_drawn = False
        for name, log in logs.items():
            color = COLORS.get(name, None)
            if not ref_drawn:
                ax_y.plot(log.k, log.r[:, 0], "k--", label="reference")
                ref_drawn = True
            ax_y.plot(log.k, log.y[:, 0], color=color, label=name)
            ax_u.step(log.k, log.u[:, 0], where="post", color=color, label=name)
        ax_y.set_ylabel("y")
        ax_u.set_ylabel("u")
        ax_u.set_xlabel("k")
        ax_y.legend(frameon=False, ncol=2)
        fig.tight_layout()
        _save(fig, path)
