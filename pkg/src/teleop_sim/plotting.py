"""Figures for single runs (state counts over time) and sweeps (KPI against ratio)."""

from __future__ import annotations

from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

from .scenario import CellResult, clock

STYLE = {
    "font.family": "sans-serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

VEHICLE_LABELS = ("Idle", "InQueue", "Takeover", "Teleoperated", "SignedOff")
OPERATOR_LABELS = ("Idle", "Takeover", "Busy", "Resting")

KPI_LABELS = {
    "tour_completion_rate": "tour completion rate",
    "distance_completion_rate": "distance completion rate",
    "delay": "delay",
    "avg_wait_per_queue_entry": "mean wait per queue entry (min)",
    "avg_wait_per_vehicle": "mean wait per vehicle (min)",
    "avg_teleoperator_utilization": "operator utilization",
    "avg_vehicle_utilization": "vehicle utilization",
    "avg_queue_length": "mean queue length",
}


def _hours(t, origin):
    return (np.asarray(t, dtype=float) - origin) / 60.0


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.stem + ".tmp" + path.suffix)
    fig.savefig(tmp)
    tmp.replace(path)
    return path


def snapshot_figure(times, vehicle_counts, operator_counts, queue_lengths, path,
                    start_time: float = 0.0, baseline_makespan: float | None = None,
                    shift_hours: float | None = None, title: str = "") -> Path:
    """Three stacked panels: vehicle states, operator states and queue length.

    The dashed line marks the baseline completion; the dotted one the shift end.
    """
    vehicle_counts = np.asarray(vehicle_counts)
    operator_counts = np.asarray(operator_counts)
    x = _hours(times, start_time)
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(8.0, 7.5))
        axes = fig.subplots(3, 1, sharex=True)
        for i, lab in enumerate(VEHICLE_LABELS):
            axes[0].plot(x, vehicle_counts[:, i], label=lab, drawstyle="steps-post")
        axes[0].set_ylabel("vehicles")
        for i, lab in enumerate(OPERATOR_LABELS):
            axes[1].plot(x, operator_counts[:, i], label=lab, drawstyle="steps-post")
        axes[1].set_ylabel("teleoperators")
        axes[2].plot(x, queue_lengths, color="k", drawstyle="steps-post")
        axes[2].set_ylabel("queue length")
        axes[2].set_xlabel(f"hours since {clock(start_time)}")
        for ax in axes:
            if baseline_makespan is not None:
                ax.axvline(baseline_makespan / 60.0, color="tab:red", ls="--", lw=0.9, label="baseline completion")
            if shift_hours is not None:
                ax.axvline(shift_hours, color="0.4", ls=":", lw=0.9, label="shift end")
        axes[0].legend(loc="upper left", bbox_to_anchor=(1.01, 1.0))
        axes[1].legend(loc="upper left", bbox_to_anchor=(1.01, 1.0))
        if title:
            axes[0].set_title(title)
        return _save(fig, path)


def curve_rows(cells: list[CellResult], kpis) -> list[tuple]:
    """(start, shift, takeover, ratio, kpi, mean, std) rows sorted by group then ratio."""
    rows = []
    for cell in cells:
        if not cell.ok:
            continue
        c = cell.config
        for k in kpis:
            s = cell.summary[k]
            rows.append((c.start_time, c.shift_hours, c.takeover_min, c.ratio, k, s.mean, s.std))
    rows.sort(key=lambda r: (r[4], r[0], r[1], r[2], r[3]))
    return rows


def ratio_curves_figure(rows, kpi: str, path) -> Path:
    """KPI mean against ratio; one panel per shift length, colour by start, line style by takeover."""
    rows = [r for r in rows if r[4] == kpi]
    if not rows:
        raise ValueError(f"no data for kpi {kpi!r}")
    shifts = sorted({r[1] for r in rows})
    starts = sorted({r[0] for r in rows})
    takeovers = sorted({r[2] for r in rows})
    styles = ["-", "--", "-.", ":"]
    colors = mpl.rcParams["axes.prop_cycle"].by_key()["color"]
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(3.6 * len(shifts), 3.2))
        axes = np.atleast_1d(fig.subplots(1, len(shifts), sharey=True, squeeze=False)[0])
        for ax, h in zip(axes, shifts):
            for i, s in enumerate(starts):
                for j, k in enumerate(takeovers):
                    pts = sorted((r[3], r[5]) for r in rows if r[0] == s and r[1] == h and r[2] == k)
                    if not pts:
                        continue
                    xs, ys = zip(*pts)
                    ax.plot(xs, ys, color=colors[i % len(colors)], ls=styles[j % len(styles)], marker=".",
                            label=f"{clock(s)}, takeover {k:g}")
            ax.set_title(f"{h:g} h shift")
            ax.set_xlabel("teleoperators per vehicle")
        axes[0].set_ylabel(KPI_LABELS.get(kpi, kpi))
        axes[-1].legend(loc="best")
        return _save(fig, path)
