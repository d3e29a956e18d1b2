"""SVG figures for sets, phase portraits and angle time series.

Figures are drawn from the CSV files the other commands write, so every
picture has its numbers on disk next to it.  Axes show degrees and Hz;
the data stay in rad and rad/s.
"""

import csv
import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SAFE_COLOR = "#4caf50"
RCI_COLOR = "#1f5fbf"
ITER_COLOR = "black"
CTRL_COLORS = {"rmpc": "#1f5fbf", "mpc1": "#d62728", "lqr": "#ff7f0e"}

_RC = {
    "svg.hashsalt": "rcigrid",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.linewidth": 0.8,
    "figure.figsize": (4.0, 3.2),
}


def hz(omega):
    """rad/s deviation to Hz."""
    return omega / (2.0 * math.pi)


def deg(x):
    return x * 180.0 / math.pi


def read_boundaries(path):
    """``{(kind, bus, k): [(delta, omega), ...]}`` from a set-boundary CSV."""
    out = defaultdict(list)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (r["set"], r["bus"], int(r["k"]))
            out[key].append((float(r["delta_rad"]), float(r["omega_rad_s"])))
    return dict(out)


def _closed(pts):
    xs = [deg(p[0]) for p in pts] + [deg(pts[0][0])]
    ys = [hz(p[1]) for p in pts] + [hz(pts[0][1])]
    return xs, ys


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _set_axes(ax):
    ax.set_xlabel(r"$\delta$ (deg)")
    ax.set_ylabel(r"$\omega$ (Hz)")


def _draw_sets(ax, boundaries, bus, iterates=True):
    safe = boundaries.get(("safe", bus, 0))
    if safe:
        xs, ys = _closed(safe)
        ax.fill(xs, ys, color=SAFE_COLOR, alpha=0.35, lw=0, label="safe set")
    if iterates:
        ks = sorted(k for (kind, b, k) in boundaries if kind == "iterate" and b == bus)
        for n, k in enumerate(ks):
            xs, ys = _closed(boundaries[("iterate", bus, k)])
            ax.plot(xs, ys, color=ITER_COLOR, lw=0.5,
                    label="iterates" if n == 0 else None)
    rci = boundaries.get(("rci", bus, 0))
    if rci:
        xs, ys = _closed(rci)
        ax.fill(xs, ys, color=RCI_COLOR, alpha=0.55, lw=0, label="RCI set")


def plot_sets(boundaries, bus, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        _draw_sets(ax, boundaries, bus)
        _set_axes(ax)
        ax.set_title(f"bus {bus}")
        ax.legend(loc="upper right", fontsize=7, frameon=False)
        _save(fig, path)


def plot_phase(boundaries, traj_rows, bus, path):
    """Trajectories of one bus in the (delta, omega) plane over its sets.

    ``traj_rows`` maps controller name to rows from a trajectory CSV.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        _draw_sets(ax, boundaries, bus, iterates=False)
        for ctrl, rows in sorted(traj_rows.items()):
            runs = defaultdict(list)
            for r in rows:
                if r["bus"] == bus:
                    runs[r["init"]].append((r["delta_rad"], r["omega_rad_s"]))
            for n, init in enumerate(sorted(runs)):
                pts = runs[init]
                xs = [deg(p[0]) for p in pts]
                ys = [hz(p[1]) for p in pts]
                c = CTRL_COLORS.get(ctrl, "gray")
                ax.plot(xs, ys, color=c, lw=0.7, marker=".", ms=2,
                        label=ctrl if n == 0 else None)
        _set_axes(ax)
        ax.set_title(f"bus {bus}")
        ax.legend(loc="upper right", fontsize=7, frameon=False)
        _save(fig, path)


def plot_time(traj_rows, bus, delta_max, path):
    """delta(t) per controller with the safe band shaded."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        tmax = 0.0
        for ctrl, rows in sorted(traj_rows.items()):
            runs = defaultdict(list)
            for r in rows:
                if r["bus"] == bus:
                    runs[r["init"]].append((r["t"], r["delta_rad"]))
            for n, init in enumerate(sorted(runs)):
                ts = [p[0] for p in runs[init]]
                tmax = max(tmax, ts[-1])
                ax.plot(ts, [deg(p[1]) for p in runs[init]],
                        color=CTRL_COLORS.get(ctrl, "gray"), lw=0.7,
                        label=ctrl if n == 0 else None)
        if delta_max is not None:
            ax.axhspan(-deg(delta_max), deg(delta_max), color=SAFE_COLOR, alpha=0.2, lw=0)
        ax.set_xlim(0.0, tmax if tmax > 0 else 1.0)
        ax.set_xlabel("t (s)")
        ax.set_ylabel(rf"$\delta_{{{bus}}}$ (deg)")
        ax.legend(loc="upper right", fontsize=7, frameon=False)
        _save(fig, path)
