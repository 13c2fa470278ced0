"""The ten figure builders and the render dispatcher.

F1  Born density surface at t = 0           density.csv (equilibrium run)
F2  typical trajectory over the box         trajectory.csv
F3  close-up of a trajectory                trajectory.csv
F4  divergence of two nearby trajectories   divergence.csv
F5  initial ensemble density surface        density.csv
F6  fine-grained density close-up           density.csv (windowed run)
F7  smoothed density vs Born, surfaces      3x (rho_tilde.csv, psi2_tilde.csv)
F8  smoothed density vs Born, contours      3x (rho_tilde.csv, psi2_tilde.csv)
F9  cell-averaged fields, t = 0 and later   2x (rho_bar.csv, psi2_bar.csv)
F10 ln of the coarse-grained H vs time      hseries.csv
"""

import math
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schemas import (
    SchemaError,
    read_cells,
    read_density,
    read_divergence,
    read_hseries,
    read_trajectory,
)

PI = math.pi
DPI = 150
CMAP = "viridis"

FIGURE_IDS = ("F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8", "F9", "F10")

# inputs each figure expects, in order
INPUT_COUNTS = {"F1": 1, "F2": 1, "F3": 1, "F4": 1, "F5": 1, "F6": 1,
                "F7": 6, "F8": 6, "F9": 4, "F10": 1}


@dataclass(frozen=True)
class FigureJob:
    figure_id: str
    input_files: tuple
    output: str

    def __post_init__(self):
        if self.figure_id not in FIGURE_IDS:
            raise SchemaError(f"unknown figure id {self.figure_id!r}")
        expected = INPUT_COUNTS[self.figure_id]
        if len(self.input_files) != expected:
            raise SchemaError(
                f"{self.figure_id} needs {expected} input file(s), "
                f"got {len(self.input_files)}")


def _surface(ax, xs, ys, grid, title):
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    ax.plot_surface(xg, yg, grid, cmap=CMAP, linewidth=0, antialiased=False,
                    rstride=1, cstride=1)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)


def _box_axes(ax):
    ax.set_xlim(0.0, PI)
    ax.set_ylim(0.0, PI)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")


def build_f1(paths):
    xs, ys, rho, _ = read_density(paths[0])
    fig = plt.figure(figsize=(7, 5.5))
    ax = fig.add_subplot(projection="3d")
    _surface(ax, xs, ys, rho, "Born density at t = 0")
    return fig


def build_f2(paths):
    _, x, y = read_trajectory(paths[0])
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(x, y, lw=0.4, color="navy")
    ax.plot([x[0]], [y[0]], marker="o", ms=4, color="green")
    ax.plot([x[-1]], [y[-1]], marker="s", ms=4, color="red")
    _box_axes(ax)
    ax.set_title("trajectory")
    return fig


def build_f3(paths):
    _, x, y = read_trajectory(paths[0])
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(x, y, lw=0.5, color="navy")
    pad_x = 0.03 * (x.max() - x.min() + 1e-9)
    pad_y = 0.03 * (y.max() - y.min() + 1e-9)
    ax.set_xlim(x.min() - pad_x, x.max() + pad_x)
    ax.set_ylim(y.min() - pad_y, y.max() + pad_y)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("trajectory close-up")
    return fig


def build_f4(paths):
    _, path_a, path_b, sep = read_divergence(paths[0])
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(path_a[:, 0], path_a[:, 1], lw=0.5, color="navy", label="first")
    ax.plot(path_b[:, 0], path_b[:, 1], lw=0.5, color="firebrick", label="second")
    ax.plot([path_a[0, 0]], [path_a[0, 1]], marker="o", ms=5, color="black")
    _box_axes(ax)
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(f"pair divergence: {sep[0]:.3g} to {sep[-1]:.3g}")
    return fig


def build_f5(paths):
    xs, ys, rho, _ = read_density(paths[0])
    fig = plt.figure(figsize=(7, 5.5))
    ax = fig.add_subplot(projection="3d")
    _surface(ax, xs, ys, rho, "initial ensemble density")
    return fig


def build_f6(paths):
    xs, ys, rho, _ = read_density(paths[0])
    fig = plt.figure(figsize=(7, 5.5))
    ax = fig.add_subplot(projection="3d")
    _surface(ax, xs, ys, rho, "fine-grained density, close-up")
    ax.set_xlim(xs.min(), xs.max())
    ax.set_ylim(ys.min(), ys.max())
    return fig


def _paired_panels(paths, contour):
    """Three (rho, born) column pairs: one row per input pair."""
    fig = plt.figure(figsize=(9, 12))
    labels = ("t = 0", "t = 2 pi", "t = 4 pi")
    for row in range(3):
        rho_path, psi_path = paths[2 * row], paths[2 * row + 1]
        for col, (path, name) in enumerate(
                [(rho_path, "ensemble"), (psi_path, "Born")]):
            cx, cy, grid = read_cells(path)
            index = row * 2 + col + 1
            if contour:
                ax = fig.add_subplot(3, 2, index)
                xg, yg = np.meshgrid(cx, cy, indexing="ij")
                ax.contour(xg, yg, grid, levels=10, cmap=CMAP)
                _box_axes(ax)
            else:
                ax = fig.add_subplot(3, 2, index, projection="3d")
                _surface(ax, cx, cy, grid, "")
            ax.set_title(f"{name}, {labels[row]}", fontsize=9)
    return fig


def build_f7(paths):
    return _paired_panels(paths, contour=False)


def build_f8(paths):
    return _paired_panels(paths, contour=True)


def build_f9(paths):
    fig = plt.figure(figsize=(9, 8))
    labels = ("ensemble, t = 0", "Born, t = 0", "ensemble, later", "Born, later")
    for k, path in enumerate(paths):
        cx, cy, grid = read_cells(path)
        ax = fig.add_subplot(2, 2, k + 1, projection="3d")
        _surface(ax, cx, cy, grid, labels[k])
    return fig


def build_f10(paths):
    t, hbar, err = read_hseries(paths[0])
    log_h = np.log(hbar)
    # symmetric bars in log space from the reported shift
    bar = err / hbar
    fig, ax = plt.subplots(figsize=(6.5, 5))
    ax.errorbar(t, log_h, yerr=bar, fmt="o", ms=4, capsize=3, color="navy",
                ecolor="gray")
    if t.size >= 2:
        slope, intercept = np.polyfit(t, log_h, 1)
        ax.plot(t, slope * t + intercept, lw=1, color="firebrick",
                label=f"slope {slope:+.3f}")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("t")
    ax.set_ylabel("ln H")
    ax.set_title("coarse-grained H decay")
    return fig


_BUILDERS = {"F1": build_f1, "F2": build_f2, "F3": build_f3, "F4": build_f4,
             "F5": build_f5, "F6": build_f6, "F7": build_f7, "F8": build_f8,
             "F9": build_f9, "F10": build_f10}


def render(job: FigureJob) -> str:
    """Build the figure and write the PNG; returns the output path."""
    fig = _BUILDERS[job.figure_id](job.input_files)
    try:
        fig.savefig(job.output, dpi=DPI)
    finally:
        plt.close(fig)
    return job.output
