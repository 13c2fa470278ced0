"""Readers for the pilotbox CSV output schemas.

Every reader validates the header row before parsing; a mismatch raises
SchemaError, which the command-line wrapper turns into a nonzero exit.

Schemas (all RFC-4180 CSV with a header row, LF endings):
  density.csv     x, y, f, rho, flagged        regular lattice, row-major in x
  trajectory.csv  t, x, y, h, delta_used       accepted integrator steps
  divergence.csv  t, x_a, y_a, x_b, y_b, separation
  hseries.csv     t, hbar, err
  cells .csv      cx, cy, value                cell centers, row-major in cx
"""

import csv

import numpy as np


class SchemaError(Exception):
    """An input file does not conform to its documented schema."""


def _read_table(path, expected_header):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != expected_header:
            raise SchemaError(
                f"{path}: header {header!r} does not match {expected_header!r}")
        try:
            rows = np.array([[float(cell) for cell in row] for row in reader])
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric cell ({exc})") from None
    if rows.size == 0:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _fold_lattice(xs, ys, values, path):
    """Reshape row-major (x, y, value) triples into a (nx, ny) grid."""
    ux = np.unique(xs)
    uy = np.unique(ys)
    if ux.size * uy.size != values.size:
        raise SchemaError(f"{path}: rows do not form a full lattice")
    grid = values.reshape(ux.size, uy.size)
    return ux, uy, grid


def read_density(path):
    """-> (x_axis, y_axis, rho_grid, f_grid)"""
    rows = _read_table(path, ["x", "y", "f", "rho", "flagged"])
    xs, ys, rho = _fold_lattice(rows[:, 0], rows[:, 1], rows[:, 3], path)
    _, _, f = _fold_lattice(rows[:, 0], rows[:, 1], rows[:, 2], path)
    return xs, ys, rho, f


def read_trajectory(path):
    """-> (t, x, y) arrays of the accepted steps"""
    rows = _read_table(path, ["t", "x", "y", "h", "delta_used"])
    return rows[:, 0], rows[:, 1], rows[:, 2]


def read_divergence(path):
    """-> (t, path_a (n,2), path_b (n,2), separation)"""
    rows = _read_table(path, ["t", "x_a", "y_a", "x_b", "y_b", "separation"])
    return rows[:, 0], rows[:, 1:3], rows[:, 3:5], rows[:, 5]


def read_hseries(path):
    """-> (t, hbar, err)"""
    rows = _read_table(path, ["t", "hbar", "err"])
    if np.any(rows[:, 1] <= 0):
        raise SchemaError(f"{path}: hbar column must be positive")
    return rows[:, 0], rows[:, 1], rows[:, 2]


def read_cells(path):
    """-> (cx_axis, cy_axis, value_grid)"""
    rows = _read_table(path, ["cx", "cy", "value"])
    return _fold_lattice(rows[:, 0], rows[:, 1], rows[:, 2], path)
