"""Delimited output, run manifests, and figure rendering.

CSV files use comma separation, CRLF row endings, a header row, UTF-8,
'.' decimal marks, and 17-significant-digit floats so every double
round-trips bit-exactly through ``float()``.  Row and column order
follow the caller, so identical inputs give byte-identical files.
Figures are rendered headlessly next to the delimited data; they carry
the same content as the CSVs, never extra computation.
"""

import csv
import platform
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = ["format_value", "write_csv", "write_manifest", "plot_series",
           "plot_bars"]


def format_value(value):
    """Render one cell: floats at 17 significant digits, rest as str."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, columns, rows):
    """Write a rectangular table; an empty row list gives a header-only file.

    Raises
    ------
    ValueError
        If some row's length disagrees with the header.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(
                    f"{path}: row of length {len(row)} under a header of "
                    f"length {len(columns)}"
                )
            writer.writerow([format_value(cell) for cell in row])


def write_manifest(path, command, parameters, seed, wall_time):
    """Plain-text record of one run: parameters, seed, versions, timing."""
    lines = [f"command = {command}", f"seed = {seed}",
             f"wall_time_seconds = {wall_time:.3f}", ""]
    for section in sorted(parameters):
        lines.append(f"[{section}]")
        for key in sorted(parameters[section]):
            lines.append(f"{key} = {parameters[section][key]}")
        lines.append("")
    lines.append("[versions]")
    lines.append(f"python = {platform.python_version()}")
    for module_name in ("numpy", "scipy", "matplotlib"):
        lines.append(
            f"{module_name} = {sys.modules[module_name].__version__}"
            if module_name in sys.modules else f"{module_name} = (unloaded)")
    lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def plot_series(path, x, series, xlabel, ylabel, title, logy=False):
    """Line plot of one or more named series over a shared abscissa."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label, y in series.items():
        ax.plot(x, y, label=label, linewidth=1.4)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bars(path, labels, values, xlabel, ylabel, title, logy=False):
    """Bar plot, e.g. per-sample or per-interval scalar summaries."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels([str(lab) for lab in labels], rotation=0)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
