"""Closed-loop trace files and the six-panel overview figure."""

import csv
import logging
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from utils.mpc_exceptions import ArtifactError  # noqa: E402
from utils.simloop import SimulationTrace  # noqa: E402

# (title, column prefix, y label)
PANELS = (
    ("Unstable mode amplitude", "y_", "y [a.u.]"),
    ("Sensor signals", "y_m", "y_m [a.u.]"),
    ("MPC voltage requests", "u", "u [V]"),
    ("Coil voltages", "u_elm", "u_ELM [V]"),
    ("Coil currents", "i_elm", "I_ELM [A]"),
    ("Predicted cost", "cost", "J"),
)


def write_trace_csv(trace: SimulationTrace, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    names, table = trace.columns()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in table:
            writer.writerow([repr(float(v)) for v in row])

    logging.info(f"[ARTIFACT] Wrote {path} ({table.shape[0]} steps)")
    return path


def read_trace_csv(path: str | os.PathLike) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    except (OSError, StopIteration, ValueError) as e:
        raise ArtifactError(f"cannot read trace {path}: {e}") from e

    return {name: table[:, j] for j, name in enumerate(header)}


def _matching(columns: dict[str, np.ndarray], prefix: str) -> list[str]:
    if prefix == "y_":
        return [n for n in ("y_A", "y_B") if n in columns]
    if prefix == "u":
        return [n for n in columns if n.startswith("u") and n[1:].isdigit()]
    if prefix in ("cost",):
        return [n for n in ("cost", "power") if n in columns]
    return [
        n for n in columns if n.startswith(prefix) and n[len(prefix):].isdigit()
    ]


def plot_trace(columns: dict[str, np.ndarray], path: str | os.PathLike, title: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    t_ms = columns["t"] * 1e3
    fig, axes = plt.subplots(3, 2, figsize=(12, 9), sharex=True)

    for ax, (panel_title, prefix, ylabel) in zip(axes.flat, PANELS):
        names = _matching(columns, prefix)
        if not names:
            ax.text(0.5, 0.5, "not recorded", ha="center", va="center", transform=ax.transAxes)
        for name in names:
            ax.plot(t_ms, columns[name], linewidth=0.8, label=name if len(names) <= 6 else None)

        ax.set_title(panel_title)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        if 0 < len(names) <= 6:
            ax.legend(fontsize="x-small", loc="upper right")

    for ax in axes[-1]:
        ax.set_xlabel("t [ms]")

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

    logging.info(f"[PLOT] Wrote {path}")
    return path


def plot_trace_file(csv_path: str | os.PathLike, png_path: str | os.PathLike | None = None) -> Path:
    csv_path = Path(csv_path)
    png_path = Path(png_path) if png_path is not None else csv_path.with_suffix(".png")
    return plot_trace(read_trace_csv(csv_path), png_path, title=csv_path.stem)
