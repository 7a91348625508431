"""Symbol-error-rate figures from sweep CSV files.

Input files carry the header ``SNR,SERu,SERi`` (weak user, strong user);
empty SER fields mark points without valid trials and are skipped. The
rendered figure uses a logarithmic error-rate axis clamped to
[1e-4, 1], the usual presentation for error-rate curves.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = ["CurveSpec", "load_series", "plot"]

SERIES_COLUMNS = ("SERu", "SERi")
Y_LIMITS = (1e-4, 1.0)


@dataclass(frozen=True)
class CurveSpec:
    """One line in the figure: a CSV column plus presentation hints."""

    csv_path: str
    label: str
    which: str  # "SERu" (weak user) or "SERi" (strong user)
    dashed: bool | None = None  # default: dash the strong-user series

    def __post_init__(self) -> None:
        if self.which not in SERIES_COLUMNS:
            raise ValueError(f"which must be one of {SERIES_COLUMNS}, got {self.which!r}")

    @property
    def linestyle(self) -> str:
        dashed = self.dashed if self.dashed is not None else (self.which == "SERi")
        return "--" if dashed else "-"


def load_series(csv_path: str, which: str) -> tuple[list[float], list[float]]:
    """Read one SER column; rows with an empty field are skipped."""
    snrs: list[float] = []
    sers: list[float] = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or which not in reader.fieldnames:
            raise ValueError(f"column {which!r} missing from {csv_path}")
        for row in reader:
            value = (row[which] or "").strip()
            if not value:
                continue
            snrs.append(float(row["SNR"]))
            sers.append(float(value))
    return snrs, sers


def plot(curves: list[CurveSpec], out_path: str, title: str = "") -> dict[str, tuple]:
    """Render the curves into ``out_path`` (format from the extension).

    Returns the plotted data keyed by legend label, which is a pure
    function of the input files.
    """
    if not curves:
        raise ValueError("no curves given")
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    plotted: dict[str, tuple] = {}
    for curve in curves:
        snrs, sers = load_series(curve.csv_path, curve.which)
        label = f"{curve.label} {curve.which}" if curve.label else curve.which
        ax.semilogy(snrs, sers, marker="o", linestyle=curve.linestyle, label=label)
        plotted[label] = (tuple(snrs), tuple(sers))
    ax.set_ylim(*Y_LIMITS)
    ax.set_xlabel("SNR of weakest user (dB)")
    ax.set_ylabel("Symbol Error Rate")
    ax.grid(True, which="both", linestyle=":", linewidth=0.6)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return plotted
