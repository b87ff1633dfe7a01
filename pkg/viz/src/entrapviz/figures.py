"""Figure builders over the versioned trace contract.

Four kinds, mirroring the usual way these experiments are reported:
agent/target trajectories in the plane, distance-estimation error time
series per sensing edge, control error norms per follower, and pairwise
distances (which must stay above zero).  Plotting never mutates inputs and
is deterministic: identical inputs and styling produce identical bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

FIGURE_KINDS = ("trajectories", "est_errors", "ctrl_errors", "distances")


class MissingColumn(KeyError):
    """A trace column required by the requested figure kind is absent."""

    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"trace is missing required column(s): {self.name}"


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    trace: Path
    out: Path
    summary: Path = None
    dpi: int = 130
    figsize: tuple = (8.0, 5.0)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind '{self.kind}'; pick from {FIGURE_KINDS}")
        if not Path(self.trace).exists():
            raise FileNotFoundError(f"trace file not found: {self.trace}")
        if self.summary is not None and not Path(self.summary).exists():
            raise FileNotFoundError(f"summary file not found: {self.summary}")


def load_trace(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def _require(df: pd.DataFrame, names) -> None:
    missing = [n for n in names if n not in df.columns]
    if missing:
        raise MissingColumn(", ".join(missing))


def _group(df: pd.DataFrame, pattern: str) -> list:
    rx = re.compile(pattern)
    cols = [c for c in df.columns if rx.fullmatch(c)]
    if not cols:
        raise MissingColumn(pattern)
    return cols


def _agent_ids(df: pd.DataFrame) -> list:
    return sorted(int(c.split("_")[1]) for c in _group(df, r"px_\d+"))


def final_fraction_of_peak(series: np.ndarray) -> float:
    """Last |value| over peak |value|; flat near-zero curves count as 0."""
    mag = np.abs(np.asarray(series, dtype=float))
    if len(mag) == 0:
        return 0.0
    peak = float(mag.max())
    if peak <= 1e-12:
        return 0.0
    return float(mag[-1] / peak)


def _plot_trajectories(df: pd.DataFrame, ax) -> None:
    _require(df, ["p0x", "p0y"])
    ids = _agent_ids(df)
    ax.plot(df["p0x"], df["p0y"], "k--", lw=1.4, label="target")
    if len(df):
        ax.plot(df["p0x"].iloc[0], df["p0y"].iloc[0], "ko", ms=5, fillstyle="none")
        ax.plot(df["p0x"].iloc[-1], df["p0y"].iloc[-1], "ks", ms=5, fillstyle="none")
    for a in ids:
        _require(df, [f"px_{a}", f"py_{a}"])
        (line,) = ax.plot(df[f"px_{a}"], df[f"py_{a}"], lw=1.0, label=f"agent {a}")
        if len(df):
            ax.plot(df[f"px_{a}"].iloc[0], df[f"py_{a}"].iloc[0], "o",
                    color=line.get_color(), ms=4)
            ax.plot(df[f"px_{a}"].iloc[-1], df[f"py_{a}"].iloc[-1], "s",
                    color=line.get_color(), ms=4)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=7, ncols=2)
    ax.set_title("agent and target trajectories")


def _plot_est_errors(df: pd.DataFrame, ax) -> None:
    _require(df, ["t"])
    for col in _group(df, r"rho_tilde_\d+_\d+"):
        i, j = col.split("_")[2:]
        ax.plot(df["t"], df[col], lw=0.9, label=f"{i}→{j}")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("distance estimation error [m]")
    ax.legend(fontsize=6, ncols=3)
    ax.set_title("estimation errors per sensing edge")


def _plot_ctrl_errors(df: pd.DataFrame, axes) -> None:
    _require(df, ["t"])
    ax_p, ax_v = axes
    for col in _group(df, r"dp_\d+"):
        ax_p.plot(df["t"], df[col], lw=0.9, label=f"follower {col.split('_')[1]}")
    for col in _group(df, r"dv_\d+"):
        ax_v.plot(df["t"], df[col], lw=0.9, label=f"follower {col.split('_')[1]}")
    ax_p.set_ylabel("position error [m]")
    ax_v.set_ylabel("velocity error [m/s]")
    ax_v.set_xlabel("t [s]")
    ax_p.legend(fontsize=7)
    ax_p.set_title("follower control errors")


def _plot_distances(df: pd.DataFrame, ax) -> None:
    _require(df, ["t", "p0x", "p0y"])
    ids = _agent_ids(df)
    t = df["t"].to_numpy()
    cols = {a: (df[f"px_{a}"].to_numpy(), df[f"py_{a}"].to_numpy()) for a in ids}
    for k, a in enumerate(ids):
        for b in ids[k + 1:]:
            d = np.hypot(cols[a][0] - cols[b][0], cols[a][1] - cols[b][1])
            ax.plot(t, d, lw=0.7, color="tab:blue", alpha=0.6)
    for a in ids:
        d = np.hypot(cols[a][0] - df["p0x"].to_numpy(),
                     cols[a][1] - df["p0y"].to_numpy())
        ax.plot(t, d, lw=0.7, color="tab:red", alpha=0.7)
    ax.axhline(0.0, color="k", lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("distance [m]")
    ax.set_title("inter-agent (blue) and agent-target (red) distances")


def plot(spec: FigureSpec) -> Path:
    """Render one figure kind to ``spec.out``; returns the output path."""
    df = load_trace(spec.trace)
    if spec.kind == "ctrl_errors":
        fig, axes = plt.subplots(2, 1, figsize=spec.figsize, sharex=True)
    else:
        fig, axes = plt.subplots(figsize=spec.figsize)
    try:
        if spec.kind == "trajectories":
            _plot_trajectories(df, axes)
        elif spec.kind == "est_errors":
            _plot_est_errors(df, axes)
        elif spec.kind == "ctrl_errors":
            _plot_ctrl_errors(df, axes)
        else:
            _plot_distances(df, axes)
        fig.tight_layout()
        out = Path(spec.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        # strip the writer metadata so identical inputs give identical bytes
        fig.savefig(out, dpi=spec.dpi, metadata={"Software": None})
    finally:
        plt.close(fig)
    return Path(spec.out)
