"""Holds line plots of rollouts against their references and of error curves, saved as SVG files"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from matplotlib.figure import Figure

from daepinn.trajectory import Trajectory

FIGSIZE = (6.4, 4.0)


@dataclass
class Series:
    """One line of a plot"""

    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False


def line_plot(series: Sequence[Series], title: str, xlabel: str, ylabel: str, log_y: bool = False) -> Figure:
    """Draws series into a new figure.

    Non-finite points are dropped; with `log_y` so are nonpositive ones and the y axis is logarithmic.

    Raises
    ------
    ValueError
        When no series has a plottable point.
    """
    fig = Figure(figsize=FIGSIZE)
    ax = fig.add_subplot()
    drawn = 0
    for s in series:
        x, y = np.asarray(s.x, dtype=np.float64), np.asarray(s.y, dtype=np.float64)
        keep = np.isfinite(x) & np.isfinite(y)
        if log_y:
            keep &= y > 0
        if not np.any(keep):
            continue
        ax.plot(x[keep], y[keep], linestyle="--" if s.dashed else "-", linewidth=1.5, label=s.label)
        drawn += 1
    if not drawn:
        raise ValueError(f"Nothing to plot in `{title}`")
    if log_y:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    return fig


def write_plot(path: Union[str, Path], *args, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line_plot(*args, **kwargs).savefig(path, format="svg")
    return path


def plot_states(pred: Trajectory, truth: Optional[Trajectory], out_dir: Union[str, Path]) -> List[Path]:
    """Writes `state_<label>.svg` per state: the prediction solid, the reference dashed"""
    paths = []
    for j, label in enumerate(pred.labels):
        series = [Series("predicted", pred.times, pred.states[:, j])]
        if truth is not None:
            series.append(Series("true", truth.times, truth.states[:, j], dashed=True))
        paths.append(write_plot(Path(out_dir) / f"state_{label}.svg", series, label, "t [s]", label))
    return paths


def plot_curves(curves, out_dir: Union[str, Path]) -> List[Path]:
    """Writes `curve_<label>.svg` per state with the relative error of every scheme against the step count.

    States whose errors are all zero or non-finite get no plot.
    """
    if not curves:
        return []
    paths = []
    for j, label in enumerate(curves[0].labels):
        series = [Series(c.name, c.steps.astype(np.float64), c.errors[:, j]) for c in curves]
        if not any(np.any(np.isfinite(s.y) & (s.y > 0)) for s in series):
            continue
        paths.append(
            write_plot(
                Path(out_dir) / f"curve_{label}.svg", series, f"relative L2 error of {label}", "steps", "error", True
            )
        )
    return paths
