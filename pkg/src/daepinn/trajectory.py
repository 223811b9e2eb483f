"""Holds the time-series container shared by the reference solver and the rollout, with its CSV codec"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from daepinn.global_config import GlobalConfig


@dataclass
class Trajectory:
    """Samples `(t_k, y_k, z_k)` of a DAE solution.

    Attributes
    ----------
    times: np.ndarray
        Sample times, non-decreasing (strictly increasing when `strict`).
    Y: np.ndarray
        Dynamic states, one row per sample.
    Z: np.ndarray
        Algebraic states, one row per sample.
    y_labels: Sequence[str]
        Column names of `Y`.
    z_labels: Sequence[str]
        Column names of `Z`.
    meta: Dict[str, Any]
        The producing configuration and diagnostics.
    dydt: Optional[np.ndarray] = None
        `f(y_k, z_k)` per sample, used for Hermite interpolation.
    strict: bool = False
        Whether times must be strictly increasing.
    """

    times: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    y_labels: Sequence[str] = ()
    z_labels: Sequence[str] = ()
    meta: Dict[str, Any] = field(default_factory=dict)
    dydt: Optional[np.ndarray] = None
    strict: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        count = self.times.shape[0]
        self.Y = np.asarray(self.Y, dtype=np.float64).reshape(count, -1)
        self.Z = np.asarray(self.Z, dtype=np.float64).reshape(count, -1)
        if self.dydt is not None:
            self.dydt = np.asarray(self.dydt, dtype=np.float64).reshape(self.Y.shape)
        if not self.y_labels:
            self.y_labels = tuple(f"y{i + 1}" for i in range(self.Y.shape[1]))
        if not self.z_labels:
            self.z_labels = tuple(f"z{i + 1}" for i in range(self.Z.shape[1]))
        if len(self.y_labels) != self.Y.shape[1] or len(self.z_labels) != self.Z.shape[1]:
            raise ValueError("Trajectory labels do not match the state columns")
        steps = np.diff(self.times)
        if self.strict and np.any(steps <= 0.0):
            raise ValueError("Trajectory times must be strictly increasing")
        if np.any(steps < 0.0):
            raise ValueError("Trajectory times must be non-decreasing")

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def labels(self) -> List[str]:
        return list(self.y_labels) + list(self.z_labels)

    @property
    def states(self) -> np.ndarray:
        """`[Y | Z]` as one matrix"""
        return np.hstack([self.Y, self.Z])

    def truncate(self, count: int) -> "Trajectory":
        """Returns the first `count` samples"""
        return Trajectory(
            times=self.times[:count],
            Y=self.Y[:count],
            Z=self.Z[:count],
            y_labels=self.y_labels,
            z_labels=self.z_labels,
            meta=dict(self.meta),
            dydt=None if self.dydt is None else self.dydt[:count],
            strict=self.strict,
        )

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Writes the header `t,<labels>` and one row per sample at 17 significant digits"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + self.labels)
            for t, row in zip(self.times, self.states):
                writer.writerow([GlobalConfig.fmt(t)] + [GlobalConfig.fmt(v) for v in row])
        return path

    @classmethod
    def read_csv(cls, path: Union[str, Path], n: int, strict: bool = False) -> "Trajectory":
        """Reads a trajectory CSV whose first `n` state columns are dynamic"""
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "t":
            raise ValueError(f"{path}: expected a header starting with `t`")
        header = rows[0][1:]
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(header) + 1)
        return cls(
            times=data[:, 0],
            Y=data[:, 1 : 1 + n],
            Z=data[:, 1 + n :],
            y_labels=tuple(header[:n]),
            z_labels=tuple(header[n:]),
            strict=strict,
        )
