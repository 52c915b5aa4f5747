from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class QuenchTrajectory:
    """Time grid plus named scalar series recorded along a quench."""

    times: np.ndarray
    series: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name, values in self.series.items():
            values = np.asarray(values)
            if values.shape[0] != self.times.shape[0]:
                raise ValueError(f"series {name!r} has {values.shape[0]} samples, grid has {self.times.shape[0]}")
            self.series[name] = values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def window(self, t_min: float, t_max: float = np.inf) -> "QuenchTrajectory":
        mask = (self.times >= t_min) & (self.times <= t_max)
        return QuenchTrajectory(
            self.times[mask], {k: v[mask] for k, v in self.series.items()}, dict(self.metadata)
        )
