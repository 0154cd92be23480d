from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class GroundMotion:
    """Uniformly sampled ground acceleration.

    ``accel`` already includes ``scale`` (m/s^2); ``scale`` is kept for provenance.
    Sample ``n`` sits at ``t = n * dt``, so ``N + 1`` samples drive ``N`` outputs.
    """

    dt: float
    accel: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        a = np.array(self.accel, dtype=float).reshape(-1)
        if a.size == 0:
            raise ValueError("ground motion must contain at least one sample")
        if not np.all(np.isfinite(a)):
            raise ValueError("ground acceleration contains non-finite values")
        a.setflags(write=False)
        object.__setattr__(self, "accel", a)

    @property
    def n_samples(self) -> int:
        return self.accel.size

    @property
    def duration(self) -> float:
        return (self.accel.size - 1) * self.dt

    def rescaled(self, factor: float) -> "GroundMotion":
        return GroundMotion(self.dt, self.accel * factor, self.scale * factor)

    def steps_per_output(self, out_dt: float | None) -> int:
        if out_dt is None:
            return 1
        ratio = out_dt / self.dt
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"out_dt={out_dt} must be an integer multiple of the record step {self.dt}"
            )
        return k

    def n_outputs(self, out_dt: float | None = None) -> int:
        return (self.accel.size - 1) // self.steps_per_output(out_dt)
