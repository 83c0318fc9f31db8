"""Adaptive-threshold blink detection on per-frame ellipse eccentricities."""
from __future__ import annotations

import statistics
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BlinkDetectorState:
    """Rolling eccentricity baseline.

    A frame is a blink when its eccentricity exceeds ``mu + lam * max(sigma, sigma_floor)``
    of the last ``n`` accepted values; the next ``k`` frames are flagged too.
    Flagged values never enter the baseline.
    """

    n: int = 30
    lam: float = 3.0
    k: int = 3
    sigma_floor: float = 0.0
    cooldown: int = 0
    buffer: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"window length must be >= 2, got {self.n}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.sigma_floor < 0:
            raise ValueError("sigma_floor must be non-negative")
        self.buffer = deque(self.buffer, maxlen=self.n)

    @property
    def warm(self) -> bool:
        return len(self.buffer) == self.n

    def threshold(self) -> float:
        # correctly rounded moments: a constant baseline must not flag its own value
        return statistics.fmean(self.buffer) + self.lam * max(statistics.stdev(self.buffer), self.sigma_floor)


def observe(state: BlinkDetectorState, r_new: float) -> tuple[BlinkDetectorState, bool]:
    """Feed one eccentricity; returns the (mutated) state and the blink flag.

    A non-finite value (failed ellipse fit) counts as exceeding any threshold
    once warm and never enters the baseline.
    """
    if state.cooldown > 0:
        state.cooldown -= 1
        return state, True
    r_new = float(r_new)
    if state.warm and (not np.isfinite(r_new) or r_new > state.threshold()):
        state.cooldown = state.k
        return state, True
    if np.isfinite(r_new):
        state.buffer.append(r_new)
    return state, False


def detect(eccentricities, n: int = 30, lam: float = 3.0, k: int = 3, sigma_floor: float = 0.0) -> np.ndarray:
    """Blink flags for a whole eccentricity sequence."""
    state = BlinkDetectorState(n=n, lam=lam, k=k, sigma_floor=sigma_floor)
    return np.array([observe(state, r)[1] for r in eccentricities], dtype=bool)
