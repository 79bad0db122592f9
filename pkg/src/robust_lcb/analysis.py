"""Closed-form regret bound shapes for overlay plots.

Constants and logarithmic factors are folded into ``constant_scale``; the
curves only carry the dependence on ``d``, ``L``, ``t`` and ``C``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundParams:
    d: int
    L: int
    T: int
    C: float
    constant_scale: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.L < 1 or self.T < 1:
            raise ValueError("d, L and T must be >= 1")
        if self.C < 0:
            raise ValueError("C must be non-negative")


def upper_bound_curve(params: BoundParams, t_grid) -> np.ndarray:
    """``scale * d^(L - 1/2) * (sqrt(t) + C)``."""
    t = np.asarray(t_grid, dtype=float)
    return params.constant_scale * params.d ** (params.L - 0.5) * (np.sqrt(t) + params.C)


def lower_bound_curve(params: BoundParams, t_grid) -> np.ndarray:
    """``scale * d^(L/2 - 2) * max(sqrt(t), d^2 C)``."""
    t = np.asarray(t_grid, dtype=float)
    d = float(params.d)
    return params.constant_scale * d ** (params.L / 2 - 2) * np.maximum(np.sqrt(t), d ** 2 * params.C)


def lower_bound_switch_point(params: BoundParams) -> float:
    """Horizon where the two branches of the lower bound meet: ``sqrt(t) = d^2 C``."""
    return float((params.d ** 2 * params.C) ** 2)
