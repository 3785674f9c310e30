"""Parameter algebra and small value types shared across the package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class SleParams:
    kappa: float
    a: float
    b: float
    b_tilde: float
    c: float

    @property
    def lam(self) -> float:
        # loop-term coupling of the lattice weights
        return -self.c / 2.0


def derive_params(kappa: float) -> SleParams:
    """Return the SLE parameters a, b, b_tilde, c for 0 < kappa <= 4.

    a = 2/kappa, b = (6 - kappa)/(2 kappa), b_tilde = b (kappa - 2)/4 and the
    central charge c = b (3 kappa - 8).
    """
    kappa = float(kappa)
    if not (math.isfinite(kappa) and 0.0 < kappa <= 4.0):
        raise DomainError(f"kappa must lie in (0, 4], got {kappa!r}")
    b = (6.0 - kappa) / (2.0 * kappa)
    return SleParams(
        kappa=kappa,
        a=2.0 / kappa,
        b=b,
        b_tilde=b * (kappa - 2.0) / 4.0,
        c=b * (3.0 * kappa - 8.0),
    )


@dataclass(frozen=True)
class StripPoint:
    r: float
    x: float

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError("strip height r must be positive")

    def to_annulus(self, y: float = 0.0) -> complex:
        # covering map z -> e^{iz} applied to x + iy
        if not 0.0 <= y <= self.r:
            raise DomainError("y must lie in [0, r]")
        return complex(math.exp(-y) * math.cos(self.x), math.exp(-y) * math.sin(self.x))


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo mean with its standard error.

    ``deficit`` is the mean of 1 - (path value) accumulated directly, which keeps
    full relative precision when the estimate is extremely close to 1.
    """

    value: float
    std_error: float
    n_paths: int
    seed: int
    deficit: float | None = None

    def to_dict(self) -> dict:
        out = {"value": self.value, "std_error": self.std_error,
               "n_paths": self.n_paths, "seed": self.seed}
        if self.deficit is not None:
            out["deficit"] = self.deficit
        return out


@dataclass(frozen=True)
class Grid1P:
    """Values on the periodic grid x_j = -pi + 2 pi j / n_x."""

    r: float
    values: np.ndarray = field(repr=False)

    @property
    def n_x(self) -> int:
        return len(self.values)

    @property
    def x(self) -> np.ndarray:
        return periodic_grid(self.n_x)

    def __getitem__(self, j: int) -> float:
        return float(self.values[j % self.n_x])


def periodic_grid(n_x: int) -> np.ndarray:
    return -math.pi + 2.0 * math.pi * np.arange(n_x) / n_x
