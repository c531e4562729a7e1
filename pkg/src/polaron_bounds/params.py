"""Model parameters and the displacement-function choices."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Mode(str, Enum):
    EXACT = "exact"
    FLOAT = "float"


class FVariant(str, Enum):
    ZERO = "zero"
    SIMPLEST = "simplest"
    OPTIMAL_REST = "optimal_rest"
    OPTIMAL_MOVING = "optimal_moving"
    COMPROMISE = "compromise"


@dataclass(frozen=True)
class PolaronParams:
    """Dimensionless acoustical-polaron parameters.

    Energies are in units of 2 m s**2, wave vectors in units of 2 m s / hbar.
    ``P`` is the magnitude of the total momentum; the model is isotropic.
    """

    alpha: float
    k0: float
    P: float = 0.0
    mode: Mode = Mode.FLOAT

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.k0 > 0:
            raise ValueError(f"k0 must be positive, got {self.k0}")
        if not self.P >= 0:
            raise ValueError(f"P must be non-negative, got {self.P}")
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True)
class FChoice:
    """Which displacement f_k the unitary shift uses.

    ``eta`` is only meaningful for the moving-polaron variants.

    - ZERO: f_k = 0 (no shift)
    - OPTIMAL_REST / SIMPLEST: f_k = -V_k / (k + k**2)
    - OPTIMAL_MOVING: f_k = -V_k / (k - 2 k.P (1 - eta) + k**2)
    - COMPROMISE: f_k = -(V_k + 2 eta k.P) / (k - 2 k.P + k**2)
    """

    variant: FVariant
    eta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", FVariant(self.variant))

    @property
    def spherical(self) -> bool:
        return self.variant in (FVariant.ZERO, FVariant.SIMPLEST, FVariant.OPTIMAL_REST)


ZERO = FChoice(FVariant.ZERO)
SIMPLEST = FChoice(FVariant.SIMPLEST)
OPTIMAL_REST = FChoice(FVariant.OPTIMAL_REST)
