"""Single-resonance Drude-Lorentz material model.

All frequencies are measured in units of the reference frequency (the
transverse resonance for dielectrics, the plasma frequency for metals), and
all lengths in units of the reference vacuum wavelength, so c = 1 and a
vacuum size parameter is 2*pi*omega*R.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "MaterialModel",
    "Permittivity",
    "RefractiveIndex",
    "BandGap",
    "permittivity",
    "refractive_index",
    "band_gap",
    "classify_regime",
]


@dataclass(frozen=True)
class MaterialModel:
    """Drude-Lorentz parameters in reference-frequency units.

    omega_t = 0 describes a metal (pure Drude); gamma = 0 describes the
    lossless reference material used when splitting a linewidth into its
    radiative and absorptive parts.
    """

    omega_p: float
    omega_t: float
    gamma: float

    def __post_init__(self) -> None:
        if self.omega_p < 0.0:
            raise ValueError(f"omega_p must be >= 0, got {self.omega_p}")
        if self.omega_t < 0.0:
            raise ValueError(f"omega_t must be >= 0, got {self.omega_t}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.omega_p == 0.0 and self.omega_t == 0.0:
            raise ValueError("at least one of omega_p, omega_t must be positive")

    @property
    def is_metal(self) -> bool:
        return self.omega_t == 0.0

    def lossless(self) -> "MaterialModel":
        """The gamma = 0 twin of this material (same dispersion)."""
        return MaterialModel(self.omega_p, self.omega_t, 0.0)


@dataclass(frozen=True)
class Permittivity:
    value: complex
    at_frequency: float


@dataclass(frozen=True)
class RefractiveIndex:
    value: complex

    @property
    def n_r(self) -> float:
        return self.value.real

    @property
    def n_i(self) -> float:
        return self.value.imag


@dataclass(frozen=True)
class BandGap:
    """Frequency band of negative real permittivity (lossless limit).

    lower is the transverse frequency, upper the longitudinal one; sg_bound
    is where eps crosses -1, the upper limit for surface-guided modes.
    """

    lower: float
    upper: float
    sg_bound: float


def eps_value(model: MaterialModel, omega: complex) -> complex:
    """Permittivity at a (possibly complex) frequency.

    This is the analytic continuation used by the resonance solver; the
    public `permittivity` wraps it for real positive frequencies.
    """
    return 1.0 + model.omega_p**2 / (
        model.omega_t**2 - omega * omega - 1j * omega * model.gamma
    )


def permittivity(model: MaterialModel, omega: float) -> Permittivity:
    """Drude-Lorentz permittivity at a real frequency omega > 0."""
    if not omega > 0.0:
        raise ValueError(f"omega must be > 0, got {omega}")
    return Permittivity(value=eps_value(model, omega), at_frequency=float(omega))


def refractive_index_value(eps: complex) -> complex:
    """Refractive index branch with n_r >= 0 and n_i >= 0.

    Uses the explicit half-angle form rather than a general complex square
    root so the branch is fixed for any sign of Re(eps):
    n_r = sqrt((|eps| + Re eps)/2), n_i = sqrt((|eps| - Re eps)/2).
    """
    mod = abs(eps)
    n_r = math.sqrt(max(0.5 * (mod + eps.real), 0.0))
    n_i = math.sqrt(max(0.5 * (mod - eps.real), 0.0))
    return complex(n_r, n_i)


def refractive_index(model: MaterialModel, omega: float) -> RefractiveIndex:
    """n(omega) on the absorbing branch (n_r, n_i both non-negative)."""
    eps = permittivity(model, omega).value
    return RefractiveIndex(value=refractive_index_value(eps))


def band_gap(model: MaterialModel) -> BandGap:
    lower = model.omega_t
    upper = math.hypot(model.omega_t, model.omega_p)
    sg_bound = math.sqrt(model.omega_t**2 + 0.5 * model.omega_p**2)
    return BandGap(lower=lower, upper=upper, sg_bound=sg_bound)


def classify_regime(model: MaterialModel, omega: float) -> str:
    """Classify omega as 'below-gap', 'in-gap' or 'above-gap'.

    Band boundaries belong to the lower regime. Metals (omega_t = 0) have
    no below-gap region.
    """
    if not omega > 0.0:
        raise ValueError(f"omega must be > 0, got {omega}")
    gap = band_gap(model)
    if not model.is_metal and omega <= gap.lower:
        return "below-gap"
    if omega <= gap.upper:
        return "in-gap"
    return "above-gap"
