"""Closed-form numeric identities of the lattice model.

The site count N3 is fixed by the fine-structure constant alpha as
2^(9/2) / (3 pi^2 alpha^9); multiplied by one proton-plus-electron mass
it reproduces the Planck mass sqrt(hbar c / G) to about a part in a
thousand.  These relations are evaluated here with overridable CGS
constants (CODATA 2018 defaults), magnitudes only: the double-valued
sign bookkeeping of the source model is not represented numerically.

The remaining lattice quantities (nucleus site count, final-state
duration and interaction radius) have no computable relations in scope
and are stored as plain constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import DomainError

__all__ = [
    "PhysicalConstants",
    "LatticeModel",
    "n3_from_alpha",
    "planck_mass",
    "planck_identity_residual",
    "RESIDUAL_TOLERANCE",
]

# Identity tolerance: the headline claim is "about 1e-3"; doubled to absorb
# the spread between historical and current constant sets.
RESIDUAL_TOLERANCE = 2e-3


@dataclass(frozen=True)
class PhysicalConstants:
    """CGS constants; defaults are CODATA 2018."""

    alpha: float = 7.2973525693e-3  # fine-structure constant
    m_p: float = 1.67262192369e-24  # proton mass, g
    m_e: float = 9.1093837015e-28  # electron mass, g
    hbar: float = 1.054571817e-27  # erg s
    c: float = 2.99792458e10  # cm/s
    G: float = 6.67430e-8  # cm^3 g^-1 s^-2

    def __post_init__(self):
        for name in ("alpha", "m_p", "m_e", "hbar", "c", "G"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise DomainError(f"{name} must be a positive finite number")


@dataclass(frozen=True)
class LatticeModel:
    """Stored lattice quantities; no dynamics are computed from them."""

    n3: float = 1.302e19  # total site count
    n_nucleus: float = 5.2780e4  # sites in the "nucleus"
    tau_mu: float = 2e-6  # final-state duration, s
    r_mu: float = 6e4  # interaction radius, cm

    def __post_init__(self):
        if not 0.0 < self.n_nucleus < self.n3:
            raise DomainError("site counts must satisfy 0 < n_nucleus < n3")


def n3_from_alpha(alpha: float) -> float:
    """Total site count 2^(9/2) / (3 pi^2 alpha^9).

    Exactly homogeneous of degree -9 in alpha.  Physically alpha sits
    in (0, 1); any positive value evaluates (unit alpha collapses the
    count to 2^(9/2) / (3 pi^2)).
    """
    if not (math.isfinite(alpha) and alpha > 0.0):
        raise DomainError(f"alpha must be > 0, got {alpha}")
    return 2.0**4.5 / (3.0 * math.pi**2 * alpha**9)


def planck_mass(pc: PhysicalConstants) -> float:
    """sqrt(hbar c / G) in grams."""
    return math.sqrt(pc.hbar * pc.c / pc.G)


def planck_identity_residual(pc: PhysicalConstants) -> float:
    """Relative deviation |N3 (m_p + m_e) - M_Pl| / M_Pl."""
    mass = planck_mass(pc)
    return abs(n3_from_alpha(pc.alpha) * (pc.m_p + pc.m_e) - mass) / mass
