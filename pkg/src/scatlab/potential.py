"""Catalogue of short-range central potentials with analytic Fourier transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigError, UnsupportedVariantError

ZERO = "zero"
GAUSSIAN_BUMP = "gaussian_bump"
SQUARE_WELL = "square_well"

_KINDS = (ZERO, GAUSSIAN_BUMP, SQUARE_WELL)


@dataclass(frozen=True)
class PotentialSpec:
    """Central potential at the origin.

    kind:  'zero' | 'gaussian_bump' | 'square_well'
    v0:    strength (energy); sign convention: v0 < 0 is attractive
    range: Gaussian width a, or well radius r0
    """

    kind: str
    v0: float = 0.0
    range: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown potential kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind != ZERO and self.range <= 0:
            raise ConfigError("potential range must be positive")


def zero():
    return PotentialSpec(ZERO)


def gaussian_bump(v0, a):
    return PotentialSpec(GAUSSIAN_BUMP, v0, a)


def square_well(v0, r0):
    return PotentialSpec(SQUARE_WELL, v0, r0)


def evaluate(p: PotentialSpec, r):
    """V at radius r (scalar or array); central, so only |x| matters."""
    r = np.asarray(r, dtype=float)
    if p.kind == ZERO:
        return np.zeros_like(r)
    if p.kind == GAUSSIAN_BUMP:
        return p.v0 * np.exp(-(r * r) / (2.0 * p.range**2))
    # square well
    return np.where(r <= p.range, p.v0, 0.0)


def evaluate_xyz(p: PotentialSpec, x, y, z):
    return evaluate(p, np.sqrt(x * x + y * y + z * z))


def fourier_transform(p: PotentialSpec, q):
    """Vhat(q) = integral exp(-i q.x) V(x) d^3x; real by central symmetry."""
    q = np.asarray(q, dtype=float)
    if p.kind == ZERO:
        return np.zeros_like(q)
    if p.kind == GAUSSIAN_BUMP:
        a = p.range
        return p.v0 * (2.0 * np.pi) ** 1.5 * a**3 * np.exp(-(a * a) * q * q / 2.0)
    if p.kind == SQUARE_WELL:
        r0 = p.range
        qr = q * r0
        # below qr ~ 1e-2 the closed form cancels catastrophically (error
        # ~eps/qr^2) while the quadratic series is still good to ~qr^4/280
        small = np.abs(qr) < 1e-2
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 4.0 * np.pi * p.v0 * (np.sin(qr) - qr * np.cos(qr)) / np.where(small, 1.0, q**3)
        vol = 4.0 * np.pi / 3.0 * p.v0 * r0**3
        return np.where(small, vol * (1.0 - 0.1 * qr * qr), val)
    raise UnsupportedVariantError(p.kind)


def born_parameter(p: PotentialSpec, k):
    """Dimensionless weak-coupling estimate |v0| a_eff^2 (1 + 1/(k a_eff)).

    Heuristic size of the relative first-order Born truncation error; linear in
    the strength, growing at low energy.
    """
    if k <= 0:
        raise ConfigError("born_parameter requires k > 0")
    if p.kind == ZERO:
        return 0.0
    a = p.range
    return abs(p.v0) * a * a * (1.0 + 1.0 / (k * a))


def sample_on_grid(p: PotentialSpec, grid, well_smoothing=2.0):
    """V sampled on the grid, as an (n, n, n) array.

    The discontinuous square well is smoothed by convolution with a Gaussian of
    width well_smoothing * dx (analytic closed form) to control grid ringing.
    """
    r = grid.radius_grid()
    if p.kind != SQUARE_WELL:
        return evaluate(p, r)
    w = well_smoothing * grid.dx
    if w == 0.0:
        return evaluate(p, r)
    return smoothed_square_well(p.v0, p.range, w, r)


def smoothed_square_well(v0, r0, w, r):
    """3-D convolution of the filled ball of depth v0 with a Gaussian of width w."""
    r = np.asarray(r, dtype=float)
    rs = np.where(r < 1e-12 * r0, 1e-12 * r0, r)
    s2 = np.sqrt(2.0) * w
    term_erf = 0.5 * (erf((r0 - rs) / s2) + erf((r0 + rs) / s2))
    term_gauss = (w / (rs * np.sqrt(2.0 * np.pi))) * (
        np.exp(-((rs - r0) ** 2) / (2.0 * w * w)) - np.exp(-((rs + r0) ** 2) / (2.0 * w * w))
    )
    return v0 * (term_erf - term_gauss)


def interaction_radius(p: PotentialSpec, floor=1e-6):
    """Radius beyond which |V| < floor * |v0| (0 for the zero potential)."""
    if p.kind == ZERO or p.v0 == 0.0:
        return 0.0
    if p.kind == SQUARE_WELL:
        return p.range
    return p.range * np.sqrt(-2.0 * np.log(floor))
