"""Polarization-dependent reflection from finite-thickness dielectric slabs.

Follows the ITU-R P.2040 single-layer slab formulation. All functions use the
e^{+j w t} time convention: a lossy relative permittivity is written
eta = eta' - j*eta'' with eta'' >= 0, and the principal square root of
(eta - sin^2 theta0) then has non-positive imaginary part, so the transmitted
wave decays and |R| <= 1 for passive materials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TE = "TE"
TM = "TM"


@dataclass(frozen=True)
class ReflectionQuery:
    """Inputs of one slab-reflection evaluation.

    theta0 is the incidence angle from the surface normal in radians;
    wavelength and thickness are in meters.
    """

    eta: complex
    thickness_d: float
    theta0: float
    wavelength_lambda: float
    polarization: str = TE

    def __post_init__(self):
        if not (0.0 <= self.theta0 < math.pi / 2):
            raise ValueError(f"theta0 must be in [0, pi/2), got {self.theta0}")
        if self.wavelength_lambda <= 0.0:
            raise ValueError("wavelength must be > 0")
        if self.thickness_d <= 0.0:
            raise ValueError("thickness must be > 0")
        if self.polarization not in (TE, TM):
            raise ValueError(f"polarization must be TE or TM, got {self.polarization!r}")


def _transverse_root(eta, theta0):
    # principal branch: Im <= 0 for lossy eta under the e^{+jwt} convention
    return np.sqrt(eta - np.sin(theta0) ** 2)


def _fresnel_np(eta, theta0, polarization):
    root = _transverse_root(eta, theta0)
    c0 = np.cos(theta0)
    if polarization == TE:
        return (c0 - root) / (c0 + root)
    return (eta * c0 - root) / (eta * c0 + root)


def _slab_np(eta, thickness_d, theta0, wavelength_lambda, polarization):
    """Array-capable slab reflection; all inputs broadcast together."""
    rp = _fresnel_np(eta, theta0, polarization)
    q = 2.0 * np.pi * thickness_d / wavelength_lambda * _transverse_root(eta, theta0)
    phase = np.exp(-2j * q)
    return rp * (1.0 - phase) / (1.0 - rp * rp * phase)


def fresnel_coefficient(q: ReflectionQuery) -> complex:
    """Single-interface reflection coefficient R' for the query polarization.

    TE: (cos t0 - root) / (cos t0 + root)
    TM: (eta cos t0 - root) / (eta cos t0 + root), root = sqrt(eta - sin^2 t0)
    """
    return complex(_fresnel_np(q.eta, q.theta0, q.polarization))


def phase_thickness(q: ReflectionQuery) -> complex:
    """Complex slab phase thickness q = (2 pi d / lambda) * sqrt(eta - sin^2 t0)."""
    return complex(
        2.0 * np.pi * q.thickness_d / q.wavelength_lambda
        * _transverse_root(q.eta, q.theta0)
    )


def slab_reflection(q: ReflectionQuery) -> complex:
    """Finite-thickness slab reflection R = R'(1 - e^{-j2q}) / (1 - R'^2 e^{-j2q})."""
    return complex(
        _slab_np(q.eta, q.thickness_d, q.theta0, q.wavelength_lambda, q.polarization)
    )


def reflection_loss_db(q: ReflectionQuery) -> float:
    """Reflection loss -20*log10|R| in dB; +inf when the slab reflects nothing."""
    mag = abs(slab_reflection(q))
    if mag == 0.0:
        return math.inf
    return -20.0 * math.log10(mag)


def unpolarized_reflection_loss_db(
    eta: complex, thickness_d: float, theta0: float, wavelength_lambda: float
) -> float:
    """Reflection loss of the unpolarized power average (|R_TE|^2 + |R_TM|^2)/2.

    This is the per-bounce loss convention used by the ray tracer when no
    polarization is pinned.
    """
    r_te = slab_reflection(ReflectionQuery(eta, thickness_d, theta0, wavelength_lambda, TE))
    r_tm = slab_reflection(ReflectionQuery(eta, thickness_d, theta0, wavelength_lambda, TM))
    power = 0.5 * (abs(r_te) ** 2 + abs(r_tm) ** 2)
    if power == 0.0:
        return math.inf
    return -10.0 * math.log10(power)


def bounce_loss_db(
    eta: complex,
    thickness_d: float,
    theta0: float,
    wavelength_lambda: float,
    polarization: str | None = None,
) -> float:
    """Per-bounce reflection loss in dB, unpolarized unless a polarization is pinned."""
    if polarization is None:
        return unpolarized_reflection_loss_db(eta, thickness_d, theta0, wavelength_lambda)
    return reflection_loss_db(
        ReflectionQuery(eta, thickness_d, theta0, wavelength_lambda, polarization)
    )


def bounce_loss_db_array(eta, thickness_d, theta0, wavelength_lambda, polarization=None):
    """Vectorized bounce_loss_db over broadcastable arrays; inf marks zero reflection."""
    if polarization is None:
        power = 0.5 * (
            np.abs(_slab_np(eta, thickness_d, theta0, wavelength_lambda, TE)) ** 2
            + np.abs(_slab_np(eta, thickness_d, theta0, wavelength_lambda, TM)) ** 2
        )
    else:
        power = np.abs(_slab_np(eta, thickness_d, theta0, wavelength_lambda, polarization)) ** 2
    with np.errstate(divide="ignore"):
        return -10.0 * np.log10(power)


def bounce_phase_array(eta, thickness_d, theta0, wavelength_lambda, polarization):
    """Unit-modulus phase factor of the slab coefficient for a pinned polarization."""
    r = _slab_np(eta, thickness_d, theta0, wavelength_lambda, polarization)
    mag = np.abs(r)
    return np.where(mag > 0.0, r / np.where(mag == 0.0, 1.0, mag), 1.0 + 0j)
