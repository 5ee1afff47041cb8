"""Small RF conversion helpers shared across the package."""

from __future__ import annotations

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


def wavelength_m(frequency_hz: float) -> float:
    return SPEED_OF_LIGHT / frequency_hz


def fspl_db(frequency_hz: float, tau_s) -> float:
    """Free-space path loss 20*log10(4*pi*f*tau) in dB.

    tau_s is the one-way propagation delay; f*tau equals distance/wavelength.
    """
    return 20.0 * np.log10(4.0 * np.pi * frequency_hz * np.asarray(tau_s, dtype=float))


def circular_diff_deg(a, b):
    """Smallest absolute angular difference between azimuths, in [0, 180]."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.where(d > 180.0, 360.0 - d, d)


def in_circular_interval_deg(angle, center, half_width) -> np.ndarray:
    """True where `angle` lies within center +/- half_width on the circle."""
    return circular_diff_deg(angle, center) <= half_width
