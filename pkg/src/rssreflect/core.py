"""Link geometry and the reflected-signal perturbation of RSS in dB.

A person standing near (but not on) the line of sight adds a single-bounce
path whose length exceeds the LoS distance ``d`` by ``delta``. In log scale
the perturbation is a periodic function of inverse wavelength ``beta`` with
period ``1/delta`` and Fourier coefficients ``-2 * E_HAT * A**i / i``.

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .specfun import dilog

#: 10 * log10(e); converts natural log to dB.
E_HAT = 10.0 * math.log10(math.e)

#: Propagation speed used throughout the numerical examples (m/s).
C0_DEFAULT = 3.0e8

ETA_DEFAULT = 3.0

ZetaMode = Literal["closed", "series", "two_term"]

SERIES_TERMS_DEFAULT = 60


@dataclass(frozen=True)
class LinkGeometry:
    """TX and RX positions in the plane (meters)."""

    p_t: tuple[float, float] = (0.0, 0.0)
    p_r: tuple[float, float] = (3.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "p_t", (float(self.p_t[0]), float(self.p_t[1])))
        object.__setattr__(self, "p_r", (float(self.p_r[0]), float(self.p_r[1])))
        if self.d <= 0.0:
            raise ValueError("TX and RX positions must differ")

    @property
    def d(self) -> float:
        """LoS distance between TX and RX."""
        return math.hypot(self.p_r[0] - self.p_t[0], self.p_r[1] - self.p_t[1])

    @classmethod
    def from_distance(cls, d: float) -> "LinkGeometry":
        """TX at the origin, RX on the positive x axis."""
        return cls((0.0, 0.0), (float(d), 0.0))


@dataclass(frozen=True)
class ReflectionParams:
    """Reflector description: coefficient, path-loss exponent, excess path.

    Fields may be scalars or numpy arrays that broadcast together.
    """

    gamma: float | np.ndarray
    eta: float | np.ndarray = ETA_DEFAULT
    delta: float | np.ndarray = 0.0

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if np.any(g < 0.0) or np.any(g >= 1.0):
            raise ValueError("reflection coefficient must satisfy 0 <= gamma < 1")
        if np.any(np.asarray(self.eta, dtype=float) <= 0.0):
            raise ValueError("path-loss exponent must be positive")
        if np.any(np.asarray(self.delta, dtype=float) < 0.0):
            raise ValueError("excess path length must be non-negative")
        if np.any((g > 0.0) & ((g < 0.2) | (g > 0.7))):
            warnings.warn(
                "reflection coefficient outside the 0.2..0.7 working band",
                stacklevel=3,
            )


def excess_path_length(p, geom: LinkGeometry):
    """Extra distance of the bounce path via point ``p`` over the LoS path.

    ``p`` is a 2-sequence or an array with trailing dimension 2.
    """
    p = np.asarray(p, dtype=float)
    pt = np.asarray(geom.p_t)
    pr = np.asarray(geom.p_r)
    dist = np.linalg.norm(p - pt, axis=-1) + np.linalg.norm(p - pr, axis=-1)
    # Triangle inequality guarantees >= d; clip rounding noise on the segment.
    delta = np.maximum(dist - geom.d, 0.0)
    return float(delta) if delta.ndim == 0 else delta


def inverse_wavelength(frequency_hz, c0: float = C0_DEFAULT):
    """beta = f / c0, in cycles per meter."""
    if c0 <= 0:
        raise ValueError("propagation speed must be positive")
    f = np.asarray(frequency_hz, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    return f / c0


def _ratio(params: ReflectionParams, d):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("LoS distance must be positive")
    return 1.0 + np.asarray(params.delta, dtype=float) / d


def amplitude(params: ReflectionParams, d):
    """Fourier amplitude ``A = gamma * (1 + delta/d)**(-eta/2)``."""
    r = _ratio(params, d)
    return np.asarray(params.gamma, dtype=float) * r ** (-np.asarray(params.eta) / 2.0)


def kappa(params: ReflectionParams, d):
    """Depth of the cosine term inside the second logarithm; equals 2A/(1+A^2)."""
    r = _ratio(params, d)
    g = np.asarray(params.gamma, dtype=float)
    half = r ** (np.asarray(params.eta) / 2.0)
    return 2.0 * g * half / (g * g + half * half)


def fourier_coefficients(params: ReflectionParams, d, n_terms: int):
    """Cosine-series coefficients ``b_i = -2 E_HAT A**i / i`` for i = 1..n_terms.

    The trailing axis indexes the harmonic.
    """
    a = np.asarray(amplitude(params, d))[..., None]
    i = np.arange(1, n_terms + 1)
    return -2.0 * E_HAT * a**i / i


def zeta(
    params: ReflectionParams,
    d,
    beta,
    mode: ZetaMode = "closed",
    n_terms: int = SERIES_TERMS_DEFAULT,
):
    """Reflection-induced RSS perturbation in dB.

    Args:
        params: reflector description (broadcasts with ``beta``).
        d: LoS distance in meters.
        beta: inverse wavelength(s) in 1/m.
        mode: ``"closed"`` log form, ``"series"`` truncated cosine series with
            ``n_terms`` harmonics, or ``"two_term"`` (first two harmonics).
    """
    beta = np.asarray(beta, dtype=float)
    delta = np.asarray(params.delta, dtype=float)
    phase = 2.0 * np.pi * delta * beta
    if mode == "closed":
        r = _ratio(params, d)
        g = np.asarray(params.gamma, dtype=float)
        first = 10.0 * np.log10(1.0 + g * g * r ** (-np.asarray(params.eta)))
        second = 10.0 * np.log10(1.0 - kappa(params, d) * np.cos(phase))
        return first + second
    if mode == "two_term":
        n_terms = 2
    elif mode != "series":
        raise ValueError(f"unknown zeta mode {mode!r}")
    if n_terms < 1:
        raise ValueError("series needs at least one term")
    a = np.asarray(amplitude(params, d))
    out = np.zeros(np.broadcast(a, phase).shape)
    a_pow = np.ones_like(a)
    for i in range(1, n_terms + 1):
        a_pow = a_pow * a
        out = out + a_pow / i * np.cos(i * phase)
    return -2.0 * E_HAT * out


def signal_power(params: ReflectionParams, d):
    """Sum of squared Fourier coefficients, ``4 E_HAT**2 Li2(A**2)``.

    This is twice the period-averaged value of ``zeta**2``.
    """
    a2 = np.asarray(amplitude(params, d)) ** 2
    return 4.0 * E_HAT**2 * dilog(a2)


def two_harmonic_fraction(params: ReflectionParams, d):
    """Share of :func:`signal_power` carried by the first two harmonics."""
    a2 = np.asarray(amplitude(params, d)) ** 2
    li = np.asarray(dilog(a2))
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = (a2 + a2 * a2 / 4.0) / li
    # A -> 0 limit: the first harmonic carries everything.
    return np.where(a2 > 0.0, frac, 1.0)
