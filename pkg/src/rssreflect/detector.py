"""Neyman-Pearson energy detector on baseline-subtracted multi-channel RSS.

Under the vacant hypothesis the detector statistic ``sum(z_l**2)`` is a
scaled central chi-square with ``C`` degrees of freedom; with a reflector it
is non-central with non-centrality equal to the reflected-signal energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .specfun import inv_reg_upper_gamma, noncentral_chi2_sf, reg_upper_gamma

PF_DEFAULT = 6e-6


def _check(count: int, sigma: float):
    if int(count) != count or count < 1:
        raise ValueError("channel count must be a positive integer")
    if not sigma > 0:
        raise ValueError("noise std must be positive")


def threshold_for_pf(count: int, sigma: float, pf: float) -> float:
    """Energy threshold giving false-alarm probability ``pf``."""
    _check(count, sigma)
    if not 0.0 < pf < 1.0:
        raise ValueError("false-alarm probability must lie in (0, 1)")
    return 2.0 * sigma * sigma * inv_reg_upper_gamma(count / 2.0, pf)


def prob_false_alarm(count: int, sigma: float, threshold):
    _check(count, sigma)
    return reg_upper_gamma(count / 2.0, np.asarray(threshold, dtype=float) / (2.0 * sigma * sigma))


def prob_detection(count: int, sigma: float, signal_energy, threshold):
    """P{sum (zeta_l + nu_l)**2 > threshold}; broadcasts over energy and threshold."""
    _check(count, sigma)
    return noncentral_chi2_sf(threshold, int(count), sigma * sigma, signal_energy)


def roc_point(count: int, sigma: float, signal_energy, pf: float):
    """Detection probability at the threshold that yields ``pf``."""
    return prob_detection(count, sigma, signal_energy, threshold_for_pf(count, sigma, pf))


@dataclass(frozen=True)
class DetectorConfig:
    """Channel count, noise std (dB), target false-alarm rate and threshold."""

    count: int
    sigma: float
    target_pf: float = PF_DEFAULT
    threshold: float = field(default=float("nan"))

    def __post_init__(self):
        _check(self.count, self.sigma)
        if not 0.0 < self.target_pf < 1.0:
            raise ValueError("false-alarm probability must lie in (0, 1)")
        if np.isnan(self.threshold):
            object.__setattr__(
                self, "threshold", threshold_for_pf(self.count, self.sigma, self.target_pf)
            )
        elif not self.threshold > 0:
            raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class Decision:
    energy: float
    threshold: float
    occupied: bool


def decide(z, threshold: float, count: int | None = None) -> Decision:
    """Energy test on one vector of baseline-subtracted measurements.

    Occupied only if the energy strictly exceeds the threshold.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("expected a one-dimensional measurement vector")
    if count is not None and z.size != count:
        raise ValueError(f"expected {count} channel values, got {z.size}")
    e = float(np.dot(z, z))
    return Decision(e, float(threshold), e > threshold)


def decide_many(z, threshold: float):
    """Vectorized :func:`decide` over the rows of ``z``; returns (energies, occupied)."""
    z = np.asarray(z, dtype=float)
    e = np.einsum("...l,...l->...", z, z)
    return e, e > threshold
