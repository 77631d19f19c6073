"""Seeded Monte Carlo harness and characteristic-function oracles.

Random numbers come from numpy's PCG64 generator seeded per block of
``block_size`` trials with ``SeedSequence(seed, spawn_key=(block,))``;
normals are drawn with ``Generator.standard_normal`` (ziggurat). Any trial
range therefore reproduces the same values no matter how a run is split.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import ReflectionParams, zeta
from .energy import ChannelSet

BLOCK_SIZE = 8192


@dataclass(frozen=True)
class SimSpec:
    """Everything needed to draw synthetic measurement vectors.

    Each trial is one sweep ``z_l = zeta(beta_l) + nu_l`` with i.i.d.
    ``nu_l ~ N(0, sigma**2)``.
    """

    params: ReflectionParams
    d: float
    channels: ChannelSet
    sigma: float
    trials: int
    seed: int = 0
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if not self.sigma > 0:
            raise ValueError("noise std must be positive")
        if self.block_size < 1:
            raise ValueError("block size must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def signal(self) -> np.ndarray:
        """Noise-free perturbation vector (dB) over the channel set."""
        return np.asarray(zeta(self.params, self.d, self.channels.betas, "closed"), dtype=float)


def _block_noise(seed: int, block: int, rows: int, cols: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal((rows, cols))


def simulate_measurements(spec: SimSpec, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Trials ``start..stop-1`` as a (trials, C) matrix of dB values."""
    stop = spec.trials if stop is None else stop
    if not 0 <= start <= stop <= spec.trials:
        raise ValueError("trial range out of bounds")
    c = spec.channels.count
    bs = spec.block_size
    out = np.empty((stop - start, c))
    if stop == start:
        return out
    signal = spec.signal()
    for block in range(start // bs, (stop - 1) // bs + 1):
        b0 = block * bs
        noise = _block_noise(spec.seed, block, bs, c)
        lo, hi = max(start, b0), min(stop, b0 + bs)
        out[lo - start : hi - start] = signal + spec.sigma * noise[lo - b0 : hi - b0]
    return out


def simulate_energies(spec: SimSpec) -> np.ndarray:
    """Detector statistic ``sum_l z_l**2`` for every trial."""
    out = np.empty(spec.trials)
    step = spec.block_size * 16
    for start in range(0, spec.trials, step):
        stop = min(spec.trials, start + step)
        z = simulate_measurements(spec, start, stop)
        out[start:stop] = np.einsum("ij,ij->i", z, z)
    return out


@dataclass(frozen=True)
class RateSummary:
    trials: int
    detections: int
    detection_rate: float
    mean_energy: float

    def binomial_std(self, p: float) -> float:
        """Std of an empirical rate over ``trials`` draws at true rate ``p``."""
        return math.sqrt(p * (1.0 - p) / self.trials)


def empirical_rates(spec: SimSpec, threshold: float) -> RateSummary:
    """Fraction of trials whose energy strictly exceeds ``threshold``."""
    e = simulate_energies(spec)
    n = int(np.count_nonzero(e > threshold))
    return RateSummary(spec.trials, n, n / spec.trials, float(e.mean()))


@dataclass(frozen=True)
class QuadraticFormSpec:
    """``y = sum x_i**2`` for independent ``x_i ~ N(means_i, variances_i)``."""

    means: tuple[float, ...]
    variances: tuple[float, ...]

    def __post_init__(self):
        m = tuple(float(v) for v in np.atleast_1d(self.means))
        v = tuple(float(v) for v in np.atleast_1d(self.variances))
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        if len(m) != len(v) or not m:
            raise ValueError("means and variances must be non-empty and of equal length")
        if any(not s > 0 for s in v):
            raise ValueError("variances must be positive")

    @classmethod
    def iid(cls, n: int, variance: float, means=None) -> "QuadraticFormSpec":
        means = np.zeros(n) if means is None else means
        return cls(tuple(means), (variance,) * n)


def quadratic_cf(spec: QuadraticFormSpec, omega):
    """Characteristic function ``E[exp(j omega y)]`` of the quadratic form."""
    w = np.asarray(omega, dtype=float)[..., None]
    m2 = np.square(spec.means)
    v = np.asarray(spec.variances)
    den = 1.0 - 2j * w * v
    out = np.prod(np.exp(1j * w * m2 / den) / np.sqrt(den), axis=-1)
    return complex(out) if out.ndim == 0 else out


class CFInversionError(ArithmeticError):
    """Numerical inversion failed to reach the requested tolerance."""


def sf_via_cf_inversion(spec: QuadraticFormSpec, x: float, tol: float = 1e-8) -> float:
    """``P{y > x}`` by Gil-Pelaez inversion of :func:`quadratic_cf`.

    ``sf = 1/2 + (1/pi) int_0^inf Im[exp(-j w x) psi(w)] / w dw``. The first
    oscillation period is integrated directly; the semi-infinite remainder
    uses QUADPACK's Fourier-integral routine on the smooth factors of
    ``psi``. Raises :class:`CFInversionError` when the error estimate
    exceeds ``tol``.
    """
    x = float(x)
    if not x > 0:
        raise ValueError("x must be positive")
    mean = float(np.sum(np.square(spec.means)) + np.sum(spec.variances))

    def head(w):
        if w == 0.0:
            return mean - x
        return (np.exp(-1j * w * x) * quadratic_cf(spec, w)).imag / w

    def im_part(w):
        return quadratic_cf(spec, w).imag / w

    def re_part(w):
        return quadratic_cf(spec, w).real / w

    w0 = 2.0 * math.pi / x
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            i0, e0 = integrate.quad(head, 0.0, w0, epsabs=tol / 10, epsrel=1e-12, limit=500)
            i1, e1 = integrate.quad(im_part, w0, np.inf, weight="cos", wvar=x, epsabs=tol / 10, limlst=200)
            i2, e2 = integrate.quad(re_part, w0, np.inf, weight="sin", wvar=x, epsabs=tol / 10, limlst=200)
        except integrate.IntegrationWarning as exc:
            raise CFInversionError(str(exc)) from exc
    err = (e0 + e1 + e2) / math.pi
    if not err <= tol:
        raise CFInversionError(f"quadrature error estimate {err:.3g} exceeds {tol:.3g}")
    return min(max(0.5 + (i0 + i1 - i2) / math.pi, 0.0), 1.0)
