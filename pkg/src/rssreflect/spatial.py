"""Detection-probability maps around a link and TX-RX distance planning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ETA_DEFAULT, LinkGeometry, ReflectionParams, excess_path_length
from .detector import roc_point, threshold_for_pf
from .energy import ChannelSet, energy


@dataclass(frozen=True)
class GridSpec:
    """Rectangular region sampled at cell centres."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid extents must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        ny = int(round((self.y_max - self.y_min) / self.resolution))
        nx = int(round((self.x_max - self.x_min) / self.resolution))
        return max(ny, 1), max(nx, 1)

    def centres(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) coordinate vectors of the cell centres."""
        ny, nx = self.shape
        xs = self.x_min + (np.arange(nx) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(ny) + 0.5) * self.resolution
        return xs, ys

    @classmethod
    def around_link(cls, geom: LinkGeometry, width: float, height: float, resolution: float):
        """Axis-aligned box of the given size centred on the LoS midpoint."""
        cx = 0.5 * (geom.p_t[0] + geom.p_r[0])
        cy = 0.5 * (geom.p_t[1] + geom.p_r[1])
        return cls(cx - width / 2, cx + width / 2, cy - height / 2, cy + height / 2, resolution)


@dataclass(frozen=True)
class PdMap:
    """Per-cell excess path, energy, detection probability and validity.

    Arrays are indexed ``[iy, ix]``. ``valid`` is False where the excess
    path is shorter than one mean wavelength, i.e. the person would be on
    or right next to the LoS where shadowing, not reflection, dominates.
    """

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    energy: np.ndarray
    pd: np.ndarray
    valid: np.ndarray
    geom: LinkGeometry
    gamma: float
    eta: float
    channels: ChannelSet
    sigma: float
    pf: float

    def records(self):
        """Yield one dict per cell, row-major."""
        for iy, yv in enumerate(self.y):
            for ix, xv in enumerate(self.x):
                yield {
                    "x_m": float(xv),
                    "y_m": float(yv),
                    "delta_m": float(self.delta[iy, ix]),
                    "energy_db2": float(self.energy[iy, ix]),
                    "pd": float(self.pd[iy, ix]),
                    "valid": bool(self.valid[iy, ix]),
                }


def pd_at_delta(delta, gamma: float, d: float, channels: ChannelSet, sigma: float, pf: float, eta: float = ETA_DEFAULT):
    """Detection probability for reflectors at excess path ``delta`` (exact energy)."""
    e = energy(ReflectionParams(gamma, eta, np.asarray(delta, dtype=float)), d, channels, "exact")
    return roc_point(channels.count, sigma, e, pf), e


def pd_map(
    geom: LinkGeometry,
    grid: GridSpec,
    gamma: float,
    channels: ChannelSet,
    sigma: float,
    pf: float,
    eta: float = ETA_DEFAULT,
) -> PdMap:
    """Detection probability for a reflector at each grid-cell centre."""
    xs, ys = grid.centres()
    pts = np.stack(np.meshgrid(xs, ys), axis=-1)
    delta = excess_path_length(pts, geom)
    pd, e = pd_at_delta(delta, gamma, geom.d, channels, sigma, pf, eta)
    valid = delta >= 1.0 / channels.beta_mean
    return PdMap(xs, ys, delta, np.asarray(e), np.asarray(pd), valid, geom, gamma, eta, channels, sigma, pf)


@dataclass(frozen=True)
class PlanResult:
    """Outcome of :func:`plan_distance`.

    ``distance`` is the smallest feasible TX-RX distance, or None when the
    target cannot be met in the search range; ``achieved_pd`` is the worst
    detection probability over the excess-path band at ``distance`` (or the
    best achievable one at the top of the range if infeasible).
    """

    feasible: bool
    distance: float | None
    achieved_pd: float
    target_pd: float


def _average_energy(delta, gamma, eta, d, count):
    return energy(ReflectionParams(gamma, eta, delta), d, ChannelSet.uniform(count=count), "average")


def worst_band_pd(d: float, delta_band, gamma: float, eta: float, count: int, sigma: float, pf: float, n_band: int = 201):
    """Minimum over the excess-path band of the ROC detection probability."""
    deltas = np.linspace(delta_band[0], delta_band[1], n_band)
    e = _average_energy(deltas, gamma, eta, d, count)
    return float(np.min(roc_point(count, sigma, e, pf)))


def plan_distance(
    target_pd: float,
    pf: float,
    delta_band,
    gamma: float,
    count: int,
    sigma: float,
    d_range=(0.5, 20.0),
    eta: float = ETA_DEFAULT,
    tol: float = 1e-9,
    n_band: int = 201,
) -> PlanResult:
    """Smallest TX-RX distance whose whole excess-path band meets ``target_pd``.

    Uses the channel-averaged energy, which grows with ``d`` for fixed
    excess path, and bisects on ``d``.
    """
    lo_d, hi_d = float(d_range[0]), float(d_range[1])
    if not 0 < lo_d < hi_d:
        raise ValueError("distance range must be positive and increasing")
    if not 0 <= delta_band[0] <= delta_band[1]:
        raise ValueError("excess-path band must satisfy 0 <= lo <= hi")
    if not 0.0 < target_pd <= 1.0:
        raise ValueError("target detection probability must lie in (0, 1]")
    threshold_for_pf(count, sigma, pf)

    probe = np.linspace(lo_d, hi_d, 33)
    deltas = np.linspace(delta_band[0], delta_band[1], n_band)
    e_probe = _average_energy(deltas[None, :], gamma, eta, probe[:, None], count)
    if np.any(np.diff(e_probe, axis=0) < -1e-12 * np.abs(e_probe[1:])):
        raise ArithmeticError("average energy is not monotone in d over the search range")

    def f(d):
        return worst_band_pd(d, delta_band, gamma, eta, count, sigma, pf, n_band)

    at_lo = f(lo_d)
    if at_lo >= target_pd:
        return PlanResult(True, lo_d, at_lo, target_pd)
    at_hi = f(hi_d)
    if at_hi < target_pd:
        return PlanResult(False, None, at_hi, target_pd)
    a, b, fb = lo_d, hi_d, at_hi
    while b - a > tol * b:
        m = 0.5 * (a + b)
        fm = f(m)
        if fm >= target_pd:
            b, fb = m, fm
        else:
            a = m
    return PlanResult(True, b, fb, target_pd)
