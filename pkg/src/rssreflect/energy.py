"""Reflected-signal energy summed over a set of carrier frequencies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import C0_DEFAULT, E_HAT, ReflectionParams, amplitude, zeta

EnergyMode = Literal["exact", "exact_two_term", "closed_two_term", "average"]

IEEE_802154_START_HZ = 2.405e9
IEEE_802154_SPACING_HZ = 5.0e6
IEEE_802154_COUNT = 16

# Below this |sin| the Dirichlet ratio is replaced by its limit.
_SINGULAR_SIN = 1e-12


@dataclass(frozen=True)
class ChannelSet:
    """Ordered carrier frequencies (Hz) and the propagation speed (m/s).

    Use :meth:`uniform` for the usual evenly spaced band; :meth:`subset`
    picks channels by 0-based index and may produce uneven spacing.
    """

    frequencies: tuple[float, ...]
    c0: float = C0_DEFAULT

    def __post_init__(self):
        f = tuple(float(v) for v in np.atleast_1d(self.frequencies))
        object.__setattr__(self, "frequencies", f)
        if not f:
            raise ValueError("channel set is empty")
        if self.c0 <= 0:
            raise ValueError("propagation speed must be positive")
        if f[0] <= 0 or any(b <= a for a, b in zip(f, f[1:])):
            raise ValueError("frequencies must be positive and strictly increasing")

    @classmethod
    def uniform(
        cls,
        start_frequency: float = IEEE_802154_START_HZ,
        spacing: float = IEEE_802154_SPACING_HZ,
        count: int = IEEE_802154_COUNT,
        c0: float = C0_DEFAULT,
    ) -> "ChannelSet":
        if count < 1:
            raise ValueError("channel count must be positive")
        if count > 1 and spacing <= 0:
            raise ValueError("channel spacing must be positive")
        return cls(tuple(start_frequency + spacing * np.arange(count)), c0)

    def subset(self, indices) -> "ChannelSet":
        idx = sorted(int(i) for i in indices)
        if len(set(idx)) != len(idx) or idx[0] < 0 or idx[-1] >= self.count:
            raise ValueError(f"invalid channel indices {indices!r}")
        return ChannelSet(tuple(self.frequencies[i] for i in idx), self.c0)

    @property
    def count(self) -> int:
        return len(self.frequencies)

    @property
    def start_frequency(self) -> float:
        return self.frequencies[0]

    @property
    def spacing(self) -> float | None:
        """Uniform spacing in Hz, or None if the set is not evenly spaced."""
        if self.count == 1:
            return 0.0
        diffs = np.diff(self.frequencies)
        if np.allclose(diffs, diffs[0], rtol=1e-9, atol=0.0):
            return float(diffs[0])
        return None

    @property
    def betas(self) -> np.ndarray:
        return np.asarray(self.frequencies) / self.c0

    @property
    def xi(self) -> float:
        """Spacing in inverse wavelength (1/m)."""
        sp = self.spacing
        if sp is None:
            raise ValueError("channel set is not uniformly spaced")
        return sp / self.c0

    @property
    def beta_mean(self) -> float:
        return float(np.mean(self.betas))


def spread_subset(n_total: int, count: int) -> list[int]:
    """Indices of ``count`` channels out of ``n_total`` with widest spread.

    Keeps the mean index (hence mean frequency) at the band centre: for 16
    channels, 2 -> [0, 15], 4 -> [0, 5, 10, 15].
    """
    if not 1 <= count <= n_total:
        raise ValueError("subset size must be between 1 and the channel count")
    if count == 1:
        if n_total % 2 == 0:
            raise ValueError("a single channel cannot sit at an even band's centre")
        return [n_total // 2]
    pos = np.arange(count) * (n_total - 1) / (count - 1)
    half = count // 2
    low = [int(np.floor(v + 0.5)) for v in pos[:half]]
    mid = [int(np.floor(pos[half] + 0.5))] if count % 2 else []
    # Mirror so the selection stays symmetric about the band centre.
    high = [n_total - 1 - i for i in reversed(low)]
    return low + mid + high


def _dirichlet(k: int, delta, xi: float, count: int):
    """sin(k pi delta C xi) / sin(k pi delta xi) with its removable limits."""
    x = k * np.pi * np.asarray(delta, dtype=float) * xi
    s = np.sin(x)
    m = np.round(x / np.pi)
    # Near x = m*pi the ratio tends to C * (-1)**(m*(C-1)).
    limit = count * np.where((m * (count - 1)) % 2 == 0, 1.0, -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sin(count * x) / s
    return np.where(np.abs(s) < _SINGULAR_SIN, limit, ratio)


def energy(
    params: ReflectionParams,
    d,
    channels: ChannelSet,
    mode: EnergyMode = "exact",
):
    """Energy of the dB perturbation over ``channels``.

    Modes:
        exact: sum of squared closed-form perturbations.
        exact_two_term: same sum using the two-harmonic perturbation.
        closed_two_term: Dirichlet-kernel closed form of ``exact_two_term``
            (needs uniform spacing).
        average: ``4 E_HAT**2 C (a1**2 + a2**2) / 2``, the mean level the
            two-harmonic energy oscillates about.

    Broadcasts over array-valued reflection parameters.
    """
    count = channels.count
    if mode in ("exact", "exact_two_term"):
        zmode = "closed" if mode == "exact" else "two_term"
        delta = np.asarray(params.delta, dtype=float)[..., None]
        p = ReflectionParams(
            np.asarray(params.gamma)[..., None], np.asarray(params.eta)[..., None], delta
        )
        z = zeta(p, np.asarray(d)[..., None], channels.betas, zmode)
        out = np.sum(z * z, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    a1 = np.asarray(amplitude(params, d), dtype=float)
    a2 = a1 * a1 / 2.0
    base = count * (a1 * a1 + a2 * a2) / 2.0
    if mode == "average":
        out = 4.0 * E_HAT**2 * base
        return float(out) if np.ndim(out) == 0 else out
    if mode != "closed_two_term":
        raise ValueError(f"unknown energy mode {mode!r}")

    delta = np.asarray(params.delta, dtype=float)
    xi = channels.xi
    ph = 2.0 * np.pi * delta * channels.beta_mean
    total = (
        base
        + a1 * a2 * np.cos(ph) * _dirichlet(1, delta, xi, count)
        + a1 * a1 / 2.0 * np.cos(2.0 * ph) * _dirichlet(2, delta, xi, count)
        + a1 * a2 * np.cos(3.0 * ph) * _dirichlet(3, delta, xi, count)
        + a2 * a2 / 2.0 * np.cos(4.0 * ph) * _dirichlet(4, delta, xi, count)
    )
    out = 4.0 * E_HAT**2 * total
    return float(out) if np.ndim(out) == 0 else out


def snr(signal_energy, count: int, sigma: float):
    """Per-channel signal-to-noise ratio ``E / (C sigma**2)``."""
    if count < 1:
        raise ValueError("channel count must be positive")
    if sigma <= 0:
        raise ValueError("noise std must be positive")
    out = np.asarray(signal_energy, dtype=float) / (count * sigma * sigma)
    return float(out) if out.ndim == 0 else out
