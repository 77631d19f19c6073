"""Trace processing: ingestion, baseline, low-pass filtering, calibration, detection.

Trace files are UTF-8 text with one record per line::

    # timestamp_s, channel_index, rss_dbm[, label]
    0.000, 0, -41.52
    0.002, 1, -42.07

Lines starting with ``#`` are comments. Fields are separated by commas or
whitespace (detected from the first data line). The optional fourth column
is an integer annotation such as a grid-point id; ``-1`` means none.

One detection window is one sweep over all channels: records are binned by
``floor((t - t0) / sweep_period)``, reordered by channel index, and the
latest record wins when a channel repeats inside a sweep.
"""

from __future__ import annotations

import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .core import ETA_DEFAULT, LinkGeometry, ReflectionParams, excess_path_length, zeta
from .detector import DetectorConfig, threshold_for_pf
from .energy import ChannelSet

log = logging.getLogger(__name__)

SWEEP_PERIOD_S = 0.032
CHANNEL_RATE_HZ = 1.0 / SWEEP_PERIOD_S
FIR_TAPS_DEFAULT = 65
FIR_CUTOFF_HZ = 1.0
NO_LABEL = -1


class RssRecord(NamedTuple):
    timestamp: float
    channel: int
    rss: float
    label: int = NO_LABEL


@dataclass
class RssTrace:
    """Column-oriented trace; arrays share one length."""

    timestamp: np.ndarray
    channel: np.ndarray
    rss: np.ndarray
    label: np.ndarray = field(default=None)

    def __post_init__(self):
        self.timestamp = np.asarray(self.timestamp, dtype=float)
        self.channel = np.asarray(self.channel, dtype=np.int64)
        self.rss = np.asarray(self.rss, dtype=float)
        if self.label is None:
            self.label = np.full(self.timestamp.shape, NO_LABEL, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)
        n = self.timestamp.size
        if not (self.channel.size == self.rss.size == self.label.size == n):
            raise ValueError("trace columns differ in length")
        if np.any(self.channel < 0):
            raise ValueError("channel index must be non-negative")

    def __len__(self):
        return self.timestamp.size

    @classmethod
    def from_records(cls, records: Iterable[RssRecord]) -> "RssTrace":
        recs = [RssRecord(*r) for r in records]
        if not recs:
            return cls(np.empty(0), np.empty(0, dtype=np.int64), np.empty(0))
        t, c, r, lab = zip(*recs)
        return cls(np.array(t), np.array(c), np.array(r), np.array(lab))

    def records(self):
        for t, c, r, lab in zip(self.timestamp, self.channel, self.rss, self.label):
            yield RssRecord(float(t), int(c), float(r), int(lab))

    @staticmethod
    def concat(traces: Iterable["RssTrace"]) -> "RssTrace":
        traces = list(traces)
        return RssTrace(
            np.concatenate([t.timestamp for t in traces]),
            np.concatenate([t.channel for t in traces]),
            np.concatenate([t.rss for t in traces]),
            np.concatenate([t.label for t in traces]),
        )


def read_trace(source) -> RssTrace:
    """Parse a trace from a path or text stream."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_trace(fh)
    rows = []
    delim: str | None = None
    for lineno, line in enumerate(source, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if delim is None:
            delim = "," if "," in line else ""
        parts = [p for p in (line.split(",") if delim else line.split()) if p.strip() != ""]
        if len(parts) not in (3, 4):
            raise ValueError(f"line {lineno}: expected 3 or 4 fields, got {len(parts)}")
        try:
            rows.append(
                (
                    float(parts[0]),
                    int(parts[1]),
                    float(parts[2]),
                    int(parts[3]) if len(parts) == 4 else NO_LABEL,
                )
            )
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return RssTrace.from_records(rows)


def write_trace(trace: RssTrace, dest) -> None:
    """Write ``trace`` as comma-separated text with a comment header."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            write_trace(trace, fh)
        return
    dest.write("# timestamp_s,channel_index,rss_dbm,label\n")
    for t, c, r, lab in zip(trace.timestamp, trace.channel, trace.rss, trace.label):
        dest.write(f"{t:.6f},{c},{r:.6f},{lab}\n")


@dataclass(frozen=True)
class BaselineProfile:
    """Per-channel vacant-room mean RSS (dBm), residual std (dB), sample count."""

    mean: tuple[float, ...]
    std: tuple[float, ...]
    count: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.mean) == len(self.std) == len(self.count)) or not self.mean:
            raise ValueError("baseline columns differ in length")
        if min(self.count) < 1:
            raise ValueError("every channel needs at least one sample")
        if min(self.std) < 0:
            raise ValueError("negative residual std")

    @property
    def n_channels(self) -> int:
        return len(self.mean)

    @property
    def samples(self) -> int:
        """Smallest per-channel sample count K."""
        return min(self.count)

    def to_json(self) -> str:
        chans = [
            {"channel_index": i, "mean_dbm": m, "std_db": s, "samples": k}
            for i, (m, s, k) in enumerate(zip(self.mean, self.std, self.count))
        ]
        return json.dumps({"baseline": chans}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BaselineProfile":
        data = json.loads(text)["baseline"]
        data = sorted(data, key=lambda c: c["channel_index"])
        if [c["channel_index"] for c in data] != list(range(len(data))):
            raise ValueError("baseline channel indices must be 0..C-1")
        return cls(
            tuple(float(c["mean_dbm"]) for c in data),
            tuple(float(c["std_db"]) for c in data),
            tuple(int(c["samples"]) for c in data),
        )


def estimate_baseline(trace: RssTrace, n_channels: int | ChannelSet) -> BaselineProfile:
    """Per-channel mean and spread of a vacant-room trace."""
    if isinstance(n_channels, ChannelSet):
        n_channels = n_channels.count
    if np.any(trace.channel >= n_channels):
        raise ValueError(f"trace has channel index >= {n_channels}")
    means, stds, counts = [], [], []
    for ch in range(n_channels):
        vals = trace.rss[trace.channel == ch]
        if vals.size == 0:
            raise ValueError(f"channel {ch} has no samples")
        means.append(float(vals.mean()))
        stds.append(float(vals.std()))
        counts.append(int(vals.size))
    return BaselineProfile(tuple(means), tuple(stds), tuple(counts))


def design_lowpass(
    num_taps: int = FIR_TAPS_DEFAULT,
    cutoff_hz: float = FIR_CUTOFF_HZ,
    sample_rate_hz: float = CHANNEL_RATE_HZ,
) -> np.ndarray:
    """Hamming-windowed sinc low-pass taps with unit DC gain."""
    if num_taps < 1:
        raise ValueError("need at least one tap")
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError("cutoff must lie strictly between 0 and Nyquist")
    fc = cutoff_hz / sample_rate_hz
    n = np.arange(num_taps) - (num_taps - 1) / 2.0
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * np.hamming(num_taps)
    return h / h.sum()


def load_taps(path) -> np.ndarray:
    """Read filter taps separated by commas, whitespace or newlines."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.split("#", 1)[0] for ln in text.splitlines()]
    vals = [float(v) for v in " ".join(lines).replace(",", " ").split()]
    if not vals:
        raise ValueError(f"no filter taps in {path}")
    return np.asarray(vals)


def fir_lowpass(series, taps) -> np.ndarray:
    """Causal FIR filtering, ``y[n] = sum_k taps[k] x[n-k]`` from zero state.

    Output has the input's length; the first ``len(taps) - 1`` samples are
    the start-up transient. Filters along the first axis.
    """
    x = np.asarray(series, dtype=float)
    h = np.asarray(taps, dtype=float)
    if h.ndim != 1 or h.size == 0:
        raise ValueError("taps must be a non-empty vector")
    if x.ndim == 1:
        return np.convolve(x, h)[: x.size]
    return np.stack([np.convolve(col, h)[: x.shape[0]] for col in x.T], axis=1)


class StreamingFir:
    """Sample-by-sample version of :func:`fir_lowpass` with a delay line."""

    def __init__(self, taps):
        self.taps = np.asarray(taps, dtype=float)
        if self.taps.ndim != 1 or self.taps.size == 0:
            raise ValueError("taps must be a non-empty vector")
        self._line = np.zeros(self.taps.size)
        self._pos = 0

    def push(self, sample: float) -> float:
        self._line[self._pos] = sample
        n = self.taps.size
        # taps[k] pairs with the sample pushed k steps ago.
        idx = (self._pos - np.arange(n)) % n
        out = float(np.dot(self.taps, self._line[idx]))
        self._pos = (self._pos + 1) % n
        return out


@dataclass(frozen=True)
class Sweeps:
    """Trace binned into sweeps: ``values[w, l]`` is NaN where channel l is missing."""

    values: np.ndarray
    start_time: np.ndarray
    label: np.ndarray

    def complete(self, channel_indices=None) -> np.ndarray:
        cols = self.values if channel_indices is None else self.values[:, list(channel_indices)]
        return ~np.isnan(cols).any(axis=1)


def assemble_sweeps(
    trace: RssTrace,
    n_channels: int,
    sweep_period: float = SWEEP_PERIOD_S,
    t0: float | None = None,
) -> Sweeps:
    """Bin records into sweep windows of length ``sweep_period``.

    A window's label is the common label of its records, or ``NO_LABEL``
    when they disagree.
    """
    if len(trace) == 0:
        return Sweeps(np.empty((0, n_channels)), np.empty(0), np.empty(0, dtype=np.int64))
    if np.any(trace.channel >= n_channels):
        raise ValueError(f"trace has channel index >= {n_channels}")
    t0 = float(trace.timestamp.min()) if t0 is None else t0
    win = np.floor((trace.timestamp - t0) / sweep_period + 1e-9).astype(np.int64)
    n_win = int(win.max()) + 1
    values = np.full((n_win, n_channels), np.nan)
    # Stable sort by time: later records overwrite earlier ones in a window.
    order = np.argsort(trace.timestamp, kind="stable")
    values[win[order], trace.channel[order]] = trace.rss[order]
    lab_min = np.full(n_win, np.iinfo(np.int64).max)
    lab_max = np.full(n_win, np.iinfo(np.int64).min)
    np.minimum.at(lab_min, win, trace.label)
    np.maximum.at(lab_max, win, trace.label)
    label = np.where(lab_min == lab_max, lab_min, NO_LABEL)
    present = np.zeros(n_win, dtype=bool)
    present[win] = True
    label = np.where(present, label, NO_LABEL)
    return Sweeps(values, t0 + np.arange(n_win) * sweep_period, label)


@dataclass(frozen=True)
class Residuals:
    """Baseline-subtracted (optionally filtered) sweeps on selected channels."""

    values: np.ndarray
    start_time: np.ndarray
    label: np.ndarray
    channel_indices: tuple[int, ...]
    windows: int
    skipped: int
    transient: int


def _runs(labels: np.ndarray):
    """Slices of maximal runs of equal labels."""
    if labels.size == 0:
        return
    edges = np.flatnonzero(np.diff(labels)) + 1
    bounds = np.concatenate([[0], edges, [labels.size]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield slice(int(a), int(b))


def compute_residuals(
    trace: RssTrace,
    baseline: BaselineProfile,
    channel_indices=None,
    taps=None,
    sweep_period: float = SWEEP_PERIOD_S,
) -> Residuals:
    """Sweep, drop incomplete windows, subtract the baseline, optionally filter.

    Filtering runs per channel column and restarts at every change of
    annotation label; the first ``len(taps) - 1`` outputs of each run are
    discarded as start-up transient.
    """
    n = baseline.n_channels
    idx = tuple(range(n)) if channel_indices is None else tuple(int(i) for i in channel_indices)
    if not idx or min(idx) < 0 or max(idx) >= n:
        raise ValueError("channel selection outside the baseline")
    sw = assemble_sweeps(trace, n, sweep_period)
    present = ~np.isnan(sw.values).all(axis=1)
    ok = sw.complete(idx)
    windows = int(present.sum())
    skipped = int((present & ~ok).sum())
    vals = sw.values[ok][:, list(idx)] - np.asarray(baseline.mean)[list(idx)]
    times, labels = sw.start_time[ok], sw.label[ok]
    transient = 0
    if taps is not None:
        taps = np.asarray(taps, dtype=float)
        keep = np.ones(len(vals), dtype=bool)
        out = np.empty_like(vals)
        for run in _runs(labels):
            out[run] = fir_lowpass(vals[run], taps)
            cut = min(run.stop, run.start + taps.size - 1)
            keep[run.start : cut] = False
        transient = int((~keep).sum())
        vals, times, labels = out[keep], times[keep], labels[keep]
    return Residuals(vals, times, labels, idx, windows, skipped, transient)


@dataclass(frozen=True)
class CalibrationResult:
    """Raw residual std and the inflated std used for thresholds."""

    sigma: float
    sigma_hat: float
    count: int
    target_pf: float
    windows: int
    allowed_exceedances: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "sigma_db": self.sigma,
                "sigma_hat_db": self.sigma_hat,
                "channels": self.count,
                "target_pf": self.target_pf,
                "windows": self.windows,
                "allowed_exceedances": self.allowed_exceedances,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        d = json.loads(text)
        return cls(
            float(d["sigma_db"]),
            float(d["sigma_hat_db"]),
            int(d["channels"]),
            float(d["target_pf"]),
            int(d["windows"]),
            int(d["allowed_exceedances"]),
        )


def calibrate_sigma(residuals, count: int, target_pf: float) -> CalibrationResult:
    """Inflate the noise std until empirical false alarms respect ``target_pf``.

    ``residuals`` are vacant-room baseline-subtracted values, either a flat
    sequence (cut into consecutive ``count``-long windows) or a
    (windows, count) matrix. ``sigma_hat`` is the smallest value >= the
    sample std for which no more than ``floor(target_pf * windows)`` window
    energies exceed ``threshold_for_pf(count, sigma_hat, target_pf)``.
    """
    r = np.asarray(residuals, dtype=float)
    if r.ndim == 1:
        n_win = r.size // count
        r = r[: n_win * count].reshape(n_win, count) if n_win else r[:0].reshape(0, count)
    elif r.ndim != 2 or r.shape[1] != count:
        raise ValueError(f"residual matrix must have {count} columns")
    if r.shape[0] < 1:
        raise ValueError(f"need at least {count} residuals for one window")
    if r.size < 100 * count:
        warnings.warn(f"only {r.size} residuals; at least {100 * count} recommended", stacklevel=2)
    sigma = float(r.std())
    e = np.sort(np.einsum("ij,ij->i", r, r))
    allowed = int(math.floor(target_pf * e.size))
    # Threshold scales as sigma**2 times a unit-variance constant.
    unit = threshold_for_pf(count, 1.0, target_pf)
    sigma_hat = sigma
    if allowed < e.size:
        needed = math.sqrt(e[e.size - 1 - allowed] / unit)
        sigma_hat = max(sigma, needed)
    return CalibrationResult(sigma, sigma_hat, count, target_pf, int(e.size), allowed)


@dataclass(frozen=True)
class LabelStats:
    decisions: int
    detections: int

    @property
    def ratio(self) -> float:
        return self.detections / self.decisions if self.decisions else float("nan")


@dataclass(frozen=True)
class TraceEvaluation:
    """Per-window decisions plus per-annotation detection ratios."""

    start_time: np.ndarray
    energy: np.ndarray
    occupied: np.ndarray
    label: np.ndarray
    threshold: float
    channel_indices: tuple[int, ...]
    windows: int
    skipped: int
    transient: int
    per_label: dict[int, LabelStats]

    @property
    def decisions(self) -> int:
        return int(self.energy.size)

    @property
    def detection_ratio(self) -> float:
        return float(self.occupied.mean()) if self.energy.size else float("nan")


def evaluate_trace(
    trace: RssTrace,
    baseline: BaselineProfile,
    config: DetectorConfig,
    channel_indices=None,
    taps=None,
    sweep_period: float = SWEEP_PERIOD_S,
) -> TraceEvaluation:
    """Run the energy detector over every complete sweep of ``trace``."""
    res = compute_residuals(trace, baseline, channel_indices, taps, sweep_period)
    if len(res.channel_indices) != config.count:
        raise ValueError(
            f"detector expects {config.count} channels, selection has {len(res.channel_indices)}"
        )
    e = np.einsum("ij,ij->i", res.values, res.values)
    occ = e > config.threshold
    per_label = {}
    for lab in np.unique(res.label):
        if lab == NO_LABEL:
            continue
        m = res.label == lab
        per_label[int(lab)] = LabelStats(int(m.sum()), int(occ[m].sum()))
    log.debug("evaluated %d windows, %d skipped", e.size, res.skipped)
    return TraceEvaluation(
        res.start_time, e, occ, res.label, config.threshold, res.channel_indices,
        res.windows, res.skipped, res.transient, per_label,
    )


# --- synthetic traces -------------------------------------------------------


def default_los_power(n_channels: int) -> np.ndarray:
    """Arbitrary but fixed per-channel LoS power (dBm) for synthetic traces."""
    return -45.0 - 0.25 * np.arange(n_channels) + 1.5 * np.sin(np.arange(n_channels))


def grid_points(d: float, n: int = 5, spacing: float = 0.5, y_offset: float = 0.5) -> np.ndarray:
    """``n x n`` measurement grid beside a link from (0,0) to (d,0).

    Points are centred on the LoS midpoint along x and start ``y_offset``
    away from the LoS; ids are 1..n*n in row-major order.
    """
    xs = d / 2.0 + (np.arange(n) - (n - 1) / 2.0) * spacing
    ys = y_offset + np.arange(n) * spacing
    return np.array([(x, y) for y in ys for x in xs])


def _sweep_trace(means_per_sweep, labels, sigma, t_start, sweep_period, rng) -> RssTrace:
    """Records for consecutive sweeps with evenly spaced channel slots."""
    n_sweeps, n_ch = means_per_sweep.shape
    slot = sweep_period / n_ch
    t = t_start + (np.arange(n_sweeps)[:, None] * sweep_period + np.arange(n_ch)[None, :] * slot)
    rss = means_per_sweep + sigma * rng.standard_normal((n_sweeps, n_ch))
    ch = np.broadcast_to(np.arange(n_ch), (n_sweeps, n_ch))
    lab = np.broadcast_to(np.asarray(labels)[:, None], (n_sweeps, n_ch))
    return RssTrace(t.ravel(), ch.ravel(), rss.ravel(), lab.ravel())


def synth_vacant_trace(
    channels: ChannelSet,
    sigma: float,
    duration_s: float = 120.0,
    seed: int = 0,
    los_power=None,
    sweep_period: float = SWEEP_PERIOD_S,
    t_start: float = 0.0,
) -> RssTrace:
    """Empty-room trace: LoS power plus i.i.d. Gaussian noise."""
    los = default_los_power(channels.count) if los_power is None else np.asarray(los_power)
    n = int(round(duration_s / sweep_period))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return _sweep_trace(np.broadcast_to(los, (n, channels.count)), np.full(n, NO_LABEL), sigma, t_start, sweep_period, rng)


def synth_grid_trace(
    geom: LinkGeometry,
    points,
    gamma: float,
    channels: ChannelSet,
    sigma: float,
    dwell_s: float = 30.0,
    seed: int = 0,
    eta: float = ETA_DEFAULT,
    los_power=None,
    sweep_period: float = SWEEP_PERIOD_S,
    t_start: float = 0.0,
) -> RssTrace:
    """A person standing ``dwell_s`` seconds at each point in turn.

    Records at point ``k`` (0-based) carry label ``k + 1``.
    """
    los = default_los_power(channels.count) if los_power is None else np.asarray(los_power)
    pts = np.asarray(points, dtype=float)
    n = int(round(dwell_s / sweep_period))
    parts = []
    for k, p in enumerate(pts):
        delta = excess_path_length(p, geom)
        z = zeta(ReflectionParams(gamma, eta, delta), geom.d, channels.betas)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k + 1,)))
        t0 = t_start + k * n * sweep_period
        parts.append(_sweep_trace(np.broadcast_to(los + z, (n, channels.count)), np.full(n, k + 1), sigma, t0, sweep_period, rng))
    return RssTrace.concat(parts)


def trace_to_text(trace: RssTrace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()
