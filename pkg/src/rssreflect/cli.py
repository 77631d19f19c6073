"""Command-line entry point: ``rssreflect <subcommand> [flags]``.

Settings are layered: built-in defaults, then an INI config file, then
flags. The config file comes from ``--config`` or, failing that,
``rssreflect.ini`` in the directory named by ``RSSREFLECT_CONFIG_DIR``.
Every key carries its unit in the name::

    [link]
    distance_m = 3
    [channels]
    start_frequency_hz = 2.405e9
    spacing_hz = 5e6
    count = 16
    [reflection]
    gamma = 0.35
    [detector]
    sigma_db = 0.5
    pf = 6e-6

Tabular output is CSV with a header row (``--format csv``, default) or a
JSON list of records (``--format json``). Failures print a JSON error
record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import C0_DEFAULT, ETA_DEFAULT, LinkGeometry, ReflectionParams, zeta
from .detector import PF_DEFAULT, DetectorConfig, roc_point, threshold_for_pf
from .energy import ChannelSet, energy, spread_subset
from .pipeline import (
    BaselineProfile,
    CalibrationResult,
    calibrate_sigma,
    compute_residuals,
    design_lowpass,
    estimate_baseline,
    evaluate_trace,
    grid_points,
    load_taps,
    read_trace,
    synth_grid_trace,
    synth_vacant_trace,
    write_trace,
)
from .simulate import SimSpec, empirical_rates
from .spatial import GridSpec, pd_at_delta, pd_map, plan_distance

CONFIG_ENV = "RSSREFLECT_CONFIG_DIR"
CONFIG_NAME = "rssreflect.ini"

# (section, key) -> (flag destination, parser)
CONFIG_KEYS = {
    ("link", "distance_m"): ("distance_m", float),
    ("link", "tx_x_m"): ("tx_x_m", float),
    ("link", "tx_y_m"): ("tx_y_m", float),
    ("link", "rx_x_m"): ("rx_x_m", float),
    ("link", "rx_y_m"): ("rx_y_m", float),
    ("channels", "start_frequency_hz"): ("start_frequency_hz", float),
    ("channels", "spacing_hz"): ("spacing_hz", float),
    ("channels", "count"): ("channel_count", int),
    ("channels", "c0_m_per_s"): ("c0_m_per_s", float),
    ("reflection", "gamma"): ("gamma", float),
    ("reflection", "eta"): ("eta", float),
    ("detector", "channels"): ("C", int),
    ("detector", "sigma_db"): ("sigma_db", float),
    ("detector", "pf"): ("pf", float),
    ("simulation", "seed"): ("seed", int),
    ("simulation", "trials"): ("trials", int),
    ("io", "trace_path"): ("trace_path", str),
    ("io", "baseline_path"): ("baseline_path", str),
    ("io", "calibration_path"): ("calibration_path", str),
    ("io", "taps_path"): ("taps_path", str),
    ("io", "output_path"): ("output_path", str),
}

DEFAULTS = {
    "distance_m": 3.0,
    "tx_x_m": None,
    "tx_y_m": None,
    "rx_x_m": None,
    "rx_y_m": None,
    "start_frequency_hz": 2.405e9,
    "spacing_hz": 5e6,
    "channel_count": 16,
    "c0_m_per_s": C0_DEFAULT,
    "gamma": 0.35,
    "eta": ETA_DEFAULT,
    "C": 16,
    "sigma_db": 0.5,
    "pf": PF_DEFAULT,
    "seed": 0,
    "trials": 100_000,
    "trace_path": None,
    "baseline_path": None,
    "calibration_path": None,
    "taps_path": None,
    "output_path": None,
}


class CliError(Exception):
    """Bad invocation; reported as a JSON error record."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def load_config(path) -> dict:
    """Parse an INI file into flag destinations, rejecting unknown keys."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            spec = CONFIG_KEYS.get((section, key))
            if spec is None:
                raise CliError(f"unknown config key [{section}] {key}")
            dest, conv = spec
            try:
                out[dest] = conv(raw)
            except ValueError:
                raise CliError(f"bad value for [{section}] {key}: {raw!r}") from None
    return out


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser):
    s = argparse.SUPPRESS
    g = p.add_argument_group("shared settings (override the config file)")
    g.add_argument("--distance-m", dest="distance_m", type=float, default=s, help="TX-RX distance for a link on the x axis")
    for name in ("tx_x_m", "tx_y_m", "rx_x_m", "rx_y_m"):
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=s)
    g.add_argument("--start-frequency-hz", dest="start_frequency_hz", type=float, default=s)
    g.add_argument("--spacing-hz", dest="spacing_hz", type=float, default=s)
    g.add_argument("--channel-count", dest="channel_count", type=int, default=s, help="size of the full channel set")
    g.add_argument("--c0-m-per-s", dest="c0_m_per_s", type=float, default=s)
    g.add_argument("--gamma", type=float, default=s)
    g.add_argument("--eta", type=float, default=s)
    g.add_argument("--C", dest="C", type=int, default=s, help="channels used by the detector")
    g.add_argument("--sigma", "--sigma-db", dest="sigma_db", type=float, default=s, help="noise std (dB)")
    g.add_argument("--pf", type=float, default=s, help="target false-alarm probability")
    g.add_argument("--seed", type=int, default=s)
    g.add_argument("--trials", type=int, default=s)
    g.add_argument("--trace", dest="trace_path", default=s)
    g.add_argument("--baseline", dest="baseline_path", default=s)
    g.add_argument("--calibration", dest="calibration_path", default=s)
    g.add_argument("--taps", dest="taps_path", default=s, help="FIR taps file")
    g.add_argument("-o", "--output", dest="output_path", default=s)
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--config", default=None, help="INI config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rssreflect", description="Multi-channel RSS reflection model and energy detector.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("model", help="perturbation zeta versus excess path or frequency")
    _common(p)
    p.add_argument("--sweep", choices=("delta", "beta"), default="delta")
    p.add_argument("--delta-min-m", type=float, default=0.0)
    p.add_argument("--delta-max-m", type=float, default=2.0)
    p.add_argument("--delta-step-m", type=float, default=0.001)
    p.add_argument("--delta-m", type=float, default=1.0, help="fixed excess path for --sweep beta")
    p.add_argument("--frequency-hz", type=float, default=None, help="carrier for --sweep delta (default: first channel)")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("energy", help="exact, closed-form and average energy versus excess path")
    _common(p)
    p.add_argument("--delta-min-m", type=float, default=0.0)
    p.add_argument("--delta-max-m", type=float, default=4.0)
    p.add_argument("--delta-step-m", type=float, default=0.001)
    p.add_argument("--counts", type=_int_list, default=None, help="comma list of channel counts (default: --C)")
    p.add_argument("--distances-m", type=_float_list, default=None, help="comma list of distances (default: --distance-m)")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("roc", help="detection versus false-alarm probability")
    _common(p)
    p.add_argument("--counts", type=_int_list, default=[2, 4, 8, 16])
    p.add_argument("--snrs", type=_float_list, default=[1.0, 2.0, 4.0, 8.0], help="per-channel SNR, linear")
    p.add_argument("--pf-min", type=float, default=1e-8)
    p.add_argument("--pf-max", type=float, default=0.5)
    p.add_argument("--points", type=int, default=50)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("pd", help="detection probability versus excess path")
    _common(p)
    p.add_argument("--counts", type=_int_list, default=[2, 4, 8, 16])
    p.add_argument("--delta-min-m", type=float, default=0.0)
    p.add_argument("--delta-max-m", type=float, default=4.0)
    p.add_argument("--delta-step-m", type=float, default=0.005)
    p.set_defaults(func=cmd_pd)

    p = sub.add_parser("pdmap", help="detection probability over a grid around the link")
    _common(p)
    p.add_argument("--width-m", type=float, default=4.0)
    p.add_argument("--height-m", type=float, default=3.0)
    p.add_argument("--resolution-m", type=float, default=0.02)
    p.set_defaults(func=cmd_pdmap)

    p = sub.add_parser("threshold", help="detector threshold for given noise levels")
    _common(p)
    p.add_argument("--sigmas", type=_float_list, default=None, help="comma list overriding --sigma")
    p.add_argument("--digits", type=int, default=4, help="decimals printed for the threshold")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("simulate", help="Monte Carlo check of detection and false-alarm rates")
    _common(p)
    p.add_argument("--counts", type=_int_list, default=[2, 4, 8, 16])
    p.add_argument("--snrs", type=_float_list, default=[1.0, 2.0, 4.0, 8.0])
    p.add_argument("--delta-m", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="per-channel LoS power from a vacant-room trace")
    _common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("calibrate", help="inflated noise std from a vacant-room trace")
    _common(p)
    p.add_argument("--filter", choices=("none", "default"), default="none", help="low-pass filter residuals (or use --taps)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="run the detector over a trace")
    _common(p)
    p.add_argument("--filter", choices=("none", "default"), default="none")
    p.add_argument("--windows", action="store_true", help="emit one row per window instead of per label")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("plan", help="smallest TX-RX distance meeting a detection target")
    _common(p)
    p.add_argument("--target-pd", type=float, required=True)
    p.add_argument("--delta-lo-m", type=float, default=1.5)
    p.add_argument("--delta-hi-m", type=float, default=2.0)
    p.add_argument("--d-min-m", type=float, default=0.5)
    p.add_argument("--d-max-m", type=float, default=20.0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("synth", help="write a synthetic trace")
    _common(p)
    p.add_argument("--kind", choices=("vacant", "grid"), default="vacant")
    p.add_argument("--duration-s", type=float, default=120.0, help="vacant trace length")
    p.add_argument("--dwell-s", type=float, default=30.0, help="time per grid point")
    p.set_defaults(func=cmd_synth)
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill shared settings from defaults, then config, then given flags."""
    merged = dict(DEFAULTS)
    cfg_path = args.config
    if cfg_path is None and os.environ.get(CONFIG_ENV):
        candidate = Path(os.environ[CONFIG_ENV]) / CONFIG_NAME
        if candidate.is_file():
            cfg_path = candidate
    if cfg_path is not None:
        merged.update(load_config(cfg_path))
    for k in DEFAULTS:
        if hasattr(args, k):
            merged[k] = getattr(args, k)
    for k, v in merged.items():
        setattr(args, k, v)
    return args


# --- helpers ---------------------------------------------------------------


def _geometry(a) -> LinkGeometry:
    pts = (a.tx_x_m, a.tx_y_m, a.rx_x_m, a.rx_y_m)
    if all(v is None for v in pts):
        return LinkGeometry.from_distance(a.distance_m)
    if any(v is None for v in pts):
        raise CliError("give all of tx/rx x/y coordinates or none")
    return LinkGeometry((a.tx_x_m, a.tx_y_m), (a.rx_x_m, a.rx_y_m))


def _channels(a) -> ChannelSet:
    return ChannelSet.uniform(a.start_frequency_hz, a.spacing_hz, a.channel_count, a.c0_m_per_s)


def _subset(a, count: int) -> tuple[list[int], ChannelSet]:
    full = _channels(a)
    idx = spread_subset(full.count, count)
    return idx, full.subset(idx)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0 or hi < lo:
        raise CliError("grid needs step > 0 and max >= min")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _need(a, name: str, flag: str):
    v = getattr(a, name)
    if v is None:
        raise CliError(f"{flag} is required")
    return v


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v) + 0.0  # folds -0.0 into 0.0
        return None if math.isnan(v) else v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _cell(v) -> str:
    v = _clean(v)
    if v is None:
        return "nan"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(rows: list[dict], columns: list[str], fmt: str) -> str:
    """CSV with a header, or a JSON list with the same records."""
    if fmt == "json":
        recs = [{c: _clean(r[c]) for c in columns} for r in rows]
        return json.dumps(recs, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], str) else _cell(r[c]) for c in columns])
    return buf.getvalue()


def _emit(a, text: str):
    if a.output_path:
        with open(a.output_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- subcommands -----------------------------------------------------------


def cmd_model(a):
    d = _geometry(a).d
    if a.sweep == "delta":
        ch = _channels(a)
        f = ch.start_frequency if a.frequency_hz is None else a.frequency_hz
        beta = f / a.c0_m_per_s
        deltas = _grid(a.delta_min_m, a.delta_max_m, a.delta_step_m)
        betas = np.full(deltas.shape, beta)
    else:
        betas = _channels(a).betas
        deltas = np.full(betas.shape, a.delta_m)
    p = ReflectionParams(a.gamma, a.eta, deltas)
    closed = zeta(p, d, betas, "closed")
    two = zeta(p, d, betas, "two_term")
    rows = [
        {"delta_m": dl, "beta_per_m": b, "zeta_db": z, "zeta_two_term_db": t}
        for dl, b, z, t in zip(deltas, betas, np.broadcast_to(closed, deltas.shape), np.broadcast_to(two, deltas.shape))
    ]
    return rows, ["delta_m", "beta_per_m", "zeta_db", "zeta_two_term_db"]


def cmd_energy(a):
    deltas = _grid(a.delta_min_m, a.delta_max_m, a.delta_step_m)
    counts = a.counts or [a.C]
    dists = a.distances_m or [_geometry(a).d]
    rows = []
    for d in dists:
        for c in counts:
            ch = ChannelSet.uniform(a.start_frequency_hz, a.spacing_hz, c, a.c0_m_per_s)
            p = ReflectionParams(a.gamma, a.eta, deltas)
            ex = energy(p, d, ch, "exact")
            cl = energy(p, d, ch, "closed_two_term")
            av = np.broadcast_to(energy(p, d, ch, "average"), deltas.shape)
            for dl, e1, e2, e3 in zip(deltas, ex, cl, av):
                rows.append({"d_m": d, "channels": c, "delta_m": dl, "energy_exact_db2": e1,
                             "energy_closed_two_term_db2": e2, "energy_average_db2": e3})
    return rows, ["d_m", "channels", "delta_m", "energy_exact_db2", "energy_closed_two_term_db2", "energy_average_db2"]


def cmd_roc(a):
    if not 0 < a.pf_min < a.pf_max < 1 or a.points < 2:
        raise CliError("need 0 < pf-min < pf-max < 1 and at least two points")
    pfs = np.geomspace(a.pf_min, a.pf_max, a.points)
    rows = []
    for c in a.counts:
        for s in a.snrs:
            e = s * c  # unit noise variance
            for pf in pfs:
                rows.append({"channels": c, "snr_linear": s, "pf": pf, "pd": roc_point(c, 1.0, e, pf)})
    return rows, ["channels", "snr_linear", "pf", "pd"]


def cmd_pd(a):
    d = _geometry(a).d
    deltas = _grid(a.delta_min_m, a.delta_max_m, a.delta_step_m)
    rows = []
    for c in a.counts:
        _, ch = _subset(a, c)
        pd, e = pd_at_delta(deltas, a.gamma, d, ch, a.sigma_db, a.pf, a.eta)
        for dl, ev, pv in zip(deltas, e, pd):
            rows.append({"channels": c, "delta_m": dl, "energy_db2": ev, "pd": pv})
    return rows, ["channels", "delta_m", "energy_db2", "pd"]


def cmd_pdmap(a):
    geom = _geometry(a)
    grid = GridSpec.around_link(geom, a.width_m, a.height_m, a.resolution_m)
    _, ch = _subset(a, a.C)
    m = pd_map(geom, grid, a.gamma, ch, a.sigma_db, a.pf, a.eta)
    return list(m.records()), ["x_m", "y_m", "delta_m", "energy_db2", "pd", "valid"]


def cmd_threshold(a):
    sigmas = a.sigmas or [a.sigma_db]
    rows = []
    for s in sigmas:
        x = threshold_for_pf(a.C, s, a.pf)
        rows.append({"channels": a.C, "sigma_db": s, "pf": a.pf,
                     "threshold_db2": f"{x:.{a.digits}f}" if a.format == "csv" else round(x, a.digits)})
    return rows, ["channels", "sigma_db", "pf", "threshold_db2"]


def cmd_simulate(a):
    d = _geometry(a).d
    rows = []
    for c in a.counts:
        _, ch = _subset(a, c)
        p = ReflectionParams(a.gamma, a.eta, a.delta_m)
        e = energy(p, d, ch, "exact")
        for s in a.snrs:
            sigma = math.sqrt(e / (s * c))
            x = threshold_for_pf(c, sigma, a.pf)
            spec = SimSpec(p, d, ch, sigma, a.trials, a.seed)
            res = empirical_rates(spec, x)
            pd = float(roc_point(c, sigma, e, a.pf))
            std = res.binomial_std(pd)
            rows.append({"channels": c, "snr_linear": s, "hypothesis": "occupied", "sigma_db": sigma,
                         "trials": a.trials, "predicted": pd, "empirical": res.detection_rate,
                         "z_score": (res.detection_rate - pd) / std if std > 0 else 0.0})
        vac = SimSpec(ReflectionParams(0.0, a.eta, 0.0), d, ch, 1.0, a.trials, a.seed)
        res = empirical_rates(vac, threshold_for_pf(c, 1.0, a.pf))
        std = res.binomial_std(a.pf)
        rows.append({"channels": c, "snr_linear": 0.0, "hypothesis": "vacant", "sigma_db": 1.0,
                     "trials": a.trials, "predicted": a.pf, "empirical": res.detection_rate,
                     "z_score": (res.detection_rate - a.pf) / std})
    return rows, ["channels", "snr_linear", "hypothesis", "sigma_db", "trials", "predicted", "empirical", "z_score"]


def cmd_baseline(a):
    tr = read_trace(_need(a, "trace_path", "--trace"))
    prof = estimate_baseline(tr, a.channel_count)
    return prof.to_json() + "\n"


def _taps(a):
    if a.taps_path:
        return load_taps(a.taps_path)
    if a.filter == "default":
        return design_lowpass()
    return None


def cmd_calibrate(a):
    tr = read_trace(_need(a, "trace_path", "--trace"))
    base = BaselineProfile.from_json(Path(_need(a, "baseline_path", "--baseline")).read_text(encoding="utf-8"))
    idx = spread_subset(base.n_channels, a.C)
    res = compute_residuals(tr, base, idx, _taps(a))
    return calibrate_sigma(res.values, a.C, a.pf).to_json() + "\n"


def cmd_detect(a):
    tr = read_trace(_need(a, "trace_path", "--trace"))
    base = BaselineProfile.from_json(Path(_need(a, "baseline_path", "--baseline")).read_text(encoding="utf-8"))
    sigma = a.sigma_db
    if a.calibration_path:
        cal = CalibrationResult.from_json(Path(a.calibration_path).read_text(encoding="utf-8"))
        if cal.count != a.C:
            raise CliError(f"calibration is for C={cal.count}, detector uses C={a.C}")
        sigma = cal.sigma_hat
    idx = spread_subset(base.n_channels, a.C)
    ev = evaluate_trace(tr, base, DetectorConfig(a.C, sigma, a.pf), idx, _taps(a))
    if a.windows:
        rows = [{"start_time_s": t, "label": int(lab), "energy_db2": e, "occupied": bool(o)}
                for t, lab, e, o in zip(ev.start_time, ev.label, ev.energy, ev.occupied)]
        return rows, ["start_time_s", "label", "energy_db2", "occupied"]
    rows = [{"label": str(k), "decisions": s.decisions, "detections": s.detections, "ratio": s.ratio}
            for k, s in sorted(ev.per_label.items())]
    rows.append({"label": "all", "decisions": ev.decisions, "detections": int(ev.occupied.sum()),
                 "ratio": ev.detection_ratio})
    return rows, ["label", "decisions", "detections", "ratio"]


def cmd_plan(a):
    r = plan_distance(a.target_pd, a.pf, (a.delta_lo_m, a.delta_hi_m), a.gamma, a.C, a.sigma_db,
                      (a.d_min_m, a.d_max_m), a.eta)
    row = {"feasible": r.feasible, "distance_m": float("nan") if r.distance is None else r.distance,
           "achieved_pd": r.achieved_pd, "target_pd": r.target_pd}
    return [row], ["feasible", "distance_m", "achieved_pd", "target_pd"]


def cmd_synth(a):
    ch = _channels(a)
    if a.kind == "vacant":
        tr = synth_vacant_trace(ch, a.sigma_db, a.duration_s, a.seed)
    else:
        geom = _geometry(a)
        tr = synth_grid_trace(geom, grid_points(geom.d), a.gamma, ch, a.sigma_db, a.dwell_s, a.seed, a.eta)
    buf = io.StringIO()
    write_trace(tr, buf)
    return buf.getvalue()


def main(argv=None) -> int:
    try:
        args = resolve(build_parser().parse_args(argv))
        out = args.func(args)
        text = out if isinstance(out, str) else render(out[0], out[1], args.format)
        _emit(args, text)
        return 0
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 2
    except (ValueError, ArithmeticError, OSError, KeyError, json.JSONDecodeError, configparser.Error) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
