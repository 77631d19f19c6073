"""Multi-channel RSS reflection model, energy detector and measurement pipeline."""

__version__ = "0.1.0"

from .core import (
    E_HAT,
    LinkGeometry,
    ReflectionParams,
    excess_path_length,
    signal_power,
    two_harmonic_fraction,
    zeta,
)
from .detector import (
    PF_DEFAULT,
    Decision,
    DetectorConfig,
    decide,
    decide_many,
    prob_detection,
    prob_false_alarm,
    roc_point,
    threshold_for_pf,
)
from .energy import ChannelSet, energy, snr, spread_subset
from .pipeline import (
    BaselineProfile,
    CalibrationResult,
    RssRecord,
    RssTrace,
    calibrate_sigma,
    design_lowpass,
    estimate_baseline,
    evaluate_trace,
    fir_lowpass,
    read_trace,
    write_trace,
)
from .simulate import SimSpec, empirical_rates, sf_via_cf_inversion, simulate_energies
from .spatial import GridSpec, PdMap, pd_map, plan_distance
from .specfun import dilog, inv_reg_upper_gamma, noncentral_chi2_sf, reg_upper_gamma
