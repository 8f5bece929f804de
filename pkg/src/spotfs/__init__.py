"""Superimposed-pilot OTFS link simulation and analysis."""

from .analysis import (
    LinkParams,
    SinrPolynomial,
    analytic_se,
    build_sinr_polynomial,
    complexity_counts,
    ep_overhead,
    optimal_pilot_power,
    sinr_lower_bound,
    spectral_efficiency,
)
from .channel import (
    ChannelProfile,
    ChannelRealization,
    ChannelTaps,
    SparseEffectiveChannel,
    TapCollisionError,
    TapStructure,
    awgn,
    build_dense_H,
    build_effective_channel,
    build_omega,
    load_profile,
    load_taps,
    quantize_profile,
    sample_channel,
)
from .config import RunConfig, load_config
from .detector import MpConfig, cancel_pilots, convergence_indicator, detect
from .estimators import (
    EstimationResult,
    cpa_estimate,
    ep_estimate,
    mse_lower_bound,
    perfect_data_mse,
    spi_run,
    spi_step,
    spni_error_stats,
    spni_estimate,
)
from .grid import DdFrame, DdGrid, OtfsOperators, heisenberg_tx, isfft, sfft, wigner_rx
from .harness import MetricRecord, emit_csv, run_scenario
from .modem import Constellation, EpLayout, PilotSequence, PowerSplit, gen_pilots, map_bits, superimpose, transmit_through

__version__ = "0.1.0"
