"""Bright-light blinding of self-differencing APD receivers and an
intensity-modulator countermeasure, as a seeded Monte-Carlo simulator."""

from .apd import ApdModel, ApdState, BiasNetwork, blinding_current, gate_responses, steady_state
from .attack import AliceSource, Burst, CwBlind, FakedState, Honest, Partial, parse_strategy
from .config import Setup, load_setup
from .harness import CalibrationAnchors, SweepSpec, calibrate, cw_point, rf_scan, run_session, sweep
from .modulator import ImConfig, ImPattern, insertion_loss_impact, transmission
from .protocol import Decision, KeyRateModel, abort_decision, binary_entropy, convexity_bound, key_rate
from .sd import Discriminator, Polarity, SdKernel, discriminate, sd_transform

__version__ = "0.1.0"

__all__ = [
    "AliceSource", "ApdModel", "ApdState", "BiasNetwork", "Burst", "CalibrationAnchors",
    "CwBlind", "Decision", "Discriminator", "FakedState", "Honest", "ImConfig", "ImPattern",
    "KeyRateModel", "Partial", "Polarity", "SdKernel", "Setup", "SweepSpec",
    "abort_decision", "binary_entropy", "blinding_current", "calibrate", "convexity_bound",
    "cw_point", "discriminate", "gate_responses", "insertion_loss_impact", "key_rate",
    "load_setup", "parse_strategy", "rf_scan", "run_session", "sd_transform", "steady_state",
    "sweep", "transmission",
]
