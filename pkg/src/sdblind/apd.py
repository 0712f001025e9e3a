"""Gated APD front end: bias network, photocurrent erosion of the excess
bias, and per-gate electrical response fed to the self-differencing stage.

Per-gate response is the sum of two parts:

* a Geiger avalanche, fired with Poisson probability from the photons in
  the gate (plus dark counts), whose SD-referred amplitude shrinks as the
  excess bias is eroded;
* a deterministic linear-mode (capacitive/photocurrent) amplitude
  ``V_lin(I) = V_max * I / (I + sat_current)`` scaled by the gate's
  optical power relative to the nominal illumination level.

Once the loop current fully erodes the excess bias, only the linear-mode
part remains, so a constant illumination produces a constant trace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

PLANCK = 6.62607015e-34
LIGHT_SPEED = 299_792_458.0

CORRECT_LEVEL_MV = 18.0
ILL_SET_LEVEL_MV = 26.0


class ConvergenceError(RuntimeError):
    """Steady-state solver failed; ``last`` holds the last v_ex iterate."""

    def __init__(self, message: str, last: float):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True)
class BiasNetwork:
    v_ex0: float = 1.025
    r_bias: float = 0.0
    r_apd: float = 1000.0
    r_s: float = 50.0

    def __post_init__(self):
        if min(self.r_bias, self.r_apd, self.r_s) < 0:
            raise ValueError("resistances must be non-negative")
        if self.v_ex0 < 0:
            raise ValueError("v_ex0 must be non-negative")

    @property
    def loop_resistance(self) -> float:
        return self.r_bias + self.r_apd + self.r_s / 2


@dataclass(frozen=True)
class ApdModel:
    """Detector constants. Defaults are the calibrated set (see ``calibrate``)."""

    efficiency: float = 0.26
    dark_rate: float = 23e3
    gate_rate: float = 1e9
    wavelength: float = 1550e-9
    # photocurrent per watt with the full excess bias applied
    responsivity: float = 70.0
    # fraction of the responsivity left once the excess bias is gone
    linear_gain: float = 1e-3 / (70.0 * 3e-4)
    gain_exponent: float = 1.0
    # avalanche peak scale is (v_ex / v_ex0) ** avalanche_exponent
    avalanche_exponent: float = 0.005
    avalanche_mean_mv: float = 30.0
    avalanche_sigma_mv: float = 6.0
    linear_vmax_mv: float = 2988.555555555556
    sat_current: float = 0.345e-3
    residual_fraction: float = 0.009

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")
        if self.dark_rate < 0 or self.gate_rate <= 0:
            raise ValueError("rates must be non-negative (gate_rate positive)")
        if self.avalanche_mean_mv <= 0 or self.avalanche_sigma_mv < 0:
            raise ValueError("avalanche amplitude parameters out of range")
        if not 0 <= self.residual_fraction < 1:
            raise ValueError("residual_fraction must be in [0, 1)")
        if not 0 <= self.linear_gain <= 1:
            raise ValueError("linear_gain must be in [0, 1]")
        if self.sat_current <= 0 or self.linear_vmax_mv <= 0:
            raise ValueError("linear-mode saturation parameters must be positive")

    @property
    def photon_energy(self) -> float:
        return PLANCK * LIGHT_SPEED / self.wavelength

    @property
    def dark_probability(self) -> float:
        return self.dark_rate / self.gate_rate

    def photons_per_gate(self, power):
        return np.asarray(power, dtype=float) / (self.photon_energy * self.gate_rate)

    def linear_amplitude(self, photocurrent):
        """Saturating linear-mode response V_lin(I) in mV."""
        i = np.asarray(photocurrent, dtype=float)
        return self.linear_vmax_mv * i / (i + self.sat_current)


@dataclass(frozen=True)
class ApdState:
    power: float
    photocurrent: float
    v_ex: float
    avalanche_scale: float
    linear_mv: float
    residual_mv: float
    blinded: bool


def blinding_current(bias: BiasNetwork) -> float:
    """Photocurrent that fully erodes the excess bias."""
    r = bias.loop_resistance
    if r <= 0:
        raise ValueError("total loop resistance must be positive")
    return bias.v_ex0 / r


def _photocurrent(power: float, v_ex: float, bias: BiasNetwork, model: ApdModel) -> float:
    x = max(v_ex, 0.0) / bias.v_ex0 if bias.v_ex0 > 0 else 0.0
    gain = model.linear_gain + (1.0 - model.linear_gain) * x**model.gain_exponent
    return model.responsivity * power * gain


def avalanche_scale(v_ex: float, bias: BiasNetwork, model: ApdModel) -> float:
    if bias.v_ex0 <= 0 or v_ex <= 0:
        return 0.0
    return min(v_ex / bias.v_ex0, 1.0) ** model.avalanche_exponent


def steady_state(
    bias: BiasNetwork,
    model: ApdModel,
    power: float,
    level_mv: float = CORRECT_LEVEL_MV,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> ApdState:
    """Self-consistent operating point under CW illumination ``power`` (W).

    Solves ``v_ex = v_ex0 - I * R_loop`` with ``I`` the gain-dependent
    photocurrent at ``v_ex``. The residual ``v_ex - g(v_ex)`` is monotone,
    so a bracketing root finder always converges.

    ``blinded`` means the detector yields no above-threshold output at
    ``level_mv`` under steady illumination: the expected avalanche peak and
    the uncancelled linear-mode residual are both below the level.
    """
    if power < 0:
        raise ValueError("power must be non-negative")
    r_loop = bias.loop_resistance
    if r_loop <= 0:
        raise ValueError("total loop resistance must be positive")

    def residual(v):
        return v - (bias.v_ex0 - _photocurrent(power, v, bias, model) * r_loop)

    hi = bias.v_ex0
    lo = bias.v_ex0 - model.responsivity * power * r_loop
    if power == 0 or residual(hi) == 0:
        v_ex = bias.v_ex0
    else:
        try:
            v_ex = optimize.brentq(residual, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                                   maxiter=max_iter)
        except RuntimeError as exc:
            raise ConvergenceError(str(exc), last=lo) from exc
    current = _photocurrent(power, v_ex, bias, model)
    v_ex = bias.v_ex0 - current * r_loop
    scale = avalanche_scale(v_ex, bias, model)
    linear = float(model.linear_amplitude(current))
    residual_mv = model.residual_fraction * linear
    blinded = bool(
        scale * model.avalanche_mean_mv < level_mv and residual_mv <= level_mv
    )
    return ApdState(
        power=power,
        photocurrent=current,
        v_ex=v_ex,
        avalanche_scale=scale,
        linear_mv=linear,
        residual_mv=residual_mv,
        blinded=blinded,
    )


def truncated_normal(rng: np.random.Generator, mean: float, sigma: float, n: int) -> np.ndarray:
    """Normal draws conditioned on being >= 0 (rejection resampling)."""
    if mean <= 0:
        raise ValueError("truncated normal needs a positive mean")
    out = rng.normal(mean, sigma, n) if sigma > 0 else np.full(n, float(mean))
    bad = np.flatnonzero(out < 0)
    while bad.size:
        out[bad] = rng.normal(mean, sigma, bad.size)
        bad = bad[out[bad] < 0]
    return out


def gate_responses(
    state: ApdState,
    model: ApdModel,
    optical,
    rng: np.random.Generator,
    nominal_power: float | None = None,
    detail: bool = False,
):
    """Per-gate response in mV for the optical trace (W per gate).

    ``nominal_power`` is the unmodulated illumination level the state was
    solved at; defaults to ``state.power``. Modulated gates scale the
    linear-mode amplitude by ``P_gate / nominal_power``.

    With ``detail=True`` also returns ``(signal_fired, dark_fired)`` masks.
    A gate where both fire is flagged in ``signal_fired`` only.
    """
    optical = np.asarray(optical, dtype=float)
    n = optical.size
    nominal = state.power if nominal_power is None else nominal_power

    out = np.zeros(n)
    if nominal > 0 and state.linear_mv > 0:
        out += state.linear_mv * (optical / nominal)

    signal = np.zeros(n, dtype=bool)
    dark = np.zeros(n, dtype=bool)
    if state.avalanche_scale > 0:
        mu = model.photons_per_gate(optical)
        p_signal = -np.expm1(-model.efficiency * mu)
        u = rng.random(n)
        signal = u < p_signal
        pd = model.dark_probability
        if pd > 0:
            # P(dark only) = (1 - p_signal) * pd, laid on the same uniform
            dark = ~signal & (u < p_signal + (1.0 - p_signal) * pd)
        fired = np.flatnonzero(signal | dark)
        if fired.size:
            scale = state.avalanche_scale
            out[fired] += truncated_normal(
                rng,
                model.avalanche_mean_mv * scale,
                model.avalanche_sigma_mv * scale,
                fired.size,
            )
    if detail:
        return out, signal, dark
    return out
