"""Intensity modulator: cos^2 transfer, extinction floor, activation patterns."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ImConfig:
    v_pi: float = 4.0
    max_extinction_db: float = 23.0
    # sweeps reference power after the modulator, so no loss by default
    insertion_loss_db: float = 0.0

    def __post_init__(self):
        if self.v_pi <= 0 or self.max_extinction_db <= 0 or self.insertion_loss_db < 0:
            raise ValueError("invalid modulator configuration")

    @property
    def floor(self) -> float:
        return 10 ** (-self.max_extinction_db / 10)


def transmission(v_rf, cfg: ImConfig = ImConfig()):
    """Transmission with DC bias at maximum transmission."""
    v = np.asarray(v_rf, dtype=float)
    t = np.maximum(np.cos(np.pi * v / (2 * cfg.v_pi)) ** 2, cfg.floor)
    return float(t) if t.ndim == 0 else t


def contrast_db(v_rf, cfg: ImConfig = ImConfig()):
    return -10 * np.log10(transmission(v_rf, cfg)) + 0.0


class ImPattern:
    """Which gates the modulator is driven in.

    ``fixed`` patterns repeat an activation string (``"0001"`` or the
    shorthand ``"1/32"``, one active gate at the end of every 32).
    ``random`` patterns activate each gate independently with ``p_im``
    from a seeded stream; the same seed always reproduces the schedule.
    """

    def __init__(self, kind: str, bits: str | None = None, p_im: float = 0.0, seed: int = 0):
        if kind == "fixed":
            if not bits or set(bits) - {"0", "1"}:
                raise ValueError(f"bad fixed pattern {bits!r}")
            self.mask = np.array([b == "1" for b in bits])
        elif kind == "random":
            if not 0 <= p_im <= 1:
                raise ValueError("p_im must be in [0, 1]")
        elif kind != "none":
            raise ValueError(f"unknown pattern kind {kind!r}")
        self.kind, self.bits, self.p_im, self.seed = kind, bits, p_im, seed
        self._rng = np.random.default_rng(seed) if kind == "random" else None
        self._pos = 0

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "ImPattern":
        text = text.strip()
        if text in ("", "none", "off"):
            return cls("none")
        kind, _, arg = text.partition(":")
        if kind == "fixed":
            if "/" in arg:
                num, den = arg.split("/")
                if int(num) != 1 or int(den) < 1:
                    raise ValueError(f"bad pattern {text!r}")
                arg = "0" * (int(den) - 1) + "1"
            return cls("fixed", bits=arg)
        if kind == "random":
            return cls("random", p_im=float(arg), seed=seed)
        raise ValueError(f"bad pattern {text!r}")

    @property
    def duty(self) -> float:
        if self.kind == "fixed":
            return float(self.mask.mean())
        return self.p_im if self.kind == "random" else 0.0

    @property
    def period(self) -> int | None:
        return self.mask.size if self.kind == "fixed" else None

    def reset(self) -> None:
        self._pos = 0
        if self.kind == "random":
            self._rng = np.random.default_rng(self.seed)

    def schedule(self, gates: int) -> np.ndarray:
        """Next ``gates`` activation flags; successive calls continue the stream."""
        start, self._pos = self._pos, self._pos + gates
        if self.kind == "fixed":
            return self.mask[(start + np.arange(gates)) % self.mask.size]
        if self.kind == "random":
            return self._rng.random(gates) < self.p_im
        return np.zeros(gates, dtype=bool)

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.bits}"
        if self.kind == "random":
            return f"random:{self.p_im:g}"
        return "none"


def apply(active, v_rf: float, cfg: ImConfig, optical) -> np.ndarray:
    """Modulate ``optical`` (W per gate) in the ``active`` gates."""
    out = np.asarray(optical, dtype=float) * 10 ** (-cfg.insertion_loss_db / 10)
    active = np.asarray(active, dtype=bool)
    return np.where(active, out * transmission(v_rf, cfg), out)


def insertion_loss_impact(
    insertion_loss_db: float,
    duty: float,
    contrast: float,
    fiber_loss_db_per_km: float = 0.2,
) -> tuple[float, float]:
    """Key-rate factor and reach penalty (km) of putting the modulator in line."""
    if min(insertion_loss_db, duty, contrast) < 0 or fiber_loss_db_per_km <= 0:
        raise ValueError("inputs must be non-negative")
    rate = 10 ** (-insertion_loss_db / 10) * ((1 - duty) + duty * 10 ** (-contrast / 10))
    return rate, insertion_loss_db / fiber_loss_db_per_km


def v_rf_for_contrast(contrast: float, cfg: ImConfig = ImConfig()) -> float:
    """Smallest drive amplitude giving ``contrast`` dB (inverse of the transfer)."""
    if contrast >= cfg.max_extinction_db:
        return cfg.v_pi
    t = 10 ** (-contrast / 10)
    return 2 * cfg.v_pi / math.pi * math.acos(math.sqrt(t))
