"""Self-differencing transform, discrimination and polarity tagging."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .apd import ApdModel


class Polarity(str, Enum):
    NORMAL = "normal"
    INVERTED = "inverted"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class SdKernel:
    delay_gates: int = 1
    residual_fraction: float = 0.009
    ripple_taps: tuple[float, ...] = (0.3, 0.15)

    def __post_init__(self):
        if self.delay_gates < 1:
            raise ValueError("delay_gates must be >= 1")
        if not 0 <= self.residual_fraction < 1:
            raise ValueError("residual_fraction must be in [0, 1)")
        taps = tuple(float(t) for t in self.ripple_taps)
        if any(not 0 <= t < 1 for t in taps):
            raise ValueError("ripple taps must lie in [0, 1)")
        if any(b > a for a, b in zip(taps, taps[1:])):
            raise ValueError("ripple taps must be non-increasing")
        object.__setattr__(self, "ripple_taps", taps)

    @property
    def main_taps(self) -> tuple[float, float]:
        return (1.0, -(1.0 - self.residual_fraction))

    @classmethod
    def ideal(cls, delay_gates: int = 1) -> "SdKernel":
        return cls(delay_gates=delay_gates, residual_fraction=0.0, ripple_taps=())


@dataclass(frozen=True)
class Discriminator:
    level_mv: float
    acceptance: np.ndarray | None = None

    def __post_init__(self):
        if self.level_mv <= 0:
            raise ValueError("level_mv must be positive")


@dataclass
class DetectionEvents:
    indices: np.ndarray
    polarity: list[Polarity]
    gates: int
    gate_rate: float
    ripple: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def counts(self) -> int:
        return int(self.indices.size)

    @property
    def count_rate(self) -> float:
        return self.counts * self.gate_rate / self.gates if self.gates else 0.0


class SdFilter:
    """Streaming SD filter; carries delay-line and ripple history across chunks.

    History defaults to the first input sample repeated, i.e. the trace is
    taken to be in steady state before its first gate.
    """

    def __init__(self, kernel: SdKernel):
        self.kernel = kernel
        self._prev_in: np.ndarray | None = None
        self._prev_step = np.zeros(len(kernel.ripple_taps))

    def process(self, chunk) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(main, ripple)`` components; the SD output is their sum."""
        x = np.asarray(chunk, dtype=float)
        d = self.kernel.delay_gates
        if self._prev_in is None:
            first = x[0] if x.size else 0.0
            self._prev_in = np.full(d, first)
        ext = np.concatenate([self._prev_in, x])
        delayed = ext[: x.size]
        main = x - (1.0 - self.kernel.residual_fraction) * delayed
        # only transitions ring; the uncancelled residual does not
        step = np.maximum(x - delayed, 0.0)

        taps = self.kernel.ripple_taps
        ripple = np.zeros(x.size)
        if taps:
            hist = np.concatenate([self._prev_step, step])
            k = len(taps)
            for j, tap in enumerate(taps):
                # ripple[i] += tap * step[i - 1 - j]
                ripple += tap * hist[k - 1 - j : k - 1 - j + x.size]
            self._prev_step = hist[-k:].copy()
        self._prev_in = ext[-d:].copy()
        return main, ripple


def sd_components(responses, kernel: SdKernel) -> tuple[np.ndarray, np.ndarray]:
    return SdFilter(kernel).process(responses)


def sd_transform(responses, kernel: SdKernel) -> np.ndarray:
    """Self-differenced output: delayed subtraction plus post-peak ripple."""
    main, ripple = sd_components(responses, kernel)
    return main + ripple


def classify_polarity(window, min_excursion: float = 0.0) -> Polarity:
    """Order of the dominant positive and negative excursions in ``window``."""
    w = np.asarray(window, dtype=float)
    if w.size == 0:
        return Polarity.UNCLASSIFIED
    hi, lo = int(np.argmax(w)), int(np.argmin(w))
    if w[hi] <= min_excursion or w[lo] >= -min_excursion:
        return Polarity.UNCLASSIFIED
    return Polarity.NORMAL if hi < lo else Polarity.INVERTED


def discriminate(
    sd_out,
    disc: Discriminator,
    gate_rate: float = 1e9,
    ripple=None,
    delay_gates: int = 1,
    classify: bool = True,
) -> DetectionEvents:
    """Counts are gates whose SD output exceeds the level.

    If the ripple component is given, counts whose main component alone
    stays below the level are flagged as ripple follow-ups.
    """
    out = np.asarray(sd_out, dtype=float)
    hit = out > disc.level_mv
    if disc.acceptance is not None:
        hit &= np.asarray(disc.acceptance, dtype=bool)
    idx = np.flatnonzero(hit)
    ripple_flag = np.zeros(idx.size, dtype=bool)
    if ripple is not None:
        main = out - np.asarray(ripple, dtype=float)
        ripple_flag = main[idx] <= disc.level_mv
    polarity: list[Polarity] = []
    if classify:
        n = out.size
        for i in idx:
            lo, hi = max(0, i - delay_gates), min(n, i + delay_gates + 1)
            polarity.append(classify_polarity(out[lo:hi]))
    return DetectionEvents(idx, polarity, out.size, gate_rate, ripple_flag)


def im_peak_amplitude(photocurrent: float, contrast: float, model: ApdModel) -> float:
    """Main SD peak (mV) from one IM dip; ``contrast`` is the dip transmission."""
    if photocurrent < 0 or not 0 <= contrast <= 1:
        raise ValueError("photocurrent >= 0 and 0 <= contrast <= 1 required")
    return float((1.0 - contrast) * model.linear_amplitude(photocurrent))
