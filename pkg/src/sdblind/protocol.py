"""BB84 accounting: bit assignment, sifting, QBER, key rate and abort.

Why p_im = 25% gives a 12.5% QBER floor: every IM activation forces a
count whose bit is a fair coin. Bob's basis is independent of that count,
so it survives sifting with probability 1/2, the same as any other click.
If Eve makes every gate click, a quarter of the sifted bits are coin flips
and half of those are wrong: Q >= p_im / 2. Any gate Eve leaves without a
click only raises the share of coin-flip bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

ORIGINS = ("none", "avalanche", "dark", "im_induced", "ripple", "edge", "residual", "faked_state")
CODE = {name: i for i, name in enumerate(ORIGINS)}
# origins whose bit is uncorrelated with anything Alice or Eve prepared
RANDOM_BIT = [CODE[o] for o in ("dark", "im_induced", "ripple", "edge", "residual")]


def binary_entropy(q: float) -> float:
    if not 0 <= q <= 1:
        raise ValueError(f"q={q} outside [0, 1]")
    if q in (0, 1):
        return 0.0
    return -q * math.log2(q) - (1 - q) * math.log2(1 - q)


def asymptotic_bb84_rate(q: float) -> float:
    return max(0.0, 1.0 - 2.0 * binary_entropy(q))


@dataclass(frozen=True)
class KeyRateModel:
    tolerance: float = 0.11
    rate: Callable[[float], float] = asymptotic_bb84_rate


def key_rate(q: float, model: KeyRateModel = KeyRateModel()) -> float:
    if not 0 <= q <= 0.5:
        raise ValueError("QBER must lie in [0, 0.5]")
    return model.rate(q)


@dataclass(frozen=True)
class ConvexityBound:
    q: float
    r_q: float
    r_qu: float
    bound_holds: bool


def convexity_bound(c_b, q_b, c_u, q_u, model: KeyRateModel = KeyRateModel()) -> ConvexityBound:
    """Average QBER of mixed blinded/undisturbed counts and R(Q) <= R(q_u)."""
    if min(c_b, c_u) < 0 or abs(c_b + c_u - 1) > 1e-9:
        raise ValueError("count fractions must be non-negative and sum to 1")
    if c_b > 0 and not 0 <= q_b <= 0.5:
        raise ValueError("q_b must lie in [0, 0.5]")
    if not 0 <= q_u <= 0.5:
        raise ValueError("q_u must lie in [0, 0.5]")
    q = c_u * q_u + (c_b * q_b if c_b > 0 else 0.0)
    r_q, r_qu = key_rate(q, model), key_rate(q_u, model)
    r_qb = key_rate(q_b, model) if c_b > 0 else 0.0
    return ConvexityBound(q, r_q, r_qu, r_q <= r_qb + r_qu + 1e-15)


@dataclass
class GateRecords:
    alice_basis: np.ndarray
    alice_bit: np.ndarray
    bob_basis: np.ndarray
    bob_bit: np.ndarray
    origin: np.ndarray      # codes into ORIGINS, 0 = no click
    attacked: np.ndarray

    @property
    def click(self) -> np.ndarray:
        return self.origin != 0


def resolve_bits(origin, alice_basis, alice_bit, eve_basis, eve_bit, faked, bob_basis, rng):
    """Bob's bit for every gate given what made the click."""
    coin = rng.integers(0, 2, origin.size, dtype=np.int8)
    # photon-triggered avalanche: the state came from Eve in faked gates
    src_basis = np.where(faked, eve_basis, alice_basis)
    src_bit = np.where(faked, eve_bit, alice_bit)
    bit = np.where(bob_basis == src_basis, src_bit, coin)
    bit = np.where(origin == CODE["faked_state"], eve_bit, bit)
    bit = np.where(np.isin(origin, RANDOM_BIT), coin, bit)
    return bit.astype(np.int8)


@dataclass
class SessionStats:
    gates: int
    counts: int
    counts_by_origin: dict[str, int] = field(default_factory=dict)
    sifted: int = 0
    errors: int = 0
    qber: float = math.nan
    q_b: float = math.nan
    q_u: float = math.nan
    c_b: float = math.nan
    c_u: float = math.nan
    sifted_b: int = 0
    errors_b: int = 0

    @property
    def empty(self) -> bool:
        return self.sifted == 0

    def qber_sigma(self) -> float:
        if self.empty:
            return math.nan
        return math.sqrt(max(self.qber * (1 - self.qber), 1e-300) / self.sifted)


def _ratio(a: int, b: int) -> float:
    return a / b if b else math.nan


def sift_and_qber(rec: GateRecords) -> SessionStats:
    click = rec.click
    sifted = click & (rec.alice_basis == rec.bob_basis)
    wrong = sifted & (rec.alice_bit != rec.bob_bit)
    by_origin = {
        name: int(np.count_nonzero(rec.origin == code))
        for code, name in enumerate(ORIGINS)
        if code and np.any(rec.origin == code)
    }
    n_s, n_e = int(sifted.sum()), int(wrong.sum())
    att = np.asarray(rec.attacked, dtype=bool)
    n_sb, n_eb = int((sifted & att).sum()), int((wrong & att).sum())
    n_su, n_eu = n_s - n_sb, n_e - n_eb
    return SessionStats(
        gates=click.size,
        counts=int(click.sum()),
        counts_by_origin=by_origin,
        sifted=n_s,
        errors=n_e,
        qber=_ratio(n_e, n_s),
        q_b=_ratio(n_eb, n_sb),
        q_u=_ratio(n_eu, n_su),
        c_b=_ratio(n_sb, n_s),
        c_u=_ratio(n_su, n_s),
        sifted_b=n_sb,
        errors_b=n_eb,
    )


class Decision(str, Enum):
    PROCEED = "proceed"
    ABORT = "abort"


def abort_decision(stats: SessionStats, model: KeyRateModel = KeyRateModel()) -> tuple[Decision, str]:
    if stats.empty:
        return Decision.ABORT, "empty session"
    if stats.qber >= model.tolerance:
        return Decision.ABORT, f"QBER {stats.qber:.4f} >= tolerance {model.tolerance}"
    return Decision.PROCEED, "QBER below tolerance"
