"""Optical traces at Bob's input for honest operation and Eve's strategies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .apd import ApdModel
from .sd import Discriminator, SdKernel, sd_transform

DEFAULT_EVE_POWER = 1e-3


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class AliceSource:
    mu: float = 0.5

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mean photon number must be positive")


@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class CwBlind:
    power: float = DEFAULT_EVE_POWER


@dataclass(frozen=True)
class FakedState:
    power: float = DEFAULT_EVE_POWER


@dataclass(frozen=True)
class Burst:
    """Faked-state bursts covering ``fraction`` of the gates; the rest blocked."""

    fraction: float = 0.1
    burst_length: int = 1000
    power: float = DEFAULT_EVE_POWER


@dataclass(frozen=True)
class Partial:
    """Blocks of ``block_length`` gates, a fraction left undisturbed."""

    undisturbed_fraction: float = 0.5
    block_length: int = 1000
    power: float = DEFAULT_EVE_POWER


EveStrategy = Honest | CwBlind | FakedState | Burst | Partial


def parse_strategy(text: str) -> EveStrategy:
    """Parse ``honest``, ``cw:P``, ``faked:P``, ``burst:F:L``, ``partial:F``."""
    name, *args = text.strip().split(":")
    try:
        vals = [float(a) for a in args]
        if name == "honest" and not vals:
            return Honest()
        if name == "cw" and len(vals) == 1 and vals[0] >= 0:
            return CwBlind(vals[0])
        if name == "faked" and len(vals) == 1 and vals[0] >= 0:
            return FakedState(vals[0])
        if name == "burst" and len(vals) == 2 and 0 <= vals[0] <= 1 and vals[1] >= 1:
            return Burst(vals[0], int(vals[1]))
        if name == "partial" and len(vals) == 1 and 0 <= vals[0] <= 1:
            return Partial(vals[0])
    except ValueError:
        pass
    raise ValueError(f"malformed strategy string {text!r}")


@dataclass
class AttackTrace:
    power: np.ndarray      # W per gate, before the modulator
    nominal: np.ndarray    # unmodulated illumination level of the gate's segment
    alice_basis: np.ndarray
    alice_bit: np.ndarray
    eve_basis: np.ndarray
    eve_bit: np.ndarray
    attacked: np.ndarray   # Eve controls this gate (blinding or blocking)
    faked: np.ndarray      # Eve resends a faked state in this gate

    @property
    def gates(self) -> int:
        return self.power.size


def burst_layout(gates: int, fraction: float, burst_length: int) -> list[tuple[int, int]]:
    """Deterministic ``(start, length)`` of each burst, evenly spread."""
    n_b = int(round(fraction * gates))
    if n_b == 0:
        return []
    k = max(1, int(round(n_b / burst_length)))
    lengths = [n_b // k + (1 if i < n_b % k else 0) for i in range(k)]
    spacing = gates / k
    return [(int(i * spacing + (spacing - n) / 2), n) for i, n in enumerate(lengths)]


def build_trace(
    strategy: EveStrategy,
    source: AliceSource,
    gates: int,
    rng: np.random.Generator,
    model: ApdModel = ApdModel(),
) -> AttackTrace:
    if gates <= 0:
        raise ValueError("gates must be positive")
    alice_basis = rng.integers(0, 2, gates, dtype=np.int8)
    alice_bit = rng.integers(0, 2, gates, dtype=np.int8)
    eve_basis = rng.integers(0, 2, gates, dtype=np.int8)
    # intercept-resend: Eve reads Alice's bit when she guesses the basis
    coin = rng.integers(0, 2, gates, dtype=np.int8)
    eve_bit = np.where(eve_basis == alice_basis, alice_bit, coin).astype(np.int8)

    honest_power = source.mu * model.photon_energy * model.gate_rate
    attacked = np.zeros(gates, dtype=bool)
    faked = np.zeros(gates, dtype=bool)
    power = np.full(gates, honest_power)

    if isinstance(strategy, Honest):
        pass
    elif isinstance(strategy, (CwBlind, FakedState)):
        attacked[:] = True
        faked[:] = isinstance(strategy, FakedState)
        power[:] = strategy.power
    elif isinstance(strategy, Burst):
        attacked[:] = True
        power[:] = 0.0
        for start, n in burst_layout(gates, strategy.fraction, strategy.burst_length):
            power[start : start + n] = strategy.power
            faked[start : start + n] = True
    elif isinstance(strategy, Partial):
        n_blocks = -(-gates // strategy.block_length)
        n_honest = int(round(strategy.undisturbed_fraction * n_blocks))
        honest_blocks = np.zeros(n_blocks, dtype=bool)
        honest_blocks[rng.permutation(n_blocks)[:n_honest]] = True
        block_of = np.arange(gates) // strategy.block_length
        attacked = ~honest_blocks[block_of]
        faked = attacked.copy()
        power = np.where(attacked, strategy.power, honest_power)
    else:
        raise TypeError(f"unknown strategy {strategy!r}")

    return AttackTrace(
        power=power,
        nominal=power.copy(),
        alice_basis=alice_basis,
        alice_bit=alice_bit,
        eve_basis=eve_basis,
        eve_bit=eve_bit,
        attacked=attacked,
        faked=faked,
    )


def faked_state_click_rule(eve_basis, bob_basis, blinded):
    """A blinded detector clicks on a faked state iff Bob's basis matches Eve's."""
    if not np.all(blinded):
        raise ContractViolation("faked-state rule only applies to a blinded detector")
    return np.asarray(eve_basis) == np.asarray(bob_basis)


def burst_starts(trace) -> np.ndarray:
    """Gates where the input steps up from zero."""
    x = np.asarray(trace, dtype=float)
    prev = np.concatenate([[x[0]], x[:-1]])
    return np.flatnonzero((prev == 0) & (x > 0))


def burst_edge_transient(responses, kernel: SdKernel, disc: Discriminator) -> np.ndarray:
    """Indices of SD counts produced by 0 -> blinding steps in a response trace."""
    starts = burst_starts(responses)
    out = sd_transform(responses, kernel)
    return starts[out[starts] > disc.level_mv]
