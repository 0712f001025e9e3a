"""Flat ``section.key = value`` files for parameters, sweeps and anchors."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .apd import ApdModel, BiasNetwork
from .modulator import ImConfig
from .sd import SdKernel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Setup:
    """Everything describing the simulated receiver."""

    bias: BiasNetwork = field(default_factory=BiasNetwork)
    apd: ApdModel = field(default_factory=ApdModel)
    im: ImConfig = field(default_factory=ImConfig)
    delay_gates: int = 1
    ripple_taps: tuple[float, ...] = (0.3, 0.15)

    @property
    def kernel(self) -> SdKernel:
        return SdKernel(self.delay_gates, self.apd.residual_fraction, self.ripple_taps)


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def fmt(x, exact: bool = False) -> str:
    """Text form of a value; ``exact`` keeps the shortest round-trip float."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return repr(x) if exact else f"{x:.9g}"
    if isinstance(x, (tuple, list)):
        return ",".join(fmt(float(v), exact) for v in x)
    return str(x)


def write_kv(path, items: dict) -> None:
    # exact floats so calibrated constants survive a round trip
    Path(path).write_text("".join(f"{k} = {fmt(v, exact=True)}\n" for k, v in items.items()))


def _coerce(template, text: str):
    if isinstance(template, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(float(text))
    if isinstance(template, float):
        return float(text)
    if isinstance(template, tuple):
        return tuple(float(v) for v in text.split(",") if v.strip())
    return text


def _update(obj, prefix: str, kv: dict[str, str], used: set[str]):
    changes = {}
    for f in dataclasses.fields(obj):
        key = f"{prefix}.{f.name}"
        if key in kv:
            changes[f.name] = _coerce(getattr(obj, f.name), kv[key])
            used.add(key)
    return dataclasses.replace(obj, **changes) if changes else obj


def setup_from_kv(kv: dict[str, str], base: Setup | None = None) -> tuple[Setup, set[str]]:
    """Apply ``bias.*``, ``apd.*``, ``im.*``, ``sd.*`` keys; returns keys consumed."""
    base = base or Setup()
    used: set[str] = set()
    try:
        bias = _update(base.bias, "bias", kv, used)
        apd = _update(base.apd, "apd", kv, used)
        im = _update(base.im, "im", kv, used)
        delay = int(kv["sd.delay_gates"]) if "sd.delay_gates" in kv else base.delay_gates
        taps = base.ripple_taps
        if "sd.ripple_taps" in kv:
            taps = tuple(float(v) for v in kv["sd.ripple_taps"].split(",") if v.strip())
        if "sd.residual_fraction" in kv:
            apd = dataclasses.replace(apd, residual_fraction=float(kv["sd.residual_fraction"]))
        used |= {k for k in ("sd.delay_gates", "sd.ripple_taps", "sd.residual_fraction") if k in kv}
        setup = Setup(bias, apd, im, delay, taps)
        setup.kernel  # validate
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return setup, used


def setup_to_kv(setup: Setup) -> dict:
    items = {}
    for prefix, obj in (("bias", setup.bias), ("apd", setup.apd), ("im", setup.im)):
        for f in dataclasses.fields(obj):
            items[f"{prefix}.{f.name}"] = getattr(obj, f.name)
    items["sd.delay_gates"] = setup.delay_gates
    items["sd.ripple_taps"] = setup.ripple_taps
    return items


def load_setup(*paths) -> tuple[Setup, dict[str, str]]:
    """Merge files in order; returns the setup and the leftover keys."""
    kv: dict[str, str] = {}
    for p in paths:
        if p is not None:
            kv.update(read_kv(p))
    setup, used = setup_from_kv(kv)
    return setup, {k: v for k, v in kv.items() if k not in used}
