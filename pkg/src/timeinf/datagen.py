"""Seeded synthetic series with injected anomalies.

Randomness comes from numpy's PCG64 bit generator seeded with the 64-bit
``seed``; one standard-normal draw per time step, so a spec regenerates
identically on every platform numpy supports.

Anomaly kinds (``sigma`` is the base noise scale, ``amplitude`` the base
pattern scale; see :func:`base_scales`):

``point``
    ``magnitude * sigma`` added to the single sample at ``start``.
``noise_burst``
    innovation/observation noise multiplied by ``magnitude`` over the span.
``local_context``
    level shift of ``magnitude * amplitude`` over the span.
``global_context``
    span replaced by a phase-inverted copy of the base pattern.  For a sine
    base the period is also divided by ``magnitude``; for an AR(1) base the
    span is negated and scaled by ``magnitude``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.signal import lfilter

from .series import TimeSeries

ANOMALY_KINDS = ("point", "noise_burst", "local_context", "global_context")


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Ar1Base:
    phi: float
    sigma: float = 1.0


@dataclass(frozen=True)
class SineBase:
    period: float
    amplitude: float = 1.0
    noise_sigma: float = 0.1


Base = Union[Ar1Base, SineBase]


@dataclass(frozen=True)
class Anomaly:
    kind: str
    start: int
    span: int = 1
    magnitude: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    length: int
    base: Base
    anomalies: tuple[Anomaly, ...] = field(default_factory=tuple)
    seed: int = 0

    def validate(self) -> None:
        if self.length < 2:
            raise SynthSpecError("length must be at least 2")
        if isinstance(self.base, Ar1Base):
            if not abs(self.base.phi) < 1:
                raise SynthSpecError("ar1 base requires |phi| < 1 (non-stationary phi)")
            if self.base.sigma <= 0:
                raise SynthSpecError("ar1 sigma must be positive")
        elif isinstance(self.base, SineBase):
            if self.base.period <= 0:
                raise SynthSpecError("sine period must be positive")
        else:
            raise SynthSpecError(f"unknown base {self.base!r}")
        spans = []
        for a in self.anomalies:
            if a.kind not in ANOMALY_KINDS:
                raise SynthSpecError(f"unknown anomaly kind {a.kind!r}")
            span = 1 if a.kind == "point" else a.span
            if span < 1 or a.start < 0 or a.start + span > self.length:
                raise SynthSpecError(f"anomaly span [{a.start}, {a.start + span}) outside series")
            spans.append((a.start, a.start + span))
        spans.sort()
        for (_, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise SynthSpecError("overlapping anomaly spans")


def base_scales(base: Base) -> tuple[float, float]:
    """``(sigma, amplitude)`` used to size anomalies."""
    if isinstance(base, Ar1Base):
        return base.sigma, base.sigma / math.sqrt(1 - base.phi**2)
    sigma = base.noise_sigma if base.noise_sigma > 0 else base.amplitude
    return sigma, base.amplitude


def _sine_pattern(base: SineBase, t: np.ndarray, period: float) -> np.ndarray:
    return base.amplitude * np.sin(2 * np.pi * t / period)


def generate(spec: SynthSpec) -> tuple[TimeSeries, np.ndarray]:
    spec.validate()
    T = spec.length
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    eps = rng.standard_normal(T)
    noise_mult = np.ones(T)
    for a in spec.anomalies:
        if a.kind == "noise_burst":
            noise_mult[a.start : a.start + a.span] = a.magnitude
    sigma, amplitude = base_scales(spec.base)
    t = np.arange(T, dtype=float)

    if isinstance(spec.base, Ar1Base):
        phi, s = spec.base.phi, spec.base.sigma
        shocks = s * noise_mult * eps
        shocks[0] = amplitude * noise_mult[0] * eps[0]  # stationary start
        x = lfilter([1.0], [1.0, -phi], shocks)
    else:
        x = _sine_pattern(spec.base, t, spec.base.period) + spec.base.noise_sigma * noise_mult * eps

    labels = np.zeros(T, dtype=int)
    for a in spec.anomalies:
        span = 1 if a.kind == "point" else a.span
        sl = slice(a.start, a.start + span)
        if a.kind == "point":
            x[a.start] += a.magnitude * sigma
        elif a.kind == "local_context":
            x[sl] += a.magnitude * amplitude
        elif a.kind == "global_context":
            if isinstance(spec.base, SineBase):
                period = spec.base.period / (a.magnitude if a.magnitude > 0 else 1.0)
                noise = spec.base.noise_sigma * eps[sl]
                x[sl] = -_sine_pattern(spec.base, t[sl], period) + noise
            else:
                x[sl] = -a.magnitude * x[sl]
        labels[sl] = 1
    return TimeSeries(x, ("value",)), labels


def parse_base(text: str) -> Base:
    """``ar1:<phi>:<sigma>`` or ``sine:<period>:<amplitude>[:<noise_sigma>]``."""
    parts = text.split(":")
    try:
        nums = [float(p) for p in parts[1:]]
        if parts[0] == "ar1" and len(nums) in (1, 2):
            return Ar1Base(*nums)
        if parts[0] == "sine" and len(nums) in (1, 2, 3):
            return SineBase(*nums)
    except ValueError:
        pass
    raise SynthSpecError(f"cannot parse base {text!r}")


def parse_anomaly(text: str) -> Anomaly:
    """``<kind>:<start>:<span>:<magnitude>``."""
    parts = text.split(":")
    if len(parts) != 4:
        raise SynthSpecError(f"cannot parse anomaly {text!r}")
    try:
        return Anomaly(parts[0], int(parts[1]), int(parts[2]), float(parts[3]))
    except ValueError:
        raise SynthSpecError(f"cannot parse anomaly {text!r}") from None
