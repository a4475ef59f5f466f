"""Piecewise stress-controlled uniaxial loading programs.

A program is a tuple of contiguous segments. Cyclic segments are sampled so
that every stress turning point is a grid node; per-cycle strain extrema are
read off at those nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi
_BISECTIONS = 80


def _descending_root(g, lo, hi):
    """Root of ``g`` in ``[lo, hi]`` per element when ``g(lo) > 0 > g(hi)``, else ``lo``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    ok = (g(lo) > 0) & (g(hi) < 0)
    a, b = lo.copy(), hi.copy()
    for _ in range(_BISECTIONS):
        mid = 0.5 * (a + b)
        up = g(mid) > 0
        a = np.where(up, mid, a)
        b = np.where(up, b, mid)
    return np.where(ok, 0.5 * (a + b), lo)


@dataclass(frozen=True)
class MonotonicRamp:
    stress_from: float
    stress_to: float
    duration: float

    @property
    def start_stress(self) -> float:
        return self.stress_from

    @property
    def end_stress(self) -> float:
        return self.stress_to

    def stress_at(self, tau):
        return self.stress_from + (self.stress_to - self.stress_from) * np.asarray(tau, dtype=float) / self.duration

    def rate(self, tau):
        return np.full_like(np.asarray(tau, dtype=float), (self.stress_to - self.stress_from) / self.duration)


@dataclass(frozen=True)
class Hold:
    stress: float
    duration: float

    @property
    def start_stress(self) -> float:
        return self.stress

    @property
    def end_stress(self) -> float:
        return self.stress

    def stress_at(self, tau):
        return np.full_like(np.asarray(tau, dtype=float), self.stress)

    def rate(self, tau):
        return np.zeros_like(np.asarray(tau, dtype=float))


@dataclass(frozen=True)
class HarmonicCycles:
    """``mean + a(t) sin(2 pi t / period)`` with ``a`` ramping linearly."""

    mean: float
    amplitude_from: float
    amplitude_to: float
    n_cycles: int
    period: float

    @property
    def duration(self) -> float:
        return self.n_cycles * self.period

    @property
    def start_stress(self) -> float:
        return self.mean

    @property
    def end_stress(self) -> float:
        return self.mean

    def amplitude(self, tau):
        if self.n_cycles == 0:
            return np.full_like(np.asarray(tau, dtype=float), self.amplitude_from)
        return self.amplitude_from + (self.amplitude_to - self.amplitude_from) * np.asarray(tau) / self.duration

    def stress_at(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.mean + self.amplitude(tau) * np.sin(TWO_PI * tau / self.period)

    def rate(self, tau):
        tau = np.asarray(tau, dtype=float)
        slope = 0.0 if self.n_cycles == 0 else (self.amplitude_to - self.amplitude_from) / self.duration
        w = TWO_PI / self.period
        return slope * np.sin(w * tau) + self.amplitude(tau) * w * np.cos(w * tau)

    def extremum_times(self) -> tuple[np.ndarray, np.ndarray]:
        """Local times of the stress maximum and minimum of every cycle.

        A growing amplitude moves them past the quarter points, so they are
        located as zeros of the stress rate.
        """
        k = np.arange(self.n_cycles, dtype=float)
        P = self.period
        t_hi = _descending_root(self.rate, (k + 0.25) * P, (k + 0.5) * P)
        t_lo = _descending_root(lambda t: -self.rate(t), (k + 0.75) * P, (k + 1.0) * P)
        return t_hi, t_lo


@dataclass(frozen=True)
class PulsatingCycles:
    """``peak(t) (1 - cos(2 pi t / period)) / 2``: zero minimum, ramping peak."""

    peak_from: float
    peak_to: float
    n_cycles: int
    period: float

    @property
    def duration(self) -> float:
        return self.n_cycles * self.period

    @property
    def start_stress(self) -> float:
        return 0.0

    @property
    def end_stress(self) -> float:
        return 0.0

    def peak(self, tau):
        if self.n_cycles == 0:
            return np.full_like(np.asarray(tau, dtype=float), self.peak_from)
        return self.peak_from + (self.peak_to - self.peak_from) * np.asarray(tau) / self.duration

    def stress_at(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.peak(tau) * 0.5 * (1.0 - np.cos(TWO_PI * tau / self.period))

    def rate(self, tau):
        tau = np.asarray(tau, dtype=float)
        slope = 0.0 if self.n_cycles == 0 else (self.peak_to - self.peak_from) / self.duration
        w = TWO_PI / self.period
        return slope * 0.5 * (1.0 - np.cos(w * tau)) + self.peak(tau) * 0.5 * w * np.sin(w * tau)

    def extremum_times(self) -> tuple[np.ndarray, np.ndarray]:
        """Local times of the peak and of the zero-stress minimum of every cycle."""
        k = np.arange(self.n_cycles, dtype=float)
        P = self.period
        t_hi = _descending_root(self.rate, (k + 0.5) * P, (k + 0.75) * P)
        return t_hi, (k + 1.0) * P


@dataclass(frozen=True)
class Unload:
    """Linear return to zero stress; ``stress_from`` is filled in by the program."""

    duration: float
    stress_from: float = math.nan

    @property
    def start_stress(self) -> float:
        return self.stress_from

    @property
    def end_stress(self) -> float:
        return 0.0

    def stress_at(self, tau):
        return self.stress_from * (1.0 - np.asarray(tau, dtype=float) / self.duration)

    def rate(self, tau):
        return np.full_like(np.asarray(tau, dtype=float), -self.stress_from / self.duration)


Segment = Union[MonotonicRamp, Hold, HarmonicCycles, PulsatingCycles, Unload]
CYCLIC = (HarmonicCycles, PulsatingCycles)


@dataclass(frozen=True)
class LoadingProgram:
    segments: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        segs = []
        current = 0.0
        for i, seg in enumerate(self.segments):
            if seg.duration < 0:
                raise ConfigError(f"segment {i} has negative duration")
            if isinstance(seg, Unload):
                seg = replace(seg, stress_from=current)
            if isinstance(seg, HarmonicCycles):
                if seg.amplitude_from < 0 or seg.amplitude_to < seg.amplitude_from:
                    raise ConfigError("harmonic amplitude must be non-negative and non-decreasing")
            if isinstance(seg, CYCLIC):
                if seg.n_cycles < 0 or not seg.period > 0:
                    raise ConfigError("cyclic segments need n_cycles >= 0 and a positive period")
            scale = max(abs(current), abs(seg.start_stress), 1.0)
            if abs(seg.start_stress - current) > 1e-9 * scale:
                raise ConfigError(
                    f"segment {i} starts at {seg.start_stress} MPa but the previous one ends at {current} MPa"
                )
            current = seg.end_stress
            segs.append(seg)
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def duration(self) -> float:
        return float(sum(seg.duration for seg in self.segments))

    @property
    def n_cycles(self) -> int:
        return sum(seg.n_cycles for seg in self.segments if isinstance(seg, CYCLIC))

    def segment_starts(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([seg.duration for seg in self.segments])])

    def stress(self, t):
        """Prescribed axial stress at absolute times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        starts = self.segment_starts()
        for seg, t0, t1 in zip(self.segments, starts[:-1], starts[1:]):
            if seg.duration == 0:
                continue
            mask = (t >= t0) & (t <= t1)
            out[mask] = seg.stress_at(t[mask] - t0)
        return out

    def stress_rate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        starts = self.segment_starts()
        for seg, t0, t1 in zip(self.segments, starts[:-1], starts[1:]):
            if seg.duration == 0:
                continue
            mask = (t >= t0) & (t < t1)
            out[mask] = seg.rate(t[mask] - t0)
        return out

    def discretize(self, nodes_per_cycle: int = 40, ramp_nodes: int = 40, hold_nodes: int = 4) -> ProgramGrid:
        if nodes_per_cycle < 4 or nodes_per_cycle % 4:
            raise ConfigError("nodes_per_cycle must be a positive multiple of 4")
        times = [np.array([0.0])]
        stresses = [np.array([self.segments[0].start_stress if self.segments else 0.0])]
        seg_ids = [np.array([-1])]
        turning = []
        turning_times = []
        cyc_start = None
        cyc_duration = 0.0
        offset = 0.0
        count = 1
        for idx, seg in enumerate(self.segments):
            if seg.duration == 0:
                continue
            if isinstance(seg, CYCLIC):
                uniform = seg.period * np.arange(1, seg.n_cycles * nodes_per_cycle + 1) / nodes_per_cycle
                t_hi, t_lo = seg.extremum_times()
                ext = np.empty(2 * seg.n_cycles)
                ext[0::2] = t_hi
                ext[1::2] = t_lo
                # extrema that coincide with a uniform node reuse it
                nearest = uniform[np.clip(np.rint(ext * nodes_per_cycle / seg.period).astype(np.int64) - 1, 0, None)]
                ext = np.where(np.abs(nearest - ext) <= 1e-12 * seg.period, nearest, ext)
                tau = np.unique(np.concatenate([uniform, ext]))
                n = tau.size
                if cyc_start is None:
                    cyc_start = offset
                turning.append(count + np.searchsorted(tau, ext))
                turning_times.append(ext + offset - cyc_start)
                cyc_duration = offset + seg.duration - cyc_start
            else:
                n = ramp_nodes if isinstance(seg, (MonotonicRamp, Unload)) else hold_nodes
                tau = seg.duration * np.arange(1, n + 1) / n
            sig = seg.stress_at(tau)
            times.append(offset + tau)
            stresses.append(np.asarray(sig, dtype=float))
            seg_ids.append(np.full(n, idx))
            offset += seg.duration
            count += n
        return ProgramGrid(
            time=np.concatenate(times),
            stress=np.concatenate(stresses),
            segment=np.concatenate(seg_ids),
            turning_nodes=np.concatenate(turning) if turning else np.zeros(0, dtype=np.int64),
            turning_times=np.concatenate(turning_times) if turning_times else np.zeros(0),
            cyclic_duration=cyc_duration,
        )

    def describe(self) -> list[dict]:
        out = []
        for seg in self.segments:
            d = {"type": type(seg).__name__}
            d.update({k: v for k, v in seg.__dict__.items()})
            out.append(d)
        return out

    @classmethod
    def from_description(cls, desc: list[dict], metadata: dict | None = None) -> LoadingProgram:
        types = {c.__name__: c for c in (MonotonicRamp, Hold, HarmonicCycles, PulsatingCycles, Unload)}
        segs = []
        for d in desc:
            d = dict(d)
            kind = types.get(d.pop("type", None))
            if kind is None:
                raise ConfigError(f"unknown segment description {d}")
            if kind is Unload:
                d.pop("stress_from", None)
            segs.append(kind(**d))
        return cls(tuple(segs), dict(metadata or {}))


@dataclass(frozen=True, eq=False)
class ProgramGrid:
    """Time nodes of a discretized program.

    ``turning_nodes`` holds, cycle by cycle, the node index of the stress
    maximum followed by that of the minimum; ``turning_times`` are the same
    instants measured from the start of the first cyclic segment.
    """

    time: np.ndarray
    stress: np.ndarray
    segment: np.ndarray
    turning_nodes: np.ndarray
    turning_times: np.ndarray
    cyclic_duration: float

    @property
    def n_nodes(self) -> int:
        return len(self.time)


@dataclass(frozen=True)
class StageDurations:
    """Durations (s) of the four experiment stages."""

    ramp: float = 60.0
    hold: float = 30.0
    period: float = 1.0
    unload: float = 60.0


def make_experiment_program(
    sigma_m: float,
    sigma_a_max: float,
    n_cycles: int,
    durations: StageDurations = StageDurations(),
    amplitude_start_fraction: float = 0.05,
    stress_ceiling: float | None = None,
) -> LoadingProgram:
    """Four-stage ratcheting test: load to the mean, hold, cycle, unload."""
    if sigma_a_max < 0:
        raise ConfigError("sigma_a_max must be non-negative")
    if n_cycles < 1:
        raise ConfigError("the cyclic stage needs at least one cycle")
    if not 0.0 <= amplitude_start_fraction <= 1.0:
        raise ConfigError("amplitude_start_fraction must lie in [0, 1]")
    if stress_ceiling is not None and sigma_m + sigma_a_max > stress_ceiling:
        raise ConfigError(f"peak stress {sigma_m + sigma_a_max} MPa exceeds the ceiling {stress_ceiling} MPa")
    segs = (
        MonotonicRamp(0.0, sigma_m, durations.ramp),
        Hold(sigma_m, durations.hold),
        HarmonicCycles(sigma_m, amplitude_start_fraction * sigma_a_max, sigma_a_max, n_cycles, durations.period),
        Unload(durations.unload),
    )
    meta = {
        "kind": "experiment",
        "sigma_m": sigma_m,
        "sigma_a_max": sigma_a_max,
        "n_cycles": n_cycles,
        "peak_stress": sigma_m + sigma_a_max,
    }
    return LoadingProgram(segs, meta)


def make_metric_program(
    n_cycles: int = 50, sigma_max_final: float = 890.0, period: float = 1.0, sigma_max_initial: float = 0.0
) -> LoadingProgram:
    """Pulsating program from zero whose peak grows linearly to ``sigma_max_final``."""
    if n_cycles < 0:
        raise ConfigError("n_cycles must be non-negative")
    seg = PulsatingCycles(sigma_max_initial, sigma_max_final, n_cycles, period)
    return LoadingProgram((seg,), {"kind": "metric", "n_cycles": n_cycles, "sigma_max_final": sigma_max_final})
