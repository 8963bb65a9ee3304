"""Synthetic shipboard load profiles and MPC-grid forecasts.

A profile is the pointwise sum of components sampled on a uniform grid
``t_i = i * dt`` (``i = 0..N``), floored at zero. Components are small
frozen dataclasses with an ``evaluate(t, rng)`` method, so a profile is
reproducible from ``(components, seed, dt, duration)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .mpc import LoadForecast

__all__ = [
    "HotelComponent",
    "PulseComponent",
    "RampComponent",
    "NoiseComponent",
    "LoadProfile",
    "hotel_component",
    "pulse_component",
    "compose",
    "forecast_of",
    "reference_components",
    "write_profile_csv",
    "read_profile_csv",
]


@dataclass(frozen=True)
class HotelComponent:
    """Base load plus a slow sinusoid, floored at zero."""

    base: float
    amplitude: float = 0.0
    period: float = 60.0
    phase: float = 0.0
    kind: str = field(default="hotel", init=False)

    def __post_init__(self):
        if not self.base >= 0:
            raise ValueError("hotel base load must be >= 0")
        if not self.amplitude >= 0:
            raise ValueError("hotel amplitude must be >= 0")
        if not self.period > 0:
            raise ValueError("hotel period must be positive")

    def evaluate(self, t, rng=None):
        t = np.asarray(t, dtype=float)
        v = self.base + self.amplitude * np.sin(2.0 * np.pi * t / self.period + self.phase)
        return np.maximum(v, 0.0)


@dataclass(frozen=True)
class PulseComponent:
    """Trapezoidal pulse train.

    Pulse ``n`` is at full amplitude from ``t_on = start + n * period`` and
    back at zero at ``t_off = t_on + duty * period``. Edges have slope
    ``rise`` (W/s), so the rising edge occupies ``[t_on - tau, t_on]`` and
    the falling edge ``[t_off - tau, t_off]`` with ``tau = amplitude / rise``.
    Keeping the edges inside the nominal window means a 1 s sampling grid
    aligned with ``start`` sees exactly the full-amplitude plateau.
    """

    amplitude: float
    period: float
    duty: float
    rise: float
    start: float = 0.0
    kind: str = field(default="pulse", init=False)

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValueError("pulse amplitude must be >= 0")
        if not self.period > 0:
            raise ValueError("pulse period must be positive")
        if not 0.0 < self.duty < 1.0:
            raise ValueError("pulse duty must lie strictly between 0 and 1")
        if not self.rise > 0:
            raise ValueError("pulse rise must be positive")
        if self.edge_time > self.on_time or self.on_time + self.edge_time > self.period:
            raise ValueError("pulse edges do not fit inside the on/off windows")

    @property
    def on_time(self):
        return self.duty * self.period

    @property
    def edge_time(self):
        return self.amplitude / self.rise

    def edges(self, t_end):
        """Nominal ``(t_on, t_off)`` pairs of pulses that start before ``t_end``."""
        out = []
        n = 0
        while self.start + n * self.period < t_end:
            t_on = self.start + n * self.period
            out.append((t_on, t_on + self.on_time))
            n += 1
        return out

    def evaluate(self, t, rng=None):
        t = np.asarray(t, dtype=float)
        tau, on, a = self.edge_time, self.on_time, self.amplitude
        s = t - self.start
        n = np.floor((s + tau) / self.period)
        u = s - n * self.period
        v = np.where(u < 0.0, (u + tau) / tau * a,
                     np.where(u <= on - tau, a,
                              np.where(u < on, (on - u) / tau * a, 0.0)))
        return np.where(n >= 0, v, 0.0)


@dataclass(frozen=True)
class RampComponent:
    """Linear change from ``p_start`` to ``p_end`` over ``[t_start, t_end]``, held after."""

    t_start: float
    t_end: float
    p_start: float
    p_end: float
    kind: str = field(default="ramp", init=False)

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("ramp t_end must exceed t_start")

    def evaluate(self, t, rng=None):
        t = np.asarray(t, dtype=float)
        frac = np.clip((t - self.t_start) / (self.t_end - self.t_start), 0.0, 1.0)
        return self.p_start + frac * (self.p_end - self.p_start)


@dataclass(frozen=True)
class NoiseComponent:
    """Band-limited Gaussian noise: stationary AR(1) with correlation time ``tau``."""

    sigma: float
    tau: float = 1.0
    kind: str = field(default="noise", init=False)

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("noise sigma must be >= 0")
        if not self.tau > 0:
            raise ValueError("noise tau must be positive")

    def evaluate(self, t, rng):
        t = np.asarray(t, dtype=float)
        if t.size == 0 or self.sigma == 0:
            return np.zeros_like(t)
        dt = float(t[1] - t[0]) if t.size > 1 else self.tau
        a = math.exp(-dt / self.tau)
        w = rng.standard_normal(t.size) * self.sigma
        out = np.empty(t.size)
        out[0] = w[0]
        b = math.sqrt(1.0 - a * a)
        for i in range(1, t.size):
            out[i] = a * out[i - 1] + b * w[i]
        return out


def hotel_component(base, amplitude=0.0, period=60.0):
    return HotelComponent(base, amplitude, period)


def pulse_component(amplitude, period, duty, rise, start=0.0):
    return PulseComponent(amplitude, period, duty, rise, start)


@dataclass(frozen=True, eq=False)
class LoadProfile:
    dt: float
    samples: np.ndarray
    components: tuple = ()
    seed: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).reshape(-1)
        if not np.all(np.isfinite(s)):
            raise ValueError("load samples must be finite")
        if np.any(s < 0):
            raise ValueError("load samples must be >= 0")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def times(self):
        return np.arange(self.samples.shape[0]) * self.dt

    @property
    def duration(self):
        return (self.samples.shape[0] - 1) * self.dt

    def pulse_edges(self):
        """Nominal on/off instants of every pulse component."""
        out = []
        for c in self.components:
            if isinstance(c, PulseComponent):
                for pair in c.edges(self.duration + self.dt):
                    out.extend(pair)
        return sorted(t for t in out if t <= self.duration)


def compose(components, duration, dt, seed=0):
    """Sum ``components`` on ``t = 0, dt, ..., duration`` and floor at zero."""
    if not (duration > 0 and dt > 0):
        raise ValueError("duration and dt must be positive")
    n = int(round(duration / dt))
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError("duration must be an integer multiple of dt")
    t = np.arange(n + 1) * dt
    total = np.zeros(n + 1)
    for idx, comp in enumerate(components):
        rng = np.random.default_rng([int(seed), idx])
        total += comp.evaluate(t, rng)
    return LoadProfile(dt, np.maximum(total, 0.0), tuple(components), int(seed))


def forecast_of(profile, h, t_s, mode="exact", sigma=0.0, seed=0):
    """Sample the profile at the left edge of each MPC step.

    ``mode="noisy"`` adds seeded zero-mean Gaussian error of std ``sigma``
    (W), clipped so the forecast stays nonnegative.
    """
    ratio = t_s / profile.dt
    stride = int(round(ratio))
    if stride < 1 or abs(stride - ratio) > 1e-9 * ratio:
        raise ValueError("t_s must be an integer multiple of the profile dt")
    if (h - 1) * stride >= profile.samples.shape[0] or h * t_s > profile.duration + 1e-9 * t_s:
        raise ValueError(f"profile of {profile.duration} s does not cover {h} steps of {t_s} s")
    p = profile.samples[np.arange(h) * stride].copy()
    if mode == "noisy":
        if sigma > 0:
            p = np.maximum(p + np.random.default_rng(seed).normal(0.0, sigma, h), 0.0)
    elif mode != "exact":
        raise ValueError(f"unknown forecast mode {mode!r}")
    return LoadForecast(p)


def reference_components():
    """Hotel 8 MW + 2 MW/60 s and a 10 MW, 20 s, 25% pulse train from t = 10 s."""
    return [HotelComponent(8e6, 2e6, 60.0),
            PulseComponent(10e6, 20.0, 0.25, 1e8, start=10.0)]


def write_profile_csv(profile, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "power_w"])
        for t, p in zip(profile.times, profile.samples):
            w.writerow(["%.15g" % t, "%.15g" % p])


def read_profile_csv(path):
    """Read a two-column ``time_s, power_w`` file on a uniform grid from t = 0."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["time_s", "power_w"]:
        raise ValueError("expected header 'time_s,power_w'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    if data.shape[0] < 2:
        raise ValueError("profile needs at least two samples")
    t = data[:, 0]
    dt = float(t[1] - t[0])
    if abs(t[0]) > 1e-12 or dt <= 0 or np.max(np.abs(np.diff(t) - dt)) > 1e-9 * max(dt, 1.0):
        raise ValueError("profile times must start at 0 and be uniformly spaced")
    return LoadProfile(dt, data[:, 1])
