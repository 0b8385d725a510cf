"""Scalar time profiles: the two-bump flushing schedule and the data cutoff.

The flushing profile is a pair of mollifier bumps centered at t=1/4 and
t=3/4, so its support misses {0, 1/2, 1}; the data cutoff is 1 on [0,1/4],
0 on [1/2,1], with a quintic smoothstep in between.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .numerics import mollifier, mollifier_d, smoothstep5


@dataclass(frozen=True)
class TimeProfile:
    """Analytic scalar profile on [0,1]; evaluated exactly wherever needed."""

    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gamma":
            w = self.params["bump_width"]
            a = self.params["amplitude"]
            val = a * (mollifier((t - 0.25) / w) + mollifier((t - 0.75) / w))
            return val if val.ndim else float(val)
        if self.kind == "mu":
            s = np.clip((t - 0.25) / 0.25, 0.0, 1.0)
            val = 1.0 - smoothstep5(s)
            return val if val.ndim else float(val)
        if self.kind == "zero":
            val = np.zeros_like(t)
            return val if val.ndim else 0.0
        raise ValueError(f"unknown profile kind {self.kind!r}")

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gamma":
            w = self.params["bump_width"]
            a = self.params["amplitude"]
            val = (a / w) * (mollifier_d((t - 0.25) / w) + mollifier_d((t - 0.75) / w))
            return val if val.ndim else float(val)
        raise ValueError(f"derivative not implemented for kind {self.kind!r}")

    def integral(self, a, b):
        """Adaptive quadrature of the profile over [a, b]."""
        val, _ = integrate.quad(lambda t: float(self(t)), a, b, limit=200)
        return val

    def sample(self, times):
        return self(np.asarray(times, dtype=float))


def make_gamma(bump_width: float, amplitude: float) -> TimeProfile:
    """Two-bump flushing profile; support inside (0,1/2) and (1/2,1).

    Returns the profile with its half-interval integral stored in params
    (used downstream when sizing the flushing strength).
    """
    if not 0.0 < bump_width < 0.25:
        raise ValueError(f"bump_width must be in (0, 1/4), got {bump_width}")
    if amplitude <= 0.0:
        raise ValueError("amplitude must be positive (profile must be non-zero)")
    profile = TimeProfile("gamma", {"bump_width": bump_width, "amplitude": amplitude})
    half = profile.integral(0.0, 0.5)
    object.__setattr__(profile, "params", {**profile.params, "half_integral": half})
    return profile


def make_mu() -> TimeProfile:
    """Data cutoff: 1 on [0,1/4], quintic descent on [1/4,1/2], 0 on [1/2,1]."""
    return TimeProfile("mu")


def zero_profile() -> TimeProfile:
    return TimeProfile("zero")
