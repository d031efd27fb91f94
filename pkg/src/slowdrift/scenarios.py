"""The shipped synthetic scenario: an affine horseshoe driven by two actions.

``J_a = u^2 + v^2`` and ``J_b = (v - 1)^2 + u^2`` on the box
``[-2, 2.5] x [-2, 2]``, with all per-step return times equal to 1 so that
one symbol step of a pure block advances slow time by ``eps``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .horseshoe import CrossFormSystem, affine_horseshoe
from .model import Box
from .slowdrive import AccessiblePath, AnalyticGenerator, SlowGeneratorSet

DOMAIN = Box([-2.0, -2.0], [2.5, 2.0])
Z0 = (0.0, 0.5)
DURATIONS = (0.4, 0.5, 0.3)
SEGMENTS = (0, 1, 0)


@dataclass
class Scenario:
    system: CrossFormSystem
    generators: SlowGeneratorSet
    path: AccessiblePath
    codes: dict
    delta: float


def synthetic_generators(domain=DOMAIN) -> SlowGeneratorSet:
    ga = AnalyticGenerator.quadratic("J_a", [0.0, 0.0], domain)
    gb = AnalyticGenerator.quadratic("J_b", [1.0, 0.0], domain)
    return SlowGeneratorSet([ga, gb])


def synthetic_scenario(coupling: float = 0.1, mu: float = 0.2, delta: float = 0.25,
                       z0=Z0, durations=DURATIONS, segments=SEGMENTS) -> Scenario:
    """Affine horseshoe with ``lam = 0.5``, ``R = 1`` and the two actions above."""
    gens = synthetic_generators()
    sys = affine_horseshoe(DOMAIN, lam=0.5, R=1.0, coupling=coupling,
                           generators={"a": gens[0], "b": gens[1]}, mu=mu)
    path = AccessiblePath.from_durations(np.asarray(z0, dtype=float), durations, segments)
    return Scenario(sys, gens, path, {0: "a", 1: "b"}, delta)
