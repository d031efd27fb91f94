"""Slow Hamiltonian flows generated by actions, and accessible paths.

A generator is any object exposing ``value(z)``, ``gradient(z)`` (stacked
``(dJ/dv, dJ/du)``), ``period(z)`` and ``domain``; both
:class:`~slowdrift.orbit.ActionField` and :class:`AnalyticGenerator`
qualify.  Its slow vector field is::

    v' =  (1/T) dJ/du,     u' = -(1/T) dJ/dv

which is the direction of the per-return displacement of the slow
variables near the orbit family.  Generator indices are 0-based.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (DimensionError, DomainError, DomainExit, NonIncreasingBreakpoints, NotAccessible,
                     SegmentExit)
from .model import Domain, SlowPoint

TAU_MAX = 1e3


@dataclass(frozen=True)
class SlowFlowConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    tau_max: float = TAU_MAX


@dataclass(frozen=True)
class AnalyticGenerator:
    """A closed-form action ``J`` with gradient and period ``T``.

    ``fn``, ``grad`` and ``period_fn`` take arrays whose last axis is
    ``(v..., u...)``.
    """

    label: str
    fn: Callable
    grad: Callable
    domain: Domain
    period_fn: Callable = None

    def value(self, z):
        return self.fn(np.asarray(z, dtype=float))

    def gradient(self, z):
        return np.asarray(self.grad(np.asarray(z, dtype=float)), dtype=float)

    def period(self, z):
        z = np.asarray(z, dtype=float)
        if self.period_fn is None:
            return np.ones(z.shape[:-1]) if z.ndim > 1 else 1.0
        return self.period_fn(z)

    @classmethod
    def quadratic(cls, label: str, center, domain: Domain, scale: float = 1.0, period: float = 1.0):
        """``J = scale * |z - center|^2`` with constant period."""
        c = np.asarray(center, dtype=float)
        return cls(
            label,
            lambda z: scale * np.sum((z - c) ** 2, axis=-1),
            lambda z: 2 * scale * (z - c),
            domain,
            (lambda z: np.full(np.shape(z)[:-1], period) if np.ndim(z) > 1 else period),
        )

    @classmethod
    def linear(cls, label: str, coeffs, domain: Domain, offset: float = 0.0, period: float = 1.0):
        a = np.asarray(coeffs, dtype=float)
        return cls(
            label,
            lambda z: z @ a + offset,
            lambda z: np.broadcast_to(a, np.shape(z)).copy(),
            domain,
            (lambda z: np.full(np.shape(z)[:-1], period) if np.ndim(z) > 1 else period),
        )


def reference_generator(model, domain: Domain, label: str = None) -> AnalyticGenerator:
    """Generator from the closed-form action recorded by a builtin model."""
    ref = model.metadata.get("reference")
    if ref is None:
        raise ValueError(f"model {model.name!r} carries no closed-form action")

    def along(fn):
        def wrapped(z):
            z = np.asarray(z, dtype=float)
            if z.ndim == 1:
                return fn(z)
            return np.apply_along_axis(fn, -1, z)

        return wrapped

    return AnalyticGenerator(label or model.name, along(ref["action"]), along(ref["gradient"]), domain,
                             along(ref["period"]))


def _z(z) -> np.ndarray:
    return z.as_array() if isinstance(z, SlowPoint) else np.asarray(z, dtype=float)


def _field(gen, z: np.ndarray) -> np.ndarray:
    g = gen.gradient(z)
    d = z.shape[-1] // 2
    T = np.asarray(gen.period(z), dtype=float)[..., None]
    return np.concatenate([g[..., d:], -g[..., :d]], axis=-1) / T


def slow_vector_field(gen, z) -> np.ndarray:
    """``(v', u')`` of the slow flow of ``gen`` at ``z``."""
    z = _z(z)
    if not np.all(gen.domain.contains(z)):
        raise DomainError(f"{z.tolist()} is outside the domain")
    return _field(gen, z)


@dataclass(frozen=True)
class ExitTime:
    value: float
    infinite: bool = False

    def __float__(self):
        return np.inf if self.infinite else self.value


def _exit_event(domain: Domain):
    def ev(t, z):
        return float(domain.signed_distance(z))

    ev.terminal = True
    ev.direction = -1
    return ev


def _integrate(gen, z0, tau, cfg: SlowFlowConfig, dense=False, events=None):
    evs = [_exit_event(gen.domain)] + list(events or [])
    return solve_ivp(lambda t, z: _field(gen, z), (0.0, tau), z0, method="DOP853",
                     rtol=cfg.rel_tol, atol=cfg.abs_tol, events=evs, dense_output=dense)


def slow_flow(gen, z0, tau: float, cfg: SlowFlowConfig = None) -> np.ndarray:
    """``Phi^tau(z0)``; raises :class:`DomainExit` if the orbit leaves D first."""
    cfg = cfg or SlowFlowConfig()
    z0 = _z(z0).copy()
    if not gen.domain.contains(z0):
        raise DomainError(f"{z0.tolist()} is outside the domain")
    if tau == 0:
        return z0
    if tau < 0:
        raise ValueError("slow flows are followed forward only")
    res = _integrate(gen, z0, tau, cfg)
    if res.t_events[0].size:
        t_exit = float(res.t_events[0][0])
        raise DomainExit(f"slow flow leaves the domain at tau={t_exit:.12g}", tau_exit=t_exit)
    return res.y[:, -1]


def slow_trajectory(gen, z0, tau: float, cfg: SlowFlowConfig = None):
    """Dense solution ``tau -> Phi^tau(z0)`` on ``[0, tau]``."""
    cfg = cfg or SlowFlowConfig()
    z0 = _z(z0).copy()
    if tau == 0:
        return lambda s: np.broadcast_to(z0[:, None] if np.ndim(s) else z0,
                                         (z0.size,) + np.shape(s)).copy()
    res = _integrate(gen, z0, tau, cfg, dense=True)
    if res.t_events[0].size:
        t_exit = float(res.t_events[0][0])
        raise DomainExit(f"slow flow leaves the domain at tau={t_exit:.12g}", tau_exit=t_exit)
    return res.sol


def exit_time(gen, z, tau_max: float = TAU_MAX, cfg: SlowFlowConfig = None) -> ExitTime:
    """First time the slow flow from ``z`` leaves the domain.

    Returns ``ExitTime(tau_max, infinite=True)`` when no exit happens before
    ``tau_max``.
    """
    cfg = cfg or SlowFlowConfig()
    z = _z(z).copy()
    if not gen.domain.contains(z):
        raise DomainError(f"{z.tolist()} is outside the domain")
    res = _integrate(gen, z, tau_max, cfg)
    if res.t_events[0].size:
        return ExitTime(float(res.t_events[0][0]))
    return ExitTime(float(tau_max), True)


# ---------------------------------------------------------------------------
# Accessible paths


class SlowGeneratorSet(list):
    """Ordered generators sharing one domain."""

    def __init__(self, gens: Sequence):
        super().__init__(gens)
        if not self:
            raise ValueError("need at least one generator")

    @property
    def domain(self) -> Domain:
        return self[0].domain


@dataclass(frozen=True)
class AccessiblePath:
    z0: np.ndarray
    breakpoints: tuple
    generators: tuple
    points: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float))
        object.__setattr__(self, "breakpoints", tuple(float(t) for t in self.breakpoints))
        object.__setattr__(self, "generators", tuple(int(k) for k in self.generators))
        if len(self.breakpoints) != len(self.generators) + 1:
            raise ValueError("need one more breakpoint than segments")

    @classmethod
    def from_durations(cls, z0, durations, generators) -> "AccessiblePath":
        taus = np.concatenate([[0.0], np.cumsum(durations)])
        return cls(z0, tuple(taus), tuple(generators))

    @property
    def n_segments(self) -> int:
        return len(self.generators)

    @property
    def duration(self) -> float:
        return self.breakpoints[-1]

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def to_csv(self, path):
        import csv

        pts = self.points or (self.z0,)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            d = self.z0.size // 2
            out.writerow(["segment", "k", "tau"] + [f"v{k}" for k in range(d)] + [f"u{k}" for k in range(d)])
            for i, tau in enumerate(self.breakpoints):
                k = self.generators[i] if i < self.n_segments else -1
                z = pts[i] if i < len(pts) else [np.nan] * self.z0.size
                out.writerow([i, k, f"{tau:.17g}"] + [f"{x:.17g}" for x in z])


def path_validate(path: AccessiblePath, gens: Sequence, cfg: SlowFlowConfig = None) -> AccessiblePath:
    """Flow every segment, check it stays in D and cache the breakpoints."""
    cfg = cfg or SlowFlowConfig()
    taus = np.asarray(path.breakpoints)
    if taus[0] != 0 or np.any(np.diff(taus) <= 0):
        raise NonIncreasingBreakpoints(f"breakpoints must start at 0 and increase: {taus.tolist()}")
    for k in path.generators:
        if not 0 <= k < len(gens):
            raise IndexError(f"generator index {k} out of range")
    z = path.z0.copy()
    if not gens[0].domain.contains(z):
        raise DomainError("path starts outside the domain")
    pts = [z.copy()]
    for i, k in enumerate(path.generators):
        dt = taus[i + 1] - taus[i]
        try:
            z = slow_flow(gens[k], z, dt, cfg)
        except DomainExit as exc:
            raise SegmentExit(f"segment {i} leaves the domain at tau={exc.tau_exit:.6g} < {dt:.6g}",
                              segment=i) from exc
        pts.append(z.copy())
    return replace(path, points=tuple(pts))


def path_eval(path: AccessiblePath, gens: Sequence, tau: float, cfg: SlowFlowConfig = None) -> np.ndarray:
    if path.points is None:
        path = path_validate(path, gens, cfg)
    taus = path.breakpoints
    if tau < 0 or tau > taus[-1]:
        raise ValueError(f"tau={tau} outside [0, {taus[-1]}]")
    if path.n_segments == 0:
        return path.z0.copy()
    i = int(np.searchsorted(taus, tau, side="right")) - 1
    i = min(i, path.n_segments - 1)
    if tau == taus[i]:
        return np.array(path.points[i])
    return slow_flow(gens[path.generators[i]], path.points[i], tau - taus[i], cfg)


class PathFunction:
    """Vectorized ``Gamma(tau)`` backed by dense segment solutions."""

    def __init__(self, path: AccessiblePath, gens: Sequence, cfg: SlowFlowConfig = None):
        if path.points is None:
            path = path_validate(path, gens, cfg)
        self.path = path
        self._sols = [slow_trajectory(gens[k], path.points[i], path.durations[i], cfg)
                      for i, k in enumerate(path.generators)]

    def __call__(self, tau) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        taus = np.asarray(self.path.breakpoints)
        out = np.empty((tau.size, self.path.z0.size))
        if not self._sols:
            out[:] = self.path.z0
            return out
        seg = np.clip(np.searchsorted(taus, tau, side="right") - 1, 0, len(self._sols) - 1)
        for i in np.unique(seg):
            sel = seg == i
            s = np.clip(tau[sel] - taus[i], 0.0, taus[i + 1] - taus[i])
            out[sel] = self._sols[i](s).T
        return out


# ---------------------------------------------------------------------------
# Level-line planner for one slow degree of freedom


def _loop(gen, z_start, cfg: SlowFlowConfig, n_samples=256):
    """Samples of the closed level line through ``z_start`` (or None if it exits D)."""
    x0 = _field(gen, z_start)
    speed = np.linalg.norm(x0)
    if speed == 0:
        return None
    nrm = x0 / speed
    offset = 1e-9 * (1 + np.linalg.norm(z_start))

    def back(t, z):
        return float((z - z_start) @ nrm) + offset

    back.terminal = True
    back.direction = 1
    res = _integrate(gen, z_start, cfg.tau_max, cfg, dense=True, events=[back])
    if res.t_events[0].size or not res.t_events[1].size:
        return None
    period = float(res.t_events[1][0])
    return res.sol(np.linspace(0, period, n_samples)).T


def _flow_to_level(gen, z_start, other, level, cfg: SlowFlowConfig):
    """Flow ``gen`` from ``z_start`` until ``other`` reaches ``level``."""

    def hit(t, z):
        return float(other.value(z)) - level

    hit.terminal = True
    res = _integrate(gen, z_start, cfg.tau_max, cfg, events=[hit])
    if res.t_events[0].size or not res.t_events[1].size:
        return None
    return float(res.t_events[1][0]), res.y_events[1][0]


def _flow_to_point(gen, z_start, z_target, tol, cfg: SlowFlowConfig):
    x1 = _field(gen, z_target)

    def cross(t, z):
        return float((z - z_target) @ x1)

    cross.direction = 1
    t_end = cfg.tau_max
    res = _integrate(gen, z_start, t_end, cfg, events=[cross])
    for t, z in zip(res.t_events[1], res.y_events[1]):
        if t > 0 and np.linalg.norm(z - z_target) <= tol:
            return float(t), z
    return None


def plan_level_lines(J_a, J_b, z0, z1, levels: int = 64, tol: float = 1e-6,
                     cfg: SlowFlowConfig = None) -> AccessiblePath:
    """Accessible path from ``z0`` to ``z1`` alternating two generators.

    Breadth-first search over level lines: a state is a level line of one
    generator; from it one may switch to any level line of the other
    generator that it meets.  Candidate levels are ``levels`` equally spaced
    values of the other action plus the level through ``z1``.  Each switch
    is realized by flowing to the first crossing of the target level, so
    the endpoint is hit to integration accuracy.  Generator 0 is ``J_a``
    and generator 1 is ``J_b``.
    """
    cfg = cfg or SlowFlowConfig()
    gens = (J_a, J_b)
    z0, z1 = _z(z0).astype(float), _z(z1).astype(float)
    if z0.size != 2:
        raise DimensionError("the level-line planner needs one slow degree of freedom")
    dom = J_a.domain
    if not (dom.contains(z0) and dom.contains(z1)):
        raise DomainError("endpoints must lie in the domain")
    if np.linalg.norm(z1 - z0) <= tol:
        return path_validate(AccessiblePath(z0, (0.0,), ()), gens, cfg)

    # lattice of levels, from the ranges of each action over a sample of D
    lo, hi = dom.bounding_box()
    grid = np.stack(np.meshgrid(np.linspace(lo[0], hi[0], 41), np.linspace(lo[1], hi[1], 41)), -1).reshape(-1, 2)
    grid = grid[dom.contains(grid)]
    lattice = []
    for k, g in enumerate(gens):
        vals = g.value(grid)
        lattice.append(np.linspace(vals.min(), vals.max(), levels + 2)[1:-1])
    goal = [float(g.value(z1)) for g in gens]

    def key(k, level):
        return (k, round(level, 10))

    start = []
    for k in (0, 1):
        start.append((k, float(gens[k].value(z0)), z0, []))
    queue = deque(start)
    seen = {key(k, lv) for k, lv, _, _ in start}
    while queue:
        k, level, z, segs = queue.popleft()
        if abs(level - goal[k]) <= 1e-12 * (1 + abs(level)):
            hit = _flow_to_point(gens[k], z, z1, max(tol, 1e-8), cfg)
            if hit is not None:
                segs = segs + [(k, hit[0])]
                return _finish(z0, segs, gens, z1, tol, cfg)
        loop = _loop(gens[k], z, cfg)
        if loop is None:
            continue
        other = 1 - k
        vals = gens[other].value(loop)
        vmin, vmax = float(vals.min()), float(vals.max())
        if vmax - vmin <= 1e-9 * (1 + abs(vmax)):
            continue
        cands = [goal[other]] + [lv for lv in lattice[other]]
        for lv in cands:
            if not vmin < lv < vmax or key(other, lv) in seen:
                continue
            if abs(float(gens[other].value(z)) - lv) <= 1e-12:
                continue
            got = _flow_to_level(gens[k], z, gens[other], lv, cfg)
            if got is None:
                continue
            seen.add(key(other, lv))
            queue.append((other, lv, got[1], segs + [(k, got[0])]))
    raise NotAccessible(f"no lattice route from {z0.tolist()} to {z1.tolist()}")


def _finish(z0, segs, gens, z1, tol, cfg):
    segs = [(k, t) for k, t in segs if t > 0]
    path = AccessiblePath.from_durations(z0, [t for _, t in segs], [k for k, _ in segs])
    path = path_validate(path, gens, cfg)
    err = float(np.linalg.norm(np.asarray(path.points[-1]) - z1))
    if err > tol:
        raise NotAccessible(f"planned path ends {err:.3g} from the target")
    return path


# ---------------------------------------------------------------------------
# Tracking of the slow component near a frozen orbit family


@dataclass
class TrackingReport:
    eps: float
    horizon: float
    max_error: float
    max_orbit_distance: float
    times: np.ndarray = field(repr=False)
    errors: np.ndarray = field(repr=False)
    energy_drift: float = 0.0

    @property
    def C2(self) -> float:
        return self.max_error / self.eps

    @property
    def C1(self) -> float:
        return self.max_orbit_distance / self.eps


def track_slow_component(model, gen, orbit, eps: float, tau0: float = 1.0, offset: float = 0.0,
                         n_samples: int = 2001, integrator=None, cfg: SlowFlowConfig = None) -> TrackingReport:
    """Compare the slow part of a full trajectory with the slow flow of ``gen``.

    The full system starts at the orbit's anchor point above ``orbit.z``,
    displaced by ``offset * eps`` along the energy gradient, and runs for
    ``tau0 / eps`` time units.  Distance to the orbit family is measured
    as ``|H(w, z, 0)| / |grad_w H|``.
    """
    from .flow import IntegratorConfig, integrate_full

    z0 = np.asarray(orbit.z, dtype=float)
    w0 = np.asarray(orbit.anchor, dtype=float).copy()
    m, d = model.dims.fast_dof, model.dims.slow_dof
    if offset:
        gw = np.concatenate([model.dHdp(w0[:m], w0[m:], z0[:d], z0[d:], 0.0),
                             model.dHdq(w0[:m], w0[m:], z0[:d], z0[d:], 0.0)])
        w0 = w0 + offset * eps * gw / np.linalg.norm(gw)
    t_end = tau0 / eps
    traj = integrate_full(model, np.concatenate([w0, z0]), eps, (0.0, t_end),
                          integrator or IntegratorConfig(1e-11, 1e-12))
    ts = np.unique(np.concatenate([np.linspace(0.0, t_end, n_samples), traj.times]))
    ys = traj(ts)
    phi = slow_trajectory(gen, z0, tau0, cfg)
    ref = phi(np.clip(eps * ts, 0.0, tau0)).T
    err = np.linalg.norm(ys[:, 2 * m:] - ref, axis=1)
    dist = np.empty(ts.size)
    for i, y in enumerate(ys):
        p, q, v, u = model.split(y)
        gw = np.concatenate([model.dHdp(p, q, v, u, 0.0), model.dHdq(p, q, v, u, 0.0)])
        dist[i] = abs(model.H(p, q, v, u, 0.0)) / max(np.linalg.norm(gw), 1e-300)
    return TrackingReport(eps, t_end, float(err.max()), float(dist.max()), ts, err, traj.energy_drift)
