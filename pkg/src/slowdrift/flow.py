"""Time integration of the full and frozen systems and section crossings."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DivergenceError, ModelError, StiffnessError, TangencyWarning
from .model import FastPoint, FullState, HamiltonianModel, SlowPoint

_METHODS = {5: "RK45", 8: "DOP853"}


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = np.inf
    method_order: int = 8

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.max_step <= 0:
            raise ValueError("tolerances and max_step must be positive")
        if self.method_order < 5:
            raise ValueError("method_order must be at least 5")

    @property
    def method(self) -> str:
        # highest available order not exceeding the request
        return _METHODS[max(k for k in _METHODS if k <= self.method_order)]


@dataclass
class Trajectory:
    """Solution of an initial value problem with dense output.

    ``states`` has one row per entry of ``times`` in the flat ``(p, q, v, u)``
    ordering.  For frozen runs the slow columns hold the frozen ``z``.
    """

    model: HamiltonianModel
    eps: float
    times: np.ndarray
    states: np.ndarray
    energy_drift: float
    sol: Optional[Callable] = None
    frozen_z: Optional[np.ndarray] = None
    energies: Optional[np.ndarray] = None

    def __call__(self, t) -> np.ndarray:
        """Dense evaluation; returns shape ``(n,)`` or ``(len(t), n)``."""
        t = np.asarray(t, dtype=float)
        if self.sol is None:
            if np.any(t != self.times[0]):
                raise ValueError("trajectory has no dense output")
            return np.broadcast_to(self.states[0], t.shape + self.states[0].shape).copy()
        y = self.sol(t)
        if self.frozen_z is not None:
            zz = np.broadcast_to(self.frozen_z[:, None] if y.ndim == 2 else self.frozen_z,
                                 ((self.frozen_z.size,) + y.shape[1:]))
            y = np.concatenate([y, zz], axis=0)
        return y.T if y.ndim == 2 else y

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def slow(self) -> np.ndarray:
        """Slow projection ``(v, u)`` of the stored states."""
        return self.states[:, self.model.dims.fast_size:]

    def final_state(self) -> FullState:
        return FullState.from_array(self.states[-1], self.model.dims)

    def rhs_at(self, y) -> np.ndarray:
        if self.frozen_z is not None:
            n = self.model.dims.fast_size
            return np.concatenate([self.model.fast_rhs(y[:n], y[n:]), np.zeros(y.size - n)])
        return self.model.rhs(y, self.eps)

    def to_csv(self, path, times=None):
        """Write ``t, p..., q..., v..., u..., H`` rows with 17 significant digits."""
        m, d = self.model.dims.fast_dof, self.model.dims.slow_dof
        header = (["t"] + [f"p{i}" for i in range(m)] + [f"q{i}" for i in range(m)]
                  + [f"v{i}" for i in range(d)] + [f"u{i}" for i in range(d)] + ["H"])
        ts = self.times if times is None else np.asarray(times, dtype=float)
        ys = self.states if times is None else self(ts).reshape(len(ts), -1)
        eps = 0.0 if self.frozen_z is not None else self.eps
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(header)
            for t, y in zip(ts, ys):
                out.writerow([f"{x:.17g}" for x in (t, *y, self.model.energy(y, eps))])


def _solve(fun, y0, t_span, cfg: IntegratorConfig, dense=True):
    def guarded(t, y):
        dy = fun(t, y)
        if not np.all(np.isfinite(dy)):
            raise DivergenceError(f"non-finite vector field at t={t}")
        return dy

    res = solve_ivp(guarded, t_span, y0, method=cfg.method, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                    max_step=cfg.max_step, dense_output=dense)
    if res.status < 0:
        msg = str(res.message)
        if "step size" in msg.lower():
            raise StiffnessError(msg)
        raise DivergenceError(msg)
    if not np.all(np.isfinite(res.y)):
        raise DivergenceError("non-finite state")
    return res


def integrate_full(model: HamiltonianModel, state0, eps: float, t_span, cfg: IntegratorConfig = None) -> Trajectory:
    """Integrate the full slow-fast equations over ``t_span``."""
    cfg = cfg or IntegratorConfig()
    y0 = state0.as_array() if isinstance(state0, FullState) else np.asarray(state0, dtype=float).copy()
    if y0.size != model.dims.state_size:
        raise ValueError(f"state has size {y0.size}, model expects {model.dims.state_size}")
    if not np.all(np.isfinite(y0)):
        raise DivergenceError("initial state is not finite")
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    h0 = model.energy(y0, eps)
    if t1 == t0:
        return Trajectory(model, eps, np.array([t0]), y0[None, :], 0.0, energies=np.array([h0]))
    res = _solve(lambda t, y: model.rhs(y, eps), y0, (t0, t1), cfg)
    states = res.y.T.copy()
    energies = np.array([model.energy(y, eps) for y in states])
    return Trajectory(model, eps, res.t, states, float(np.max(np.abs(energies - h0))), res.sol,
                      energies=energies)


def integrate_frozen(model: HamiltonianModel, w0, z, t_span, cfg: IntegratorConfig = None) -> Trajectory:
    """Integrate the frozen fast system with the slow point held at ``z``."""
    cfg = cfg or IntegratorConfig()
    w0 = w0.as_array() if isinstance(w0, FastPoint) else np.asarray(w0, dtype=float).copy()
    z = z.as_array() if isinstance(z, SlowPoint) else np.asarray(z, dtype=float).copy()
    if w0.size != model.dims.fast_size or z.size != model.dims.slow_size:
        raise ValueError("point sizes do not match the model")
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    h0 = model.energy(np.concatenate([w0, z]), 0.0)
    if t1 == t0:
        return Trajectory(model, 0.0, np.array([t0]), np.concatenate([w0, z])[None, :], 0.0,
                          frozen_z=z, energies=np.array([h0]))
    res = _solve(lambda t, w: model.fast_rhs(w, z), w0, (t0, t1), cfg)
    states = np.hstack([res.y.T, np.broadcast_to(z, (res.t.size, z.size))])
    energies = np.array([model.energy(y, 0.0) for y in states])
    return Trajectory(model, 0.0, res.t, states, float(np.max(np.abs(energies - h0))), res.sol,
                      frozen_z=z, energies=energies)


def integrate_splitting(model: HamiltonianModel, state0, eps: float, t_span, dt: float) -> Trajectory:
    """Fixed-step Stormer-Verlet for separable models.

    Separable means ``H = K(p, v) + V(q, u)``; the model must declare
    ``separable=True``.  No dense output is produced.
    """
    if not model.separable:
        raise ModelError(f"{model.name} is not declared separable")
    y = state0.as_array() if isinstance(state0, FullState) else np.asarray(state0, dtype=float).copy()
    t0, t1 = map(float, t_span)
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-12)))
    h = (t1 - t0) / n
    m, d = model.dims.fast_dof, model.dims.slow_dof
    k = model.slow_factor(eps)
    sp, sq = slice(0, m), slice(m, 2 * m)
    sv, su = slice(2 * m, 2 * m + d), slice(2 * m + d, None)

    def kick(y, tau):
        p, q, v, u = model.split(y)
        y[sp] -= tau * np.asarray(model.dHdq(p, q, v, u, eps))
        y[sv] -= tau * k * np.asarray(model.dHdu(p, q, v, u, eps))

    def drift(y, tau):
        p, q, v, u = model.split(y)
        y[sq] += tau * np.asarray(model.dHdp(p, q, v, u, eps))
        y[su] += tau * k * np.asarray(model.dHdv(p, q, v, u, eps))

    states = np.empty((n + 1, y.size))
    states[0] = y
    for i in range(n):
        kick(y, h / 2)
        drift(y, h)
        kick(y, h / 2)
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite state at step {i}")
        states[i + 1] = y
    times = t0 + h * np.arange(n + 1)
    energies = np.array([model.energy(s, eps) for s in states])
    return Trajectory(model, eps, times, states, float(np.max(np.abs(energies - energies[0]))),
                      energies=energies)


# ---------------------------------------------------------------------------
# Sections and crossings


@dataclass(frozen=True)
class Section:
    """Hypersurface ``s(y) = 0`` in the full state space.

    ``fn`` takes the flat state ``(p, q, v, u)``.  ``orientation`` is +1 for
    crossings where ``s`` increases, -1 where it decreases and 0 for both.
    """

    label: str
    fn: Callable[[np.ndarray], float]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    orientation: int = 1

    @classmethod
    def hyperplane(cls, normal, offset: float = 0.0, label: str = "sigma", orientation: int = 1):
        normal = np.asarray(normal, dtype=float)
        return cls(label, lambda y: float(normal @ y) - offset, lambda y: normal, orientation)

    @classmethod
    def coordinate(cls, index: int, size: int, value: float = 0.0, label: str = "sigma", orientation: int = 1):
        normal = np.zeros(size)
        normal[index] = 1.0
        return cls.hyperplane(normal, value, label, orientation)

    def reversed(self) -> "Section":
        return Section(self.label, self.fn, self.grad, -self.orientation)

    def gradient(self, y) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(y), dtype=float)
        g = np.empty(y.size)
        for k in range(y.size):
            h = 1e-7 * (1 + abs(y[k]))
            yp, ym = y.copy(), y.copy()
            yp[k] += h
            ym[k] -= h
            g[k] = (self.fn(yp) - self.fn(ym)) / (2 * h)
        return g


@dataclass
class CrossingEvent:
    t: float
    state: np.ndarray
    z_hat: np.ndarray
    label: str
    direction: int
    residual: float
    tangential: bool = False
    warnings: list = field(default_factory=list)


def detect_crossings(traj: Trajectory, section: Section, samples_per_step: int = 4,
                     residual_tol: float = 1e-10, tangency_threshold: float = 1e-8) -> list[CrossingEvent]:
    """Locate the oriented zeros of ``section`` along a dense trajectory.

    Sign changes are bracketed on the solver steps (subdivided
    ``samples_per_step`` times) and refined by Brent's method on the dense
    output, followed by secant polishing if the residual is above
    ``residual_tol``.
    """
    if traj.sol is None:
        raise ValueError("trajectory has no dense output")
    ts = traj.times
    if ts.size < 2:
        return []
    grid = np.concatenate([
        np.linspace(a, b, samples_per_step + 1)[:-1] for a, b in zip(ts[:-1], ts[1:])
    ] + [ts[-1:]])
    ys = traj(grid)
    s = np.array([section.fn(y) for y in ys])
    n_fast = traj.model.dims.fast_size

    def sfun(t):
        return section.fn(traj(t))

    events = []
    for k in range(grid.size - 1):
        a, b = s[k], s[k + 1]
        if a < 0 <= b or (k == 0 and a == 0 and b > 0):
            direction = 1
        elif a > 0 >= b or (k == 0 and a == 0 and b < 0):
            direction = -1
        else:
            continue
        if section.orientation and direction != section.orientation:
            continue
        ta, tb = grid[k], grid[k + 1]
        if a == 0:
            t = ta
        elif b == 0:
            t = tb
        else:
            t = brentq(sfun, ta, tb, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
        y = traj(t)
        r = section.fn(y)
        if abs(r) > residual_tol:
            # secant polish using the time derivative of s along the flow
            for _ in range(8):
                ds = float(section.gradient(y) @ traj.rhs_at(y))
                if ds == 0:
                    break
                t = min(max(t - r / ds, ta), tb)
                y = traj(t)
                r = section.fn(y)
                if abs(r) <= residual_tol:
                    break
        ds = float(section.gradient(y) @ traj.rhs_at(y))
        ev = CrossingEvent(float(t), y, y[n_fast:].copy(), section.label, direction, float(abs(r)))
        if abs(ds) < tangency_threshold:
            ev.tangential = True
            msg = f"nearly tangential crossing of {section.label} at t={t:.6g} (ds/dt={ds:.3g})"
            ev.warnings.append(msg)
            warnings.warn(msg, TangencyWarning, stacklevel=2)
        events.append(ev)
    return events
