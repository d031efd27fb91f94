"""Frozen periodic orbits, Floquet multipliers and action fields.

The action of a frozen periodic orbit ``L_c(z)`` is the loop integral of
``p dq``; its slow gradient is obtained without differencing from::

    dJ/dv = -int_0^T dH/dv dt,    dJ/du = -int_0^T dH/du dt

evaluated along the orbit, which holds because the orbit family lies on
the zero energy level.
"""
from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator

from .errors import (AccuracyError, ContinuationBreakdown, DivergenceError, EnergyMismatch,
                     NoConvergence, SingularJacobian)
from .flow import Section
from .model import Box, Domain, FastPoint, HamiltonianModel, SlowPoint, domain_from_spec

MIN_SAMPLES = 256
FORMAT_VERSION = 1


@dataclass(frozen=True)
class OrbitConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-13
    newton_tol: float = 1e-11
    max_iter: int = 30
    max_step_norm: float = 1.0
    samples: int = 512
    hyperbolic_threshold: float = 1e-3


@dataclass
class PeriodicOrbit:
    z: np.ndarray
    period: float
    anchor: np.ndarray
    times: np.ndarray
    samples: np.ndarray
    velocities: np.ndarray
    closure_residual: float
    energy_residual: float
    iterations: int = 0

    @property
    def slow_point(self) -> SlowPoint:
        return SlowPoint.from_array(self.z)

    @property
    def fast_dof(self) -> int:
        return self.samples.shape[1] // 2


@dataclass
class FloquetData:
    multipliers: np.ndarray
    hyperbolic: bool
    tolerance: float
    monodromy: np.ndarray = field(repr=False, default=None)

    def trivial_pair(self) -> np.ndarray:
        idx = np.argsort(np.abs(self.multipliers - 1.0))[:2]
        return self.multipliers[idx]

    def nontrivial(self) -> np.ndarray:
        idx = np.argsort(np.abs(self.multipliers - 1.0))[2:]
        return self.multipliers[idx]


def _as_z(z) -> np.ndarray:
    return z.as_array() if isinstance(z, SlowPoint) else np.asarray(z, dtype=float).copy()


def _flow_monodromy(model: HamiltonianModel, w0, z, T, cfg: OrbitConfig, dense=False):
    n = w0.size

    def rhs(t, y):
        w = y[:n]
        phi = y[n:].reshape(n, n)
        return np.concatenate([model.fast_rhs(w, z), (model.fast_jac(w, z) @ phi).ravel()])

    y0 = np.concatenate([w0, np.eye(n).ravel()])
    res = solve_ivp(rhs, (0.0, T), y0, method="DOP853", rtol=cfg.rel_tol, atol=cfg.abs_tol,
                    dense_output=dense)
    if res.status < 0 or not np.all(np.isfinite(res.y[:, -1])):
        raise DivergenceError(f"variational integration failed: {res.message}")
    yT = res.y[:, -1]
    if dense:
        return yT[:n], yT[n:].reshape(n, n), res.sol
    return yT[:n], yT[n:].reshape(n, n)


def _sample_orbit(model, w0, z, T, cfg: OrbitConfig, sol, wT):
    if cfg.samples < 2:
        raise AccuracyError("need at least two samples")
    n = w0.size
    times = T * np.arange(cfg.samples) / cfg.samples
    samples = sol(times)[:n].T.copy()
    samples[0] = w0
    vel = np.array([model.fast_rhs(w, z) for w in samples])
    m = model.dims.fast_dof
    d = model.dims.slow_dof
    energies = np.array([model.H(w[:m], w[m:], z[:d], z[d:], 0.0) for w in samples])
    return times, samples, vel, float(np.linalg.norm(wT - w0)), float(np.max(np.abs(energies)))


def find_periodic_orbit(model: HamiltonianModel, z, guess_w, guess_period: float,
                        cfg: OrbitConfig = None, section: Optional[Section] = None) -> PeriodicOrbit:
    """Newton shooting for a frozen periodic orbit on ``H = 0``.

    Unknowns are the anchor point ``w0`` and the period ``T``.  Equations
    are closure ``phi_T(w0) = w0``, the energy constraint ``H(w0, z) = 0``
    and a phase condition: ``section(w0, z) = 0`` if a section is given,
    otherwise the hyperplane through the guess orthogonal to the flow.
    The overdetermined system is solved by least squares; steps longer than
    ``cfg.max_step_norm`` are shortened, so guesses far from the orbit
    exhaust ``cfg.max_iter`` and raise :class:`NoConvergence`.
    """
    cfg = cfg or OrbitConfig()
    z = _as_z(z)
    w = (guess_w.as_array() if isinstance(guess_w, FastPoint) else np.asarray(guess_w, dtype=float)).copy()
    T = float(guess_period)
    n = w.size
    if n != model.dims.fast_size or z.size != model.dims.slow_size:
        raise ValueError("guess does not match the model dimensions")
    m, d = model.dims.fast_dof, model.dims.slow_dof

    anchor0 = w.copy()
    normal = model.fast_rhs(anchor0, z)
    nn = np.linalg.norm(normal)
    if section is None and nn == 0:
        raise SingularJacobian("guess is an equilibrium of the frozen field")
    normal = normal / (nn if nn else 1.0)

    def phase(wv):
        if section is not None:
            return section.fn(np.concatenate([wv, z]))
        return float(normal @ (wv - anchor0))

    def phase_grad(wv):
        if section is not None:
            return section.gradient(np.concatenate([wv, z]))[:n]
        return normal

    resid = np.inf
    for it in range(1, cfg.max_iter + 1):
        if T <= 0:
            raise NoConvergence(f"period became non-positive at iteration {it}")
        wT, M, sol = _flow_monodromy(model, w, z, T, cfg, dense=True)
        p, q, v, u = w[:m], w[m:], z[:d], z[d:]
        energy = float(model.H(p, q, v, u, 0.0))
        F = np.concatenate([wT - w, [energy, phase(w)]])
        resid = float(np.linalg.norm(F, np.inf))
        if resid <= cfg.newton_tol:
            break
        gradH = np.concatenate([np.asarray(model.dHdp(p, q, v, u, 0.0)), np.asarray(model.dHdq(p, q, v, u, 0.0))])
        J = np.zeros((n + 2, n + 1))
        J[:n, :n] = M - np.eye(n)
        J[:n, n] = model.fast_rhs(wT, z)
        J[n, :n] = gradH
        J[n + 1, :n] = phase_grad(w)
        step, _, rank, sv = np.linalg.lstsq(J, -F, rcond=None)
        if rank < n + 1 or sv[-1] < 1e-12 * sv[0]:
            raise SingularJacobian(f"shooting Jacobian is singular (rank {rank}) at iteration {it}")
        size = np.linalg.norm(step)
        if size > cfg.max_step_norm:
            step *= cfg.max_step_norm / size
        w = w + step[:n]
        T = T + step[n]
    else:
        closure = float(np.linalg.norm(F[:n], np.inf))
        if closure <= 1e3 * cfg.newton_tol and abs(F[n]) > 1e3 * cfg.newton_tol:
            raise EnergyMismatch(f"closed orbit found but H = {F[n]:.3g} != 0")
        raise NoConvergence(f"Newton shooting did not converge in {cfg.max_iter} iterations (residual {resid:.3g})")

    times, samples, vel, closure, eres = _sample_orbit(model, w, z, T, cfg, sol, wT)
    if eres > 1e3 * cfg.newton_tol:
        raise EnergyMismatch(f"orbit energy residual {eres:.3g}")
    return PeriodicOrbit(z, T, w, times, samples, vel, closure, eres, it)


def floquet(model: HamiltonianModel, orbit: PeriodicOrbit, cfg: OrbitConfig = None) -> FloquetData:
    """Monodromy eigenvalues of the orbit.

    The orbit is hyperbolic when every multiplier outside the trivial pair
    near 1 satisfies ``||mu| - 1| > cfg.hyperbolic_threshold``.
    """
    cfg = cfg or OrbitConfig()
    _, M = _flow_monodromy(model, orbit.anchor, orbit.z, orbit.period, cfg)
    mu = np.linalg.eigvals(M)
    mu = mu[np.argsort(-np.abs(mu), kind="stable")]
    data = FloquetData(mu, False, cfg.hyperbolic_threshold, M)
    rest = data.nontrivial()
    data.hyperbolic = bool(rest.size > 0 and np.all(np.abs(np.abs(rest) - 1.0) > cfg.hyperbolic_threshold))
    return data


def action(orbit: PeriodicOrbit) -> float:
    """Loop integral of ``p dq`` by the periodic trapezoidal rule."""
    N = orbit.samples.shape[0]
    if N < MIN_SAMPLES:
        raise AccuracyError(f"need at least {MIN_SAMPLES} samples, orbit has {N}")
    m = orbit.fast_dof
    p = orbit.samples[:, :m]
    qdot = orbit.velocities[:, m:]
    return float(np.sum(p * qdot) * orbit.period / N)


def action_gradient(model: HamiltonianModel, orbit: PeriodicOrbit) -> tuple[np.ndarray, np.ndarray]:
    """``(dJ/dv, dJ/du)`` from the integral identities along the orbit."""
    N = orbit.samples.shape[0]
    if N < MIN_SAMPLES:
        raise AccuracyError(f"need at least {MIN_SAMPLES} samples, orbit has {N}")
    m, d = model.dims.fast_dof, model.dims.slow_dof
    v, u = orbit.z[:d], orbit.z[d:]
    sv = np.zeros(d)
    su = np.zeros(d)
    for w in orbit.samples:
        sv += np.asarray(model.dHdv(w[:m], w[m:], v, u, 0.0), dtype=float)
        su += np.asarray(model.dHdu(w[:m], w[m:], v, u, 0.0), dtype=float)
    h = orbit.period / N
    return -h * sv, -h * su


def perturbative_action(model: HamiltonianModel, orbit: PeriodicOrbit, z=None) -> float:
    """Integral of ``H1`` along a frozen orbit of ``H0``."""
    h1 = model.metadata.get("h1")
    if h1 is None:
        raise ValueError(f"{model.name} was not built by make_perturbative")
    N = orbit.samples.shape[0]
    if N < MIN_SAMPLES:
        raise AccuracyError(f"need at least {MIN_SAMPLES} samples, orbit has {N}")
    z = orbit.z if z is None else _as_z(z)
    m, d = model.dims.fast_dof, model.dims.slow_dof
    v, u = z[:d], z[d:]
    total = sum(float(h1.H(w[:m], w[m:], v, u, 0.0)) for w in orbit.samples)
    return total * orbit.period / N


# ---------------------------------------------------------------------------
# Action fields on grids


class ActionField:
    """Action, period and action gradient of an orbit family on a grid.

    Values between nodes are interpolated: bicubic splines when ``d = 1``,
    multilinear otherwise.  The gradient is interpolated from the stored
    identity values, so it is exact at the nodes.
    """

    def __init__(self, label: str, domain: Domain, axes, J, T, dJdv, dJdu, metadata=None):
        self.label = label
        self.domain = domain
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.J = np.asarray(J, dtype=float)
        self.T = np.asarray(T, dtype=float)
        self.dJdv = np.asarray(dJdv, dtype=float)
        self.dJdu = np.asarray(dJdu, dtype=float)
        self.metadata = dict(metadata or {})
        self.slow_dof = len(self.axes) // 2
        if np.any(self.T <= 0):
            raise ValueError("periods must be positive")
        self._build()

    def _build(self):
        d = self.slow_dof
        if d == 1:
            a0, a1 = self.axes
            k0 = min(3, a0.size - 1)
            k1 = min(3, a1.size - 1)
            mk = lambda vals: RectBivariateSpline(a0, a1, vals, kx=k0, ky=k1, s=0)
            self._J = mk(self.J)
            self._T = mk(self.T)
            self._g = [mk(self.dJdv[..., 0]), mk(self.dJdu[..., 0])]
            self._eval = lambda spl, z: spl.ev(z[..., 0], z[..., 1])
        else:
            mk = lambda vals: RegularGridInterpolator(self.axes, vals, method="linear",
                                                      bounds_error=False, fill_value=None)
            self._J = mk(self.J)
            self._T = mk(self.T)
            self._g = [mk(self.dJdv[..., k]) for k in range(d)] + [mk(self.dJdu[..., k]) for k in range(d)]
            self._eval = lambda fn, z: fn(z)

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return self._eval(self._J, z)

    def period(self, z):
        z = np.asarray(z, dtype=float)
        return self._eval(self._T, z)

    def gradient(self, z) -> np.ndarray:
        """``(dJ/dv..., dJ/du...)`` stacked along the last axis."""
        z = np.asarray(z, dtype=float)
        return np.stack([self._eval(g, z) for g in self._g], axis=-1)

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    # -- serialization ---------------------------------------------------

    def to_csv(self, path):
        d = self.slow_dof
        nodes = self.nodes().reshape(-1, 2 * d)
        with open(path, "w", newline="") as fh:
            fh.write(f"# slowdrift action field v{FORMAT_VERSION}\n")
            fh.write(f"# label={self.label}\n")
            dom = self.domain.describe()
            fh.write("# domain=" + ";".join(f"{k}={v}" for k, v in dom.items()) + "\n")
            fh.write("# resolution=" + ",".join(str(a.size) for a in self.axes) + "\n")
            out = csv.writer(fh)
            out.writerow([f"v{k}" for k in range(d)] + [f"u{k}" for k in range(d)] + ["J", "T"]
                         + [f"dJdv{k}" for k in range(d)] + [f"dJdu{k}" for k in range(d)])
            J, T = self.J.ravel(), self.T.ravel()
            gv = self.dJdv.reshape(-1, d)
            gu = self.dJdu.reshape(-1, d)
            for i in range(nodes.shape[0]):
                row = [*nodes[i], J[i], T[i], *gv[i], *gu[i]]
                out.writerow([f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, path) -> "ActionField":
        header = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    body = line[1:].strip()
                    if "=" in body:
                        k, v = body.split("=", 1)
                        header[k.strip()] = v.strip()
                    elif "v" in body.split()[-1]:
                        header["version"] = body.split()[-1]
                    continue
                rows.append(line)
        if header.get("version") != f"v{FORMAT_VERSION}":
            raise ValueError(f"unsupported action field format {header.get('version')}")
        reader = csv.reader(rows)
        next(reader)
        data = np.array([[float(x) for x in r] for r in reader])
        res = [int(x) for x in header["resolution"].split(",")]
        dd = len(res)
        d = dd // 2
        shape = tuple(res)
        axes = [np.unique(data[:, k]) for k in range(dd)]
        dom = {}
        for item in header["domain"].split(";"):
            k, v = item.split("=", 1)
            dom[k] = v if k == "shape" else eval_list(v)
        J = data[:, dd].reshape(shape)
        T = data[:, dd + 1].reshape(shape)
        gv = data[:, dd + 2:dd + 2 + d].reshape(shape + (d,))
        gu = data[:, dd + 2 + d:dd + 2 + 2 * d].reshape(shape + (d,))
        return cls(header["label"], domain_from_spec(dom), axes, J, T, gv, gu)


def eval_list(text: str):
    import json

    return json.loads(text)


def _grid_axes(domain: Domain, resolution):
    lo, hi = domain.bounding_box()
    res = np.broadcast_to(np.asarray(resolution, dtype=int), lo.shape)
    return [np.linspace(a, b, int(n)) for a, b, n in zip(lo, hi, res)]


def build_action_field(model: HamiltonianModel, seed: PeriodicOrbit, domain: Domain, resolution=21,
                       cfg: OrbitConfig = None, label: str = "c") -> ActionField:
    """Continue ``seed`` over a tensor grid covering ``domain``.

    Nodes are solved in order of distance from the seed, each warm-started
    from its nearest solved neighbour.
    """
    cfg = cfg or OrbitConfig()
    if not isinstance(domain, Box):
        raise ValueError("action fields are tabulated on box domains")
    axes = _grid_axes(domain, resolution)
    shape = tuple(a.size for a in axes)
    dd = len(axes)
    d = dd // 2
    if dd != model.dims.slow_size:
        raise ValueError("domain dimension does not match the model")
    J = np.full(shape, np.nan)
    T = np.full(shape, np.nan)
    gv = np.full(shape + (d,), np.nan)
    gu = np.full(shape + (d,), np.nan)
    orbits = {}

    def coords(idx):
        return np.array([axes[k][idx[k]] for k in range(dd)])

    # start at the node nearest to the seed
    start = tuple(int(np.argmin(np.abs(axes[k] - seed.z[k]))) for k in range(dd))
    heap = [(0.0, start, None)]
    parents = {}
    seen = set()
    while heap:
        _, idx, parent = heapq.heappop(heap)
        if idx in seen:
            continue
        ref = seed if parent is None else orbits[parent]
        z = coords(idx)
        guess_w, guess_T = ref.anchor, ref.period
        grand = parents.get(parent)
        if grand is not None and np.allclose(2 * np.array(parent) - np.array(grand), idx):
            # secant predictor along a grid line
            old = orbits[grand]
            guess_w = 2 * ref.anchor - old.anchor
            guess_T = 2 * ref.period - old.period
        try:
            orb = find_periodic_orbit(model, z, guess_w, guess_T, cfg)
        except (NoConvergence, SingularJacobian, EnergyMismatch, DivergenceError) as exc:
            raise ContinuationBreakdown(
                f"continuation failed at node {idx} (z={z.tolist()}): {exc}",
                frontier=sorted(orbits)) from exc
        seen.add(idx)
        orbits[idx] = orb
        parents[idx] = parent
        J[idx] = action(orb)
        T[idx] = orb.period
        a, b = action_gradient(model, orb)
        gv[idx] = a
        gu[idx] = b
        for k in range(dd):
            for step in (-1, 1):
                nb = list(idx)
                nb[k] += step
                nb = tuple(nb)
                if 0 <= nb[k] < shape[k] and nb not in seen:
                    dist = float(np.linalg.norm(coords(nb) - seed.z))
                    heapq.heappush(heap, (dist, nb, idx))
    return ActionField(label, domain, axes, J, T, gv, gu,
                       metadata={"model": model.name, "resolution": list(shape)})
