"""Slow-fast Hamiltonian models, phase-space types and vector fields.

A model is a Hamiltonian ``H(p, q, v, u; eps)`` with ``m`` fast and ``d``
slow degrees of freedom.  The slow pair evolves on the ``eps`` time scale::

    q' =  dH/dp          p' = -dH/dq
    u' =  eps dH/dv      v' = -eps dH/du

Internally a full state is a flat array ordered ``(p, q, v, u)``; a fast
state is ``(p, q)`` and a slow point is ``(v, u)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import DimensionError, EvaluationError, ModelError


@dataclass(frozen=True)
class Dims:
    fast_dof: int
    slow_dof: int

    def __post_init__(self):
        if int(self.fast_dof) < 1 or int(self.slow_dof) < 1:
            raise DimensionError(f"need fast_dof >= 1 and slow_dof >= 1, got {self}")

    @property
    def fast_size(self) -> int:
        return 2 * self.fast_dof

    @property
    def slow_size(self) -> int:
        return 2 * self.slow_dof

    @property
    def state_size(self) -> int:
        return self.fast_size + self.slow_size


def _vec(x, n=None, name="vector") -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if a.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional")
    if n is not None and a.size != n:
        raise DimensionError(f"{name} has length {a.size}, expected {n}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class FastPoint:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = _vec(self.p, name="p")
        q = _vec(self.q, p.size, name="q")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_array(cls, w) -> "FastPoint":
        w = np.asarray(w, dtype=float)
        m = w.size // 2
        return cls(w[:m], w[m:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])


@dataclass(frozen=True)
class SlowPoint:
    v: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        v = _vec(self.v, name="v")
        u = _vec(self.u, v.size, name="u")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_array(cls, z) -> "SlowPoint":
        z = np.asarray(z, dtype=float)
        d = z.size // 2
        return cls(z[:d], z[d:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.v, self.u])


@dataclass(frozen=True)
class FullState:
    w: FastPoint
    z: SlowPoint

    @classmethod
    def from_array(cls, y, dims: Dims) -> "FullState":
        y = np.asarray(y, dtype=float)
        n = dims.fast_size
        return cls(FastPoint.from_array(y[:n]), SlowPoint.from_array(y[n:]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.w.as_array(), self.z.as_array()])


class Evaluation(NamedTuple):
    H: float
    dHdp: np.ndarray
    dHdq: np.ndarray
    dHdv: np.ndarray
    dHdu: np.ndarray


# ---------------------------------------------------------------------------
# Domains in the slow space


class Domain:
    """Bounded open set in R^{2d}; points are ordered ``(v, u)``."""

    dim: int

    def contains(self, z) -> np.ndarray:
        return self.boundary_distance(z) > 0.0

    def boundary_distance(self, z) -> np.ndarray:
        raise NotImplementedError

    def signed_distance(self, z) -> np.ndarray:
        """Positive inside, negative outside, zero on the boundary."""
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def inradius(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(Domain):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _vec(self.lo, name="lo")
        hi = _vec(self.hi, lo.size, name="hi")
        if np.any(hi <= lo) or lo.size % 2:
            raise DimensionError("box needs hi > lo and an even dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def signed_distance(self, z):
        z = np.asarray(z, dtype=float)
        inside = np.minimum(z - self.lo, self.hi - z)
        s = np.min(inside, axis=-1)
        outside = np.linalg.norm(np.maximum(-inside, 0.0), axis=-1)
        return np.where(s >= 0, s, -outside)

    def boundary_distance(self, z):
        return np.maximum(self.signed_distance(z), 0.0)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    @property
    def inradius(self) -> float:
        return float(np.min(self.hi - self.lo) / 2)

    def describe(self) -> dict:
        return {"shape": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class Ball(Domain):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = _vec(self.center, name="center")
        if self.radius <= 0 or c.size % 2:
            raise DimensionError("ball needs radius > 0 and an even dimension")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.size

    def signed_distance(self, z):
        z = np.asarray(z, dtype=float)
        return self.radius - np.linalg.norm(z - self.center, axis=-1)

    def boundary_distance(self, z):
        return np.maximum(self.signed_distance(z), 0.0)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def inradius(self) -> float:
        return float(self.radius)

    def describe(self) -> dict:
        return {"shape": "ball", "center": self.center.tolist(), "radius": float(self.radius)}


def domain_from_spec(spec: dict) -> Domain:
    shape = spec.get("shape")
    if shape == "box":
        return Box(spec["lo"], spec["hi"])
    if shape == "ball":
        return Ball(spec["center"], float(spec["radius"]))
    raise ValueError(f"unknown domain shape {shape!r}")


# ---------------------------------------------------------------------------
# Scalar fields over the slow plane (used by the builtin models, d = 1)


@dataclass(frozen=True)
class Field:
    """Smooth scalar function of ``(v, u)`` together with its gradient."""

    value: Callable[[float, float], float]
    grad: Callable[[float, float], tuple]
    label: str = ""

    @classmethod
    def constant(cls, c: float) -> "Field":
        c = float(c)
        return cls(lambda v, u: c, lambda v, u: (0.0, 0.0), f"{c!r}")

    @classmethod
    def affine(cls, c0: float, cv: float = 0.0, cu: float = 0.0) -> "Field":
        return cls(
            lambda v, u: c0 + cv * v + cu * u,
            lambda v, u: (cv, cu),
            f"{c0!r}+{cv!r}*v+{cu!r}*u",
        )

    @classmethod
    def bowl(cls, c0: float = 1.0, k: float = 0.5) -> "Field":
        """``c0 + k (u^2 + v^2)``."""
        return cls(
            lambda v, u: c0 + k * (u * u + v * v),
            lambda v, u: (2 * k * v, 2 * k * u),
            f"{c0!r}+{k!r}*(u^2+v^2)",
        )


def _as_field(x) -> Field:
    if isinstance(x, Field):
        return x
    return Field.constant(float(x))


# ---------------------------------------------------------------------------


Evaluator = Callable[..., object]


@dataclass(frozen=True)
class HamiltonianModel:
    """Evaluators for ``H`` and its partials.

    Every evaluator is called as ``fn(p, q, v, u, eps)`` with one-dimensional
    arrays.  With ``standard_form`` the slow equations use the unscaled
    symplectic form, ``u' = dH/dv`` and ``v' = -dH/du``; this is how
    perturbative models ``H0 + eps H1`` are represented.
    ``fast_jacobian`` (optional) returns the ``2m x 2m`` Jacobian of
    the frozen field ``(-dH/dq, dH/dp)`` with respect to ``(p, q)``; when it
    is missing, it is approximated by central differences of the gradients.
    """

    dims: Dims
    H: Evaluator
    dHdp: Evaluator
    dHdq: Evaluator
    dHdv: Evaluator
    dHdu: Evaluator
    name: str = "custom"
    fast_jacobian: Optional[Evaluator] = None
    separable: bool = False
    standard_form: bool = False
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_function(cls, dims: Dims, H: Evaluator, name: str = "custom", **kwargs):
        """Build a model from ``H`` alone; partials by central differences.

        The step is ``1e-6 * (1 + |x|)`` per coordinate and the output is
        flagged with ``metadata['fd_gradients'] = True``.
        """

        def partial(which):
            def fn(p, q, v, u, eps):
                args = [np.array(a, dtype=float) for a in (p, q, v, u)]
                x = args[which]
                out = np.empty_like(x)
                for k in range(x.size):
                    h = 1e-6 * (1.0 + abs(x[k]))
                    xp, xm = x.copy(), x.copy()
                    xp[k] += h
                    xm[k] -= h
                    ap = list(args)
                    am = list(args)
                    ap[which], am[which] = xp, xm
                    out[k] = (H(*ap, eps) - H(*am, eps)) / (2 * h)
                return out

            return fn

        meta = dict(kwargs.pop("metadata", {}))
        meta["fd_gradients"] = True
        return cls(dims, H, partial(0), partial(1), partial(2), partial(3),
                   name=name, metadata=meta, **kwargs)

    # -- flat-array helpers used by the integrators ------------------------

    def split(self, y):
        m, d = self.dims.fast_dof, self.dims.slow_dof
        return y[:m], y[m:2 * m], y[2 * m:2 * m + d], y[2 * m + d:]

    def energy(self, y, eps: float = 0.0) -> float:
        p, q, v, u = self.split(np.asarray(y, dtype=float))
        return float(self.H(p, q, v, u, eps))

    def rhs(self, y, eps: float) -> np.ndarray:
        """Time derivative of the flat full state ``(p, q, v, u)``."""
        p, q, v, u = self.split(y)
        out = np.empty(self.dims.state_size)
        m, d = self.dims.fast_dof, self.dims.slow_dof
        out[:m] = -np.asarray(self.dHdq(p, q, v, u, eps), dtype=float)
        out[m:2 * m] = self.dHdp(p, q, v, u, eps)
        if eps == 0.0:
            out[2 * m:] = 0.0
        else:
            k = self.slow_factor(eps)
            out[2 * m:2 * m + d] = -k * np.asarray(self.dHdu(p, q, v, u, eps), dtype=float)
            out[2 * m + d:] = k * np.asarray(self.dHdv(p, q, v, u, eps), dtype=float)
        return out

    def slow_factor(self, eps: float) -> float:
        return 1.0 if self.standard_form else eps

    def fast_rhs(self, w, z) -> np.ndarray:
        m, d = self.dims.fast_dof, self.dims.slow_dof
        p, q = w[:m], w[m:]
        v, u = z[:d], z[d:]
        return np.concatenate([
            -np.asarray(self.dHdq(p, q, v, u, 0.0), dtype=float),
            np.asarray(self.dHdp(p, q, v, u, 0.0), dtype=float),
        ])

    def fast_jac(self, w, z) -> np.ndarray:
        m, d = self.dims.fast_dof, self.dims.slow_dof
        if self.fast_jacobian is not None:
            return np.asarray(self.fast_jacobian(w[:m], w[m:], z[:d], z[d:], 0.0), dtype=float)
        n = 2 * m
        jac = np.empty((n, n))
        for k in range(n):
            h = 1e-6 * (1.0 + abs(w[k]))
            wp, wm = w.copy(), w.copy()
            wp[k] += h
            wm[k] -= h
            jac[:, k] = (self.fast_rhs(wp, z) - self.fast_rhs(wm, z)) / (2 * h)
        return jac


def _check_dims(model: HamiltonianModel, w: FastPoint, z: SlowPoint):
    if w.p.size != model.dims.fast_dof or z.v.size != model.dims.slow_dof:
        raise DimensionError(
            f"point dims (m={w.p.size}, d={z.v.size}) do not match model {model.dims}")


def evaluate(model: HamiltonianModel, w: FastPoint, z: SlowPoint, eps: float = 0.0) -> Evaluation:
    _check_dims(model, w, z)
    args = (w.p, w.q, z.v, z.u, eps)
    out = Evaluation(
        float(model.H(*args)),
        np.atleast_1d(np.asarray(model.dHdp(*args), dtype=float)),
        np.atleast_1d(np.asarray(model.dHdq(*args), dtype=float)),
        np.atleast_1d(np.asarray(model.dHdv(*args), dtype=float)),
        np.atleast_1d(np.asarray(model.dHdu(*args), dtype=float)),
    )
    for name, val in zip(out._fields, out):
        if not np.all(np.isfinite(val)):
            raise EvaluationError(f"{model.name}: {name} is not finite at p={w.p}, q={w.q}, z={z.as_array()}")
    return out


def full_vector_field(model: HamiltonianModel, state: FullState, eps: float) -> FullState:
    """Derivative of ``state`` under the full slow-fast equations."""
    ev = evaluate(model, state.w, state.z, eps)
    k = model.slow_factor(eps) if eps != 0.0 else 0.0
    return FullState(
        FastPoint(-ev.dHdq, ev.dHdp),
        SlowPoint(-k * ev.dHdu, k * ev.dHdv),
    )


def frozen_vector_field(model: HamiltonianModel, w: FastPoint, z: SlowPoint) -> FastPoint:
    ev = evaluate(model, w, z, 0.0)
    return FastPoint(-ev.dHdq, ev.dHdp)


# ---------------------------------------------------------------------------
# Perturbative models  H = H0(p, q) + eps H1(p, q, v, u)


@dataclass(frozen=True)
class FastHamiltonian:
    """A Hamiltonian of the fast variables only."""

    fast_dof: int
    H: Callable
    dHdp: Callable
    dHdq: Callable


def make_perturbative(h0: FastHamiltonian, h1: HamiltonianModel) -> HamiltonianModel:
    if h0.fast_dof != h1.dims.fast_dof:
        raise DimensionError(
            f"H0 has {h0.fast_dof} fast degrees of freedom, H1 has {h1.dims.fast_dof}")

    def H(p, q, v, u, eps):
        return h0.H(p, q) + eps * h1.H(p, q, v, u, eps)

    def dHdp(p, q, v, u, eps):
        return np.asarray(h0.dHdp(p, q), dtype=float) + eps * np.asarray(h1.dHdp(p, q, v, u, eps), dtype=float)

    def dHdq(p, q, v, u, eps):
        return np.asarray(h0.dHdq(p, q), dtype=float) + eps * np.asarray(h1.dHdq(p, q, v, u, eps), dtype=float)

    def dHdv(p, q, v, u, eps):
        return eps * np.asarray(h1.dHdv(p, q, v, u, eps), dtype=float)

    def dHdu(p, q, v, u, eps):
        return eps * np.asarray(h1.dHdu(p, q, v, u, eps), dtype=float)

    return HamiltonianModel(
        h1.dims, H, dHdp, dHdq, dHdv, dHdu,
        name=f"perturbative({h1.name})", standard_form=True,
        metadata={"perturbative": True, "h0": h0, "h1": h1},
    )


def harmonic_fast(energy: float = 1.0) -> FastHamiltonian:
    """``H0 = (p^2 + q^2)/2 - energy`` for one fast degree of freedom."""
    return FastHamiltonian(
        1,
        lambda p, q: 0.5 * float(p[0] ** 2 + q[0] ** 2) - energy,
        lambda p, q: np.array([p[0]]),
        lambda p, q: np.array([q[0]]),
    )


# ---------------------------------------------------------------------------
# Builtin models


def builtin_oscillator(omega=1.0, energy=None, domain: Optional[Domain] = None) -> HamiltonianModel:
    """``H = (p^2 + omega(z)^2 q^2)/2 - E(z)`` with ``m = d = 1``.

    ``omega`` and ``energy`` are numbers or :class:`Field` objects; energy
    defaults to ``1 + (u^2 + v^2)/2``.  The frozen orbit at ``z`` is the
    ellipse of area ``2 pi E/omega``, which is recorded in
    ``metadata['reference']`` as closed-form action, period and gradient.
    """
    om = _as_field(omega)
    en = Field.bowl(1.0, 0.5) if energy is None else _as_field(energy)
    if domain is not None:
        lo, hi = domain.bounding_box()
        grid = np.stack(np.meshgrid(np.linspace(lo[0], hi[0], 9), np.linspace(lo[1], hi[1], 9)), -1)
        for v, u in grid.reshape(-1, 2):
            if om.value(v, u) <= 0:
                raise ModelError(f"omega must be positive on D, got {om.value(v, u)} at {(v, u)}")
    else:
        if om.value(0.0, 0.0) <= 0:
            raise ModelError("omega must be positive")

    def H(p, q, v, u, eps):
        w = om.value(v[0], u[0])
        return 0.5 * (p[0] ** 2 + w * w * q[0] ** 2) - en.value(v[0], u[0])

    def dHdp(p, q, v, u, eps):
        return np.array([p[0]])

    def dHdq(p, q, v, u, eps):
        w = om.value(v[0], u[0])
        return np.array([w * w * q[0]])

    def dHdv(p, q, v, u, eps):
        w = om.value(v[0], u[0])
        return np.array([w * om.grad(v[0], u[0])[0] * q[0] ** 2 - en.grad(v[0], u[0])[0]])

    def dHdu(p, q, v, u, eps):
        w = om.value(v[0], u[0])
        return np.array([w * om.grad(v[0], u[0])[1] * q[0] ** 2 - en.grad(v[0], u[0])[1]])

    def jac(p, q, v, u, eps):
        w = om.value(v[0], u[0])
        return np.array([[0.0, -w * w], [1.0, 0.0]])

    def ref_action(z):
        v, u = z[0], z[1]
        return 2 * np.pi * en.value(v, u) / om.value(v, u)

    def ref_period(z):
        return 2 * np.pi / om.value(z[0], z[1])

    def ref_gradient(z):
        v, u = z[0], z[1]
        e, w = en.value(v, u), om.value(v, u)
        ge, gw = np.array(en.grad(v, u)), np.array(om.grad(v, u))
        return 2 * np.pi * (ge * w - e * gw) / (w * w)

    def ref_orbit(z, phase=0.0):
        # q = r sin(omega t), p = r omega cos(omega t)
        e, w = en.value(z[0], z[1]), om.value(z[0], z[1])
        amp = np.sqrt(2 * e) / w
        return np.array([amp * w * np.cos(phase), amp * np.sin(phase)])

    return HamiltonianModel(
        Dims(1, 1), H, dHdp, dHdq, dHdv, dHdu,
        name="oscillator", fast_jacobian=jac,
        metadata={
            "omega": om.label, "energy": en.label,
            "reference": {"action": ref_action, "period": ref_period,
                          "gradient": ref_gradient, "orbit": ref_orbit},
        },
    )


def builtin_saddle_oscillator(lam: float = 0.5, omega: float = 1.0, energy: float = 1.0) -> HamiltonianModel:
    """``H = lam p1 q1 + omega (p2^2 + q2^2)/2 - E(z)``, ``m = 2``, ``d = 1``.

    ``E(z) = energy (1 + (u^2 + v^2)/2)``.  The orbit ``p1 = q1 = 0`` is a
    saddle periodic orbit with period ``2 pi/omega`` and nontrivial Floquet
    multipliers ``exp(+-lam T)``.
    """
    if lam <= 0 or omega <= 0 or energy <= 0:
        raise ModelError(f"saddle oscillator needs positive parameters, got {lam=}, {omega=}, {energy=}")

    def E(v, u):
        return energy * (1 + 0.5 * (u[0] ** 2 + v[0] ** 2))

    def H(p, q, v, u, eps):
        return lam * p[0] * q[0] + 0.5 * omega * (p[1] ** 2 + q[1] ** 2) - E(v, u)

    def dHdp(p, q, v, u, eps):
        return np.array([lam * q[0], omega * p[1]])

    def dHdq(p, q, v, u, eps):
        return np.array([lam * p[0], omega * q[1]])

    def dHdv(p, q, v, u, eps):
        return np.array([-energy * v[0]])

    def dHdu(p, q, v, u, eps):
        return np.array([-energy * u[0]])

    jac_const = np.array([
        [-lam, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -omega],
        [0.0, 0.0, lam, 0.0],
        [0.0, omega, 0.0, 0.0],
    ])

    def jac(p, q, v, u, eps):
        return jac_const

    def ref_action(z):
        return 2 * np.pi * energy * (1 + 0.5 * (z[0] ** 2 + z[1] ** 2)) / omega

    def ref_period(z):
        return 2 * np.pi / omega

    def ref_gradient(z):
        return 2 * np.pi * energy * np.array([z[0], z[1]]) / omega

    def ref_orbit(z, phase=0.0):
        r = np.sqrt(2 * energy * (1 + 0.5 * (z[0] ** 2 + z[1] ** 2)) / omega)
        return np.array([0.0, r * np.cos(phase), 0.0, r * np.sin(phase)])

    return HamiltonianModel(
        Dims(2, 1), H, dHdp, dHdq, dHdv, dHdu,
        name="saddle_oscillator", fast_jacobian=jac,
        metadata={
            "lambda": lam, "omega": omega, "energy": energy,
            "reference": {"action": ref_action, "period": ref_period,
                          "gradient": ref_gradient, "orbit": ref_orbit},
        },
    )


def builtin_perturbative(energy: float = 1.0, coupling: float = 1.0) -> HamiltonianModel:
    """``H0 = (p^2 + q^2)/2 - energy`` and ``H1 = coupling * u * q^2``."""

    def H1(p, q, v, u, eps):
        return coupling * u[0] * q[0] ** 2

    h1 = HamiltonianModel(
        Dims(1, 1), H1,
        lambda p, q, v, u, eps: np.array([0.0]),
        lambda p, q, v, u, eps: np.array([2 * coupling * u[0] * q[0]]),
        lambda p, q, v, u, eps: np.array([0.0]),
        lambda p, q, v, u, eps: np.array([coupling * q[0] ** 2]),
        name="u*q^2",
    )
    model = make_perturbative(harmonic_fast(energy), h1)
    return model


BUILTIN_MODELS = {
    "oscillator": builtin_oscillator,
    "saddle_oscillator": builtin_saddle_oscillator,
    "perturbative": builtin_perturbative,
}
