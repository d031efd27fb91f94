"""Cross-form Poincare maps, codes and invariant surface families.

Between sections ``c`` and ``c'`` (symbols ``a``/``b``) a point ``(x, y, z)``
is mapped to ``(xbar, ybar, zbar)`` if and only if::

    xbar = f_cc'(x, ybar, z, eps)
    y    = g_cc'(x, ybar, z, eps)
    zbar = z + eps * phi_cc'(x, ybar, z, eps)

All map functions are vectorized over leading axes: ``x`` and ``ybar``
have shape ``(..., k)`` and ``z`` has shape ``(..., 2d)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator

from .errors import (NonConvergence, ParameterError, PreconditionError, SlowMapNotInvertible,
                     SurfaceWindowExceeded)
from .model import Box, Domain

SYMBOLS = ("a", "b")
PAIRS = ("aa", "ab", "ba", "bb")


def _fd_jacobian(f, g, x, yb, z, eps, h=1e-5):
    """Jacobian of ``(f, g)`` with respect to ``(x, ybar)``; shape (..., 2k, 2k)."""
    k = x.shape[-1]
    cols = []
    for which in (0, 1):
        for j in range(k):
            dx = np.zeros_like(x)
            dy = np.zeros_like(yb)
            (dx if which == 0 else dy)[..., j] = h
            up = np.concatenate([f(x + dx, yb + dy, z, eps), g(x + dx, yb + dy, z, eps)], -1)
            dn = np.concatenate([f(x - dx, yb - dy, z, eps), g(x - dx, yb - dy, z, eps)], -1)
            cols.append((up - dn) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass
class CrossFormSystem:
    """Cross-form maps for every ordered pair of symbols.

    ``f``, ``g`` and ``phi`` map pair strings (``"ab"`` etc.) to callables
    ``fn(x, ybar, z, eps)``.  ``jac`` optionally maps pairs to the Jacobian
    of ``(f, g)`` with respect to ``(x, ybar)``.
    """

    f: dict
    g: dict
    phi: dict
    lam: float
    R: float
    domain: Domain
    k: int = 1
    jac: Optional[dict] = None
    name: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ParameterError(f"contraction constant must lie in (0, 1), got {self.lam}")
        if self.R <= 0:
            raise ParameterError("ball radius must be positive")
        for part in (self.f, self.g, self.phi):
            missing = set(PAIRS) - set(part)
            if missing:
                raise ParameterError(f"maps missing for pairs {sorted(missing)}")

    @property
    def slow_size(self) -> int:
        return self.domain.dim

    def jacobian(self, pair, x, yb, z, eps=0.0):
        if self.jac is not None and pair in self.jac:
            return np.asarray(self.jac[pair](x, yb, z, eps), dtype=float)
        return _fd_jacobian(self.f[pair], self.g[pair], x, yb, z, eps)

    def apply(self, pair, x, yb, z, eps=0.0):
        """``(xbar, y, zbar)`` for a point given by its cross coordinates."""
        return (self.f[pair](x, yb, z, eps), self.g[pair](x, yb, z, eps),
                z + eps * self.phi[pair](x, yb, z, eps))


# ---------------------------------------------------------------------------
# Builtin affine horseshoe


DEFAULT_X_OFFSETS = {"aa": 0.25, "ab": -0.2, "ba": 0.1, "bb": -0.3}
DEFAULT_Y_OFFSETS = {"aa": 0.0, "ab": 0.15, "ba": -0.25, "bb": 0.2}


def affine_horseshoe(domain: Domain, lam: float = 0.5, R: float = 1.0,
                     x_offsets: dict = None, y_offsets: dict = None,
                     coupling: float = 0.0, generators: Optional[dict] = None,
                     mu: float = 0.0, slack: float = 0.0) -> CrossFormSystem:
    """Affine cross-form maps with one stable and one unstable coordinate.

    ``f = lam x + alpha + coupling h1(z)`` and
    ``g = lam ybar + beta + coupling h2(z)`` with ``h1 = sin(v) cos(u)`` and
    ``h2 = cos(v + u)`` (first slow pair).  ``slack`` lowers the Jacobian
    entries to ``lam - slack``; the declared constant stays ``lam``.

    ``generators`` maps symbols to slow generators.  Then
    ``phi_cc'(x, ybar, z) = X_c(z) + mu (x - x_c(z) + ybar - y_c(z)) e``,
    where ``X_c`` is the slow field of generator ``c``, ``(x_c, y_c)`` is
    the frozen fixed point of the pure code ``c`` and ``e`` is the unit
    diagonal.  Without generators ``phi`` is zero.
    """
    ax = dict(DEFAULT_X_OFFSETS if x_offsets is None else x_offsets)
    by = dict(DEFAULT_Y_OFFSETS if y_offsets is None else y_offsets)
    a = lam - slack
    bound = a * R + max(abs(v) for v in ax.values()) + abs(coupling)
    boundy = a * R + max(abs(v) for v in by.values()) + abs(coupling)
    if max(bound, boundy) > R + 1e-12:
        raise ParameterError(f"maps leave the ball of radius {R} (bound {max(bound, boundy):.3g})")

    def h1(z):
        return np.sin(z[..., :1]) * np.cos(z[..., 1:2]) if z.shape[-1] >= 2 else 0.0

    def h2(z):
        return np.cos(z[..., :1] + z[..., 1:2])

    def mk_f(alpha):
        return lambda x, yb, z, eps: a * x + alpha + coupling * h1(np.asarray(z))

    def mk_g(beta):
        return lambda x, yb, z, eps: a * yb + beta + coupling * h2(np.asarray(z))

    def mk_jac():
        def jac(x, yb, z, eps):
            kk = x.shape[-1]
            J = np.zeros(x.shape[:-1] + (2 * kk, 2 * kk))
            for j in range(kk):
                J[..., j, j] = a
                J[..., kk + j, kk + j] = a
            return J

        return jac

    def fixed_point(c, z):
        pair = c + c
        xc = (ax[pair] + coupling * h1(z)) / (1 - a)
        yc = (by[pair] + coupling * h2(z)) / (1 - a)
        return xc, yc

    d2 = domain.dim
    diag = np.ones(d2) / np.sqrt(d2)

    def mk_phi(pair):
        if not generators:
            return lambda x, yb, z, eps: np.zeros(np.shape(z))
        gen = generators[pair[0]]
        c = pair[0]

        def phi(x, yb, z, eps):
            z = np.asarray(z, dtype=float)
            grad = gen.gradient(z)
            T = np.asarray(gen.period(z), dtype=float)[..., None]
            d = z.shape[-1] // 2
            X = np.concatenate([grad[..., d:], -grad[..., :d]], axis=-1) / T
            if mu == 0.0:
                return X
            xc, yc = fixed_point(c, z)
            dev = np.sum(x - xc, axis=-1) + np.sum(yb - yc, axis=-1)
            return X + mu * dev[..., None] * diag

        return phi

    return CrossFormSystem(
        f={p: mk_f(ax[p]) for p in PAIRS},
        g={p: mk_g(by[p]) for p in PAIRS},
        phi={p: mk_phi(p) for p in PAIRS},
        lam=lam, R=R, domain=domain, k=1,
        jac={p: mk_jac() for p in PAIRS},
        name="affine_horseshoe",
        metadata={"x_offsets": ax, "y_offsets": by, "coupling": coupling, "mu": mu,
                  "slack": slack, "fixed_point": fixed_point,
                  "generators": sorted(generators) if generators else []},
    )


# ---------------------------------------------------------------------------
# Codes


@dataclass(frozen=True)
class Code:
    """Bi-infinite symbol sequence: periodic tails around a finite core.

    The core occupies indices ``offset .. offset + len(core) - 1``; to the
    left the word ``left`` repeats so that ``xi[offset - 1] == left[-1]``,
    to the right ``right`` repeats starting with ``right[0]``.
    """

    core: str
    left: str
    right: str
    offset: int = 0

    def __post_init__(self):
        if not self.left or not self.right:
            raise ValueError("tail words must be nonempty")
        for s in self.core + self.left + self.right:
            if s not in SYMBOLS:
                raise ValueError(f"unknown symbol {s!r}")

    @classmethod
    def pure(cls, c: str) -> "Code":
        return cls("", c, c)

    @classmethod
    def periodic(cls, word: str) -> "Code":
        return cls("", word, word)

    def __getitem__(self, i: int) -> str:
        j = i - self.offset
        if 0 <= j < len(self.core):
            return self.core[j]
        if j >= len(self.core):
            return self.right[(j - len(self.core)) % len(self.right)]
        return self.left[j % len(self.left)]

    def word(self, lo: int, hi: int) -> str:
        """Symbols with indices ``lo .. hi`` inclusive."""
        return "".join(self[i] for i in range(lo, hi + 1))

    @property
    def end(self) -> int:
        return self.offset + len(self.core)

    @property
    def pure_symbol(self) -> Optional[str]:
        syms = set(self.core + self.left + self.right)
        return syms.pop() if len(syms) == 1 else None

    def period_word(self) -> Optional[str]:
        """The repeated word when the whole sequence is periodic."""
        if self.pure_symbol:
            return self.pure_symbol
        if self.left == self.right:
            w = self.left
            L = len(w)
            if all(self.core[j] == w[(self.offset + j) % L] for j in range(len(self.core))):
                return w
        return None

    def default_window(self, width: int = 20) -> tuple[int, int]:
        return self.offset - width, self.end + width


# ---------------------------------------------------------------------------
# Frozen orbits for codes


def _max_norm(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def check_contraction(sys: CrossFormSystem, samples: int = 500, seed: int = 0, eps: float = 0.0):
    """Largest sampled max-norm of ``d(f, g)/d(x, ybar)`` over all pairs.

    Returns ``(lam_hat, passed)`` with ``passed = lam_hat <= sys.lam``;
    finite-difference Jacobians get a slack of 1e-8 for their own error.
    """
    rng = np.random.default_rng(seed)
    lo, hi = sys.domain.bounding_box()
    z = lo + (hi - lo) * rng.random((samples, lo.size))
    x = sys.R * (2 * rng.random((samples, sys.k)) - 1)
    yb = sys.R * (2 * rng.random((samples, sys.k)) - 1)
    lam_hat = 0.0
    for pair in PAIRS:
        J = sys.jacobian(pair, x, yb, z, eps)
        if not np.all(np.isfinite(J)):
            from .errors import EvaluationError

            raise EvaluationError(f"non-finite Jacobian for pair {pair}")
        norms = np.max(np.sum(np.abs(J), axis=-1), axis=-1)
        lam_hat = max(lam_hat, float(np.max(norms)))
    slack = 1e-12 if sys.jac is not None else 1e-8
    return lam_hat, lam_hat <= sys.lam + slack


@dataclass
class SymbolicOrbit:
    window: tuple
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    eps: float
    residual: float
    iterations: int
    factors: np.ndarray = field(repr=False, default=None)

    def at(self, i: int):
        lo, hi = self.window
        if not lo <= i <= hi:
            raise IndexError(f"index {i} outside window {self.window}")
        return self.x[i - lo], self.y[i - lo]


def _pairs_forward(code: Code, lo: int, hi: int) -> list[str]:
    """Pair symbols ``xi_i xi_{i+1}`` for ``i = lo .. hi - 1``."""
    w = code.word(lo, hi)
    return [w[i:i + 2] for i in range(len(w) - 1)]


def _group(pairs):
    groups = {}
    for i, p in enumerate(pairs):
        groups.setdefault(p, []).append(i)
    return {p: np.array(ix) for p, ix in groups.items()}


def periodic_orbit_for_word(sys: CrossFormSystem, word: str, z, eps: float = 0.0,
                            tol: float = 1e-14, max_iter: int = 10000):
    """Frozen fixed point of the operator for the periodic code ``word``.

    Returns arrays ``x, y`` of shape ``(len(word), k)``; entry ``j`` belongs
    to the section of symbol ``word[j]``.
    """
    z = np.asarray(z, dtype=float)
    L = len(word)
    pairs = [word[j] + word[(j + 1) % L] for j in range(L)]
    x = np.zeros(z.shape[:-1] + (L, sys.k))
    y = np.zeros_like(x)
    for it in range(max_iter):
        xn = np.empty_like(x)
        yn = np.empty_like(y)
        for j in range(L):
            pp = pairs[j - 1]
            xn[..., j, :] = sys.f[pp](x[..., j - 1, :], y[..., j, :], z, eps)
            yn[..., j, :] = sys.g[pairs[j]](x[..., j, :], y[..., (j + 1) % L, :], z, eps)
        diff = max(_max_norm(xn - x), _max_norm(yn - y))
        x, y = xn, yn
        if diff <= tol:
            return x, y
        if not np.isfinite(diff) or diff > 1e12:
            break
    raise NonConvergence(f"periodic orbit for {word!r} did not converge")


def _tail_boundary(sys, code: Code, lo: int, hi: int, z):
    """Boundary data ``x_lo`` and ``y_hi`` from the pure-tail orbits."""
    xl, _ = periodic_orbit_for_word(sys, code.left, z)
    _, yr = periodic_orbit_for_word(sys, code.right, z)
    if lo >= code.offset or hi < code.end:
        raise ValueError(f"window ({lo}, {hi}) must reach into both tails of the code")
    x_lo = xl[..., (lo - code.offset) % len(code.left), :]
    y_hi = yr[..., (hi - code.end) % len(code.right), :]
    return x_lo, y_hi


def orbit_for_code(sys: CrossFormSystem, code: Code, z, window=None, tol: float = 1e-12,
                   max_iter: int = 5000) -> SymbolicOrbit:
    """Frozen orbit with the given code, by fixed-point iteration.

    The operator ``x_i <- f(x_{i-1}, y_i)``, ``y_i <- g(x_i, y_{i+1})`` is
    applied simultaneously on the window with ``x_lo`` and ``y_hi`` taken
    from the periodic orbits of the tail words.  Iteration stops when the
    residual ``|T(u) - u|`` is at most ``tol``.
    """
    z = np.asarray(z, dtype=float)
    lo, hi = window or code.default_window()
    n = hi - lo + 1
    pairs = _pairs_forward(code, lo, hi)
    groups = _group(pairs)
    x_lo, y_hi = _tail_boundary(sys, code, lo, hi, z)
    x = np.zeros((n, sys.k))
    y = np.zeros((n, sys.k))
    x[0] = x_lo
    y[-1] = y_hi
    diffs = []
    for it in range(1, max_iter + 1):
        xn = x.copy()
        yn = y.copy()
        for p, ix in groups.items():
            # pair index i joins positions i and i+1
            xn[ix + 1] = sys.f[p](x[ix], y[ix + 1], z, 0.0)
            yn[ix] = sys.g[p](x[ix], y[ix + 1], z, 0.0)
        diff = max(_max_norm(xn - x), _max_norm(yn - y))
        diffs.append(diff)
        x, y = xn, yn
        if diff <= tol:
            break
        if not np.isfinite(diff) or diff > 1e12:
            raise NonConvergence(f"orbit_for_code diverged after {it} iterations")
    else:
        raise NonConvergence(f"orbit_for_code did not converge in {max_iter} iterations")
    # residual of the converged iterate
    xr, yr = x.copy(), y.copy()
    for p, ix in groups.items():
        xr[ix + 1] = sys.f[p](x[ix], y[ix + 1], z, 0.0)
        yr[ix] = sys.g[p](x[ix], y[ix + 1], z, 0.0)
    residual = max(_max_norm(xr - x), _max_norm(yr - y))
    diffs = np.array(diffs)
    good = diffs[:-1] > 1e-10
    factors = (diffs[1:] / diffs[:-1])[good] if diffs.size > 1 else np.array([])
    return SymbolicOrbit((lo, hi), x, y, z, 0.0, residual, it, factors)


@dataclass
class MixReport:
    indices: np.ndarray
    measured: np.ndarray
    bound: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return self.measured / self.bound

    @property
    def violations(self) -> int:
        return int(np.sum(self.measured > self.bound))


def mix_check(sys: CrossFormSystem, code1: Code, code2: Code, n: int, z, window=None) -> MixReport:
    """Compare orbits of two codes sharing the block ``|i| <= n``."""
    for i in range(-n, n + 1):
        if code1[i] != code2[i]:
            raise PreconditionError(f"codes differ at index {i} inside the shared block")
    if window is None:
        lo1, hi1 = code1.default_window()
        lo2, hi2 = code2.default_window()
        window = (min(lo1, lo2, -n - 20), max(hi1, hi2, n + 20))
    o1 = orbit_for_code(sys, code1, z, window)
    o2 = orbit_for_code(sys, code2, z, window)
    idx = np.arange(-n, n + 1)
    meas = np.empty(idx.size)
    for j, i in enumerate(idx):
        x1, y1 = o1.at(i)
        x2, y2 = o2.at(i)
        meas[j] = max(np.linalg.norm(x1 - x2), np.linalg.norm(y1 - y2))
    bound = 2 * sys.R * sys.lam ** (n - np.abs(idx))
    return MixReport(idx, meas, bound)


# ---------------------------------------------------------------------------
# Boundary mollification


def smooth_cutoff(dist, delta: float):
    """C^1 ramp: 0 for ``dist <= delta/2``, 1 for ``dist >= delta``."""
    s = np.clip((np.asarray(dist, dtype=float) - delta / 2) / (delta / 2), 0.0, 1.0)
    return s * s * (3 - 2 * s)


def mollify(sys: CrossFormSystem, delta: float) -> CrossFormSystem:
    """Multiply every ``phi`` by a cutoff vanishing near the domain boundary."""
    if not 0 < delta < sys.domain.inradius:
        raise ParameterError(f"delta must lie in (0, {sys.domain.inradius}), got {delta}")
    dom = sys.domain

    def wrap(fn):
        def phi(x, yb, z, eps):
            val = fn(x, yb, z, eps)
            cut = smooth_cutoff(dom.boundary_distance(np.asarray(z, dtype=float)), delta)
            return np.where(cut[..., None] >= 1.0, val, cut[..., None] * val)

        return phi

    meta = dict(sys.metadata)
    meta["mollifier"] = {"delta": delta, "profile": "smoothstep"}
    return CrossFormSystem(sys.f, sys.g, {p: wrap(fn) for p, fn in sys.phi.items()},
                           sys.lam, sys.R, dom, sys.k, sys.jac, sys.name, meta)


# ---------------------------------------------------------------------------
# Invariant surfaces


class _GridInterp:
    """Interpolant of ``(..., k)`` values on a tensor grid."""

    def __init__(self, axes, values):
        self.k = values.shape[-1]
        if len(axes) == 2:
            kx = min(3, axes[0].size - 1)
            ky = min(3, axes[1].size - 1)
            self._spl = [RectBivariateSpline(axes[0], axes[1], values[..., j], kx=kx, ky=ky, s=0)
                         for j in range(self.k)]
            self._two = True
        else:
            self._spl = [RegularGridInterpolator(axes, values[..., j], method="cubic",
                                                 bounds_error=False, fill_value=None)
                         for j in range(self.k)]
            self._two = False

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self._two:
            return np.stack([s.ev(z[..., 0], z[..., 1]) for s in self._spl], axis=-1)
        return np.stack([s(z) for s in self._spl], axis=-1)


@dataclass
class SurfaceFamily:
    """Graphs ``x_i(z)``, ``y_i(z)`` over a grid covering the domain.

    ``X`` and ``Y`` have shape ``(n_index, *grid_shape, k)``.  When
    ``cyclic`` is set the family is periodic in the index with period
    ``n_index`` and ``window[0]`` is the index of the first entry.
    """

    code: Code
    eps: float
    window: tuple
    axes: list
    X: np.ndarray
    Y: np.ndarray
    residual: float
    sweeps: int
    cyclic: bool = False
    mollifier: Optional[dict] = None
    truncation_bound: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    def _slot(self, i: int) -> int:
        lo, hi = self.window
        if self.cyclic:
            return (i - lo) % self.X.shape[0]
        if not lo <= i <= hi:
            raise SurfaceWindowExceeded(f"index {i} outside surface window {self.window}")
        return i - lo

    def _interp(self, which: str, i: int) -> _GridInterp:
        s = self._slot(i)
        key = (which, s)
        if key not in self._cache:
            vals = self.X[s] if which == "x" else self.Y[s]
            self._cache[key] = _GridInterp(self.axes, vals)
        return self._cache[key]

    def x_at(self, i: int, z):
        return self._interp("x", i)(z)

    def y_at(self, i: int, z):
        return self._interp("y", i)(z)

    def nodes(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def indices(self):
        lo, hi = self.window
        return range(lo, hi + 1) if not self.cyclic else range(lo, lo + self.X.shape[0])

    def to_csv(self, path):
        nodes = self.nodes().reshape(-1, len(self.axes))
        with open(path, "w", newline="") as fh:
            if self.mollifier:
                fh.write("# mollifier=" + ";".join(f"{k}={v}" for k, v in self.mollifier.items()) + "\n")
            out = csv.writer(fh)
            d = len(self.axes) // 2
            k = self.X.shape[-1]
            out.writerow(["i"] + [f"v{j}" for j in range(d)] + [f"u{j}" for j in range(d)]
                         + [f"x{j}" for j in range(k)] + [f"y{j}" for j in range(k)])
            for i in self.indices():
                s = self._slot(i)
                X = self.X[s].reshape(-1, k)
                Y = self.Y[s].reshape(-1, k)
                for n in range(nodes.shape[0]):
                    out.writerow([i] + [f"{v:.17g}" for v in (*nodes[n], *X[n], *Y[n])])


def _check_slow_map(sys: CrossFormSystem, eps: float, samples: int = 200, seed: int = 1):
    """Require ``eps * |d phi/dz| < 1`` on samples so ``z -> z + eps phi`` is invertible."""
    if eps == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    lo, hi = sys.domain.bounding_box()
    z = lo + (hi - lo) * rng.random((samples, lo.size))
    x = sys.R * (2 * rng.random((samples, sys.k)) - 1)
    yb = sys.R * (2 * rng.random((samples, sys.k)) - 1)
    worst = 0.0
    h = 1e-6
    for pair in PAIRS:
        cols = []
        for j in range(lo.size):
            dz = np.zeros(lo.size)
            dz[j] = h
            cols.append((sys.phi[pair](x, yb, z + dz, eps) - sys.phi[pair](x, yb, z - dz, eps)) / (2 * h))
        J = np.stack(cols, axis=-1)
        worst = max(worst, float(np.max(np.sum(np.abs(J), axis=-1))))
    if abs(eps) * worst >= 1.0:
        raise SlowMapNotInvertible(f"eps * |dphi/dz| = {abs(eps) * worst:.3g} >= 1")
    return abs(eps) * worst


def _settled(diff, prev, tol, z) -> bool:
    """Converged, or stalled at round-off level."""
    scale = 1 + _max_norm(z)
    return diff <= tol * scale or (diff <= 1e-12 * scale and diff >= 0.5 * prev)


def _solve_zbar(sys, pair, x, z, y_next_interp, eps, tol=1e-15, max_iter=200, start=None):
    """Solve ``zbar = z + eps phi(x, y_next(zbar), z)`` by fixed-point iteration."""
    zb = z.copy() if start is None else start.copy()
    prev = np.inf
    for _ in range(max_iter):
        yb = y_next_interp(zb)
        zn = z + eps * sys.phi[pair](x, yb, z, eps)
        diff = _max_norm(zn - zb)
        zb = zn
        if _settled(diff, prev, tol, z):
            return zb, y_next_interp(zb)
        prev = diff
    raise NonConvergence("slow-map transport did not converge")


def _solve_preimage(sys, pair, zhat, yb, x_interp, eps, tol=1e-15, max_iter=200, start=None):
    """Solve ``zhat = z + eps phi(x(z), yb, z)`` for ``z``."""
    z = zhat.copy() if start is None else start.copy()
    prev = np.inf
    for _ in range(max_iter):
        zn = zhat - eps * sys.phi[pair](x_interp(z), yb, z, eps)
        diff = _max_norm(zn - z)
        z = zn
        if _settled(diff, prev, tol, zhat):
            return z, x_interp(z)
        prev = diff
    raise NonConvergence("slow-map preimage did not converge")


def _sweeps(sys, pairs, Z, axes, X, Y, eps, tol, max_sweeps, cyclic):
    """Alternate a backward y-sweep and a forward x-sweep until stationary.

    ``pairs[i]`` joins slots ``i`` and ``i + 1`` (mod n when cyclic).
    Non-cyclic problems keep ``X[0]`` and ``Y[-1]`` fixed.
    """
    n = X.shape[0]
    shape = X.shape[1:-1]
    flatZ = Z.reshape(-1, Z.shape[-1])
    k = X.shape[-1]
    npairs = len(pairs)
    change = np.inf
    # warm starts: last solution for the slot, else the neighbour's
    fwd = [None] * npairs
    back = [None] * npairs
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        # y: backward
        for i in reversed(range(npairs)):
            j = (i + 1) % n
            p = pairs[i]
            xi = X[i].reshape(-1, k)
            if eps == 0:
                yb = Y[j].reshape(-1, k)
                zb = flatZ
            else:
                guess = fwd[i] if fwd[i] is not None else fwd[(i + 1) % npairs]
                zb, yb = _solve_zbar(sys, p, xi, flatZ, _GridInterp(axes, Y[j]), eps, start=guess)
                fwd[i] = zb
            new = sys.g[p](xi, yb, flatZ, eps).reshape(shape + (k,))
            change = max(change, _max_norm(new - Y[i]))
            Y[i] = new
        # x: forward
        for i in range(npairs):
            j = (i + 1) % n
            p = pairs[i]
            yb = Y[j].reshape(-1, k)
            if eps == 0:
                z, xi = flatZ, X[i].reshape(-1, k)
            else:
                guess = back[i] if back[i] is not None else back[i - 1]
                z, xi = _solve_preimage(sys, p, flatZ, yb, _GridInterp(axes, X[i]), eps, start=guess)
                back[i] = z
            new = sys.f[p](xi, yb, z, eps).reshape(shape + (k,))
            change = max(change, _max_norm(new - X[j]))
            X[j] = new
        if change <= tol:
            return sweep, change
    raise NonConvergence(f"surface iteration stalled at change {change:.3g} after {max_sweeps} sweeps")


def _grid(sys: CrossFormSystem, resolution):
    if not isinstance(sys.domain, Box):
        lo, hi = sys.domain.bounding_box()
    else:
        lo, hi = sys.domain.lo, sys.domain.hi
    res = np.broadcast_to(np.asarray(resolution, dtype=int), lo.shape)
    axes = [np.linspace(a, b, int(r)) for a, b, r in zip(lo, hi, res)]
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return axes, Z


def _periodic_surfaces(sys, word, eps, axes, Z, tol, max_sweeps):
    L = len(word)
    pairs = [word[j] + word[(j + 1) % L] for j in range(L)]
    xf, yf = periodic_orbit_for_word(sys, word, Z)
    X = np.moveaxis(xf, -2, 0).copy()
    Y = np.moveaxis(yf, -2, 0).copy()
    if eps == 0:
        return X, Y, 0, 0.0
    sweeps, change = _sweeps(sys, pairs, Z, axes, X, Y, eps, tol, max_sweeps, cyclic=True)
    return X, Y, sweeps, change


def invariant_surfaces(sys: CrossFormSystem, code: Code, eps: float, window=None, resolution=33,
                       tol: float = 1e-13, max_sweeps: int = 500) -> SurfaceFamily:
    """Invariant graphs over D for the eps-coupled maps along ``code``.

    For every index ``i`` the surface ``(x_i(z), y_i(z))`` is tabulated on a
    tensor grid.  The y-graphs are updated backward in ``i`` by transporting
    grid nodes forward with the slow map, the x-graphs forward in ``i`` by
    pulling grid nodes back; both use cubic interpolation of the
    neighbouring graph.  Window ends are seeded with the surfaces of the
    periodic tail words.  ``residual`` is the last sweep's largest update,
    which bounds the invariance defect at the grid nodes.
    """
    _check_slow_map(sys, eps)
    axes, Z = _grid(sys, resolution)
    moll = sys.metadata.get("mollifier")
    word = code.period_word()
    if word is not None:
        X, Y, sweeps, change = _periodic_surfaces(sys, word, eps, axes, Z, tol, max_sweeps)
        start = (window[0] if window else 0)
        # align so that slot 0 holds symbol word[0] at index ``start``
        shift = (start - code.offset) % len(word) if code.pure_symbol is None else 0
        X = np.roll(X, -shift, axis=0)
        Y = np.roll(Y, -shift, axis=0)
        return SurfaceFamily(code, eps, (start, start + len(word) - 1), axes, X, Y, change, sweeps,
                             cyclic=True, mollifier=moll)
    lo, hi = window or code.default_window()
    if lo >= code.offset or hi < code.end:
        raise ValueError(f"window ({lo}, {hi}) must reach into both tails of the code")
    n = hi - lo + 1
    pairs = _pairs_forward(code, lo, hi)
    XL, _, _, _ = _periodic_surfaces(sys, code.left, eps, axes, Z, tol, max_sweeps)
    _, YR, _, _ = _periodic_surfaces(sys, code.right, eps, axes, Z, tol, max_sweeps)
    x_lo = XL[(lo - code.offset) % len(code.left)]
    y_hi = YR[(hi - code.end) % len(code.right)]
    # frozen orbit at each node as the initial iterate
    X = np.zeros((n,) + Z.shape[:-1] + (sys.k,))
    Y = np.zeros_like(X)
    flat = Z.reshape(-1, Z.shape[-1])
    x0, y0 = _tail_boundary(sys, code, lo, hi, flat)
    X[:] = x0.reshape(Z.shape[:-1] + (sys.k,))
    Y[:] = y0.reshape(Z.shape[:-1] + (sys.k,))
    X[0] = x_lo
    Y[-1] = y_hi
    sweeps, change = _sweeps(sys, pairs, Z, axes, X, Y, eps, tol, max_sweeps, cyclic=False)
    return SurfaceFamily(code, eps, (lo, hi), axes, X, Y, change, sweeps, mollifier=moll,
                         truncation_bound=2 * sys.R * sys.lam ** min(code.offset - lo, hi - code.end + 1))


def invariance_residual(sys: CrossFormSystem, fam: SurfaceFamily) -> float:
    """Largest defect of the invariance relations at grid nodes.

    For each consecutive pair the y-relation is checked at the nodes of
    ``L_i`` (after forward transport of ``z``) and the x-relation at the
    nodes of ``L_{i+1}`` (after pulling ``z`` back).
    """
    code = fam.code
    axes, Z = fam.axes, fam.nodes()
    flat = Z.reshape(-1, Z.shape[-1])
    k = fam.X.shape[-1]
    worst = 0.0
    idx = list(fam.indices())
    if fam.cyclic:
        idx = idx + [idx[-1] + 1]
    for i in idx[:-1]:
        p = code[i] + code[i + 1]
        xi = fam.X[fam._slot(i)].reshape(-1, k)
        yi = fam.Y[fam._slot(i)].reshape(-1, k)
        xj = fam.X[fam._slot(i + 1)].reshape(-1, k)
        yj = fam.Y[fam._slot(i + 1)].reshape(-1, k)
        if fam.eps == 0:
            zb, yb = flat, yj
            z, xp = flat, xi
        else:
            zb, yb = _solve_zbar(sys, p, xi, flat, fam._interp("y", i + 1), fam.eps)
            z, xp = _solve_preimage(sys, p, flat, yj, fam._interp("x", i), fam.eps)
        worst = max(worst, _max_norm(sys.g[p](xi, yb, flat, fam.eps) - yi))
        worst = max(worst, _max_norm(sys.f[p](xp, yj, z, fam.eps) - xj))
    return worst


# ---------------------------------------------------------------------------
# Coupled orbit along a code, solved directly (no surfaces)


def solve_coupled_orbit(sys: CrossFormSystem, code: Code, z0, eps: float, window, i0: int = 0,
                        tol: float = 1e-14, max_iter: int = 2000):
    """Orbit of the eps-coupled maps with code ``code`` and ``z_{i0} = z0``.

    Solves for ``x_i``, ``y_i`` and ``z_i`` on the window simultaneously.
    ``x_lo`` and ``y_hi`` come from the frozen tail orbits at the current
    end points.  Returns ``(x, y, z)`` arrays indexed from ``window[0]``.
    """
    lo, hi = window
    if not lo <= i0 <= hi:
        raise ValueError("start index outside the window")
    n = hi - lo + 1
    pairs = _pairs_forward(code, lo, hi)
    z = np.tile(np.asarray(z0, dtype=float), (n, 1))
    x = np.zeros((n, sys.k))
    y = np.zeros((n, sys.k))
    s = i0 - lo
    for it in range(1, max_iter + 1):
        x_lo, _ = _tail_boundary(sys, code, lo, hi, z[0])
        _, y_hi = _tail_boundary(sys, code, lo, hi, z[-1])
        xo, yo, zo = x.copy(), y.copy(), z.copy()
        x[0], y[-1] = x_lo, y_hi
        for i in range(s, n - 1):
            p = pairs[i]
            z[i + 1] = z[i] + eps * sys.phi[p](x[i], y[i + 1], z[i], eps)
        for i in range(s - 1, -1, -1):
            p = pairs[i]
            z[i] = z[i + 1] - eps * sys.phi[p](x[i], y[i + 1], z[i], eps)
        for i in range(n - 1):
            p = pairs[i]
            x[i + 1] = sys.f[p](x[i], y[i + 1], z[i], eps)
        for i in range(n - 2, -1, -1):
            p = pairs[i]
            y[i] = sys.g[p](x[i], y[i + 1], z[i], eps)
        diff = max(_max_norm(x - xo), _max_norm(y - yo), _max_norm(z - zo))
        if diff <= tol:
            return x, y, z
    raise NonConvergence("coupled orbit did not converge")
