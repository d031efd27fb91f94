"""Slow drift along codes, block closeness and the shadowing harness."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BlockMismatch, DomainExit, EmptyBlock, NonConvergence
from .horseshoe import (Code, CrossFormSystem, SurfaceFamily, invariant_surfaces, mollify,
                        solve_coupled_orbit)
from .slowdrive import AccessiblePath, PathFunction, path_validate


# ---------------------------------------------------------------------------
# Code planning


@dataclass(frozen=True)
class CodePlan:
    codes: tuple
    l0: int
    counts: tuple
    blocks: tuple
    offsets: tuple
    generators: tuple
    code: Code

    @property
    def length(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def prefix(self) -> str:
        return "".join(self.blocks)

    @property
    def starts(self) -> tuple:
        return (0,) + self.offsets[:-1]

    def block_of(self, i: int) -> int:
        """Segment whose block contains step ``i`` of the prefix."""
        for s, j in enumerate(self.offsets):
            if i < j:
                return s
        raise IndexError(f"step {i} lies beyond the planned prefix")


def _pad(word: str, l0: int) -> str:
    if l0 % len(word):
        raise ValueError(f"code {word!r} cannot be padded by repetition to length {l0}")
    return word * (l0 // len(word))


def plan_code(path: AccessiblePath, codes, eps: float, continuation: str = "repeat_last") -> CodePlan:
    """Blocks of ``N_i = floor(Delta_i / (eps l0))`` copies of each segment's code.

    ``codes`` maps generator indices to periodic code words.  The emitted
    code starts the prefix at index 0; before it the first block's code
    repeats and after it the last block's (``continuation="repeat_last"``)
    or the first block's (``"repeat_first"``) code repeats.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    words = {k: codes[k] for k in path.generators} if path.n_segments else dict(codes)
    if not words:
        raise ValueError("no codes given")
    l0 = max(len(w) for w in words.values())
    padded = {k: _pad(w, l0) for k, w in words.items()}
    counts, blocks, offsets = [], [], []
    total = 0
    for i, (delta, k) in enumerate(zip(path.durations, path.generators)):
        ratio = delta / (eps * l0)
        n = math.floor(ratio + 1e-9 * max(1.0, ratio))
        if n == 0:
            raise EmptyBlock(f"segment {i} of duration {delta:g} is shorter than one block at eps={eps:g}")
        counts.append(n)
        blocks.append(padded[k] * n)
        total += l0 * n
        offsets.append(total)
    if path.n_segments:
        first = padded[path.generators[0]]
        last = padded[path.generators[-1]] if continuation == "repeat_last" else first
    else:
        first = last = next(iter(padded.values()))
    code = Code("".join(blocks), first, last)
    return CodePlan(tuple(padded[k] for k in sorted(padded)), l0, tuple(counts), tuple(blocks),
                    tuple(offsets), tuple(path.generators), code)


# ---------------------------------------------------------------------------
# Drift iteration


@dataclass
class DriftTrajectory:
    """Iterates ``z_i`` for indices ``start .. start + steps``.

    ``x[n]`` and ``ybar[n]`` are the values entering the step from
    ``z[n]`` to ``z[n + 1]``, so that
    ``z[n + 1] == z[n] + eps * phi(x[n], ybar[n], z[n])`` exactly.
    """

    code: Code
    eps: float
    start: int
    z: np.ndarray
    x: np.ndarray
    ybar: np.ndarray
    exited: bool = False
    exit_step: Optional[int] = None

    @property
    def steps(self) -> int:
        return self.z.shape[0] - 1

    def replay(self, sys: CrossFormSystem) -> np.ndarray:
        """Recompute every step from the stored inputs."""
        out = np.empty_like(self.z)
        out[0] = self.z[0]
        for n in range(self.steps):
            i = self.start + n
            p = self.code[i] + self.code[i + 1]
            out[n + 1] = self.z[n] + self.eps * sys.phi[p](self.x[n], self.ybar[n], self.z[n], self.eps)
        return out

    def to_csv(self, path):
        d = self.z.shape[1] // 2
        k = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["i", "symbol"] + [f"v{j}" for j in range(d)] + [f"u{j}" for j in range(d)]
                         + [f"x{j}" for j in range(k)] + [f"ybar{j}" for j in range(k)])
            for n in range(self.steps + 1):
                xs = self.x[n] if n < self.steps else [np.nan] * k
                ys = self.ybar[n] if n < self.steps else [np.nan] * k
                out.writerow([self.start + n, self.code[self.start + n]]
                             + [f"{v:.17g}" for v in (*self.z[n], *xs, *ys)])


def _drift_on_surfaces(sys, fam: SurfaceFamily, code, z0, eps, steps, start, tol=1e-15, max_iter=200):
    d2 = z0.size
    k = fam.X.shape[-1]
    zs = np.empty((steps + 1, d2))
    xs = np.empty((steps, k))
    ys = np.empty((steps, k))
    zs[0] = z0
    dom = sys.domain
    for n in range(steps):
        i = start + n
        p = code[i] + code[i + 1]
        z = zs[n]
        x = fam.x_at(i, z)
        zb = z.copy()
        prev = np.inf
        for _ in range(max_iter):
            yb = fam.y_at(i + 1, zb)
            zn = z + eps * sys.phi[p](x, yb, z, eps)
            diff = float(np.max(np.abs(zn - zb)))
            zb = zn
            if diff <= tol * (1 + float(np.max(np.abs(z)))) or (diff <= 1e-12 and diff >= 0.5 * prev):
                break
            prev = diff
        else:
            raise NonConvergence(f"implicit drift step {i} did not converge")
        yb = fam.y_at(i + 1, zb)
        xs[n], ys[n] = x, yb
        zs[n + 1] = z + eps * sys.phi[p](x, yb, z, eps)
        if not dom.contains(zs[n + 1]):
            return zs[:n + 2], xs[:n + 1], ys[:n + 1], n + 1
    return zs, xs, ys, None


def drift_run(sys: CrossFormSystem, code: Code, z0, eps: float, steps: int,
              surfaces: Optional[SurfaceFamily] = None, start: int = 0, window_width: int = 20,
              raise_on_exit: bool = False) -> DriftTrajectory:
    """Iterate the slow map along ``code`` from ``z_start = z0``.

    With ``surfaces`` the step uses ``x_i(z_i)`` and ``y_{i+1}(z_{i+1})``
    from the invariant graphs (the new point enters implicitly).  Without
    them the orbit of the coupled maps is solved directly on a window
    around the requested steps.
    """
    z0 = np.asarray(z0, dtype=float)
    if not sys.domain.contains(z0):
        raise DomainExit("drift start lies outside the domain", 0.0)
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if surfaces is not None:
        if not surfaces.cyclic:
            lo, hi = surfaces.window
            if start < lo or start + steps > hi:
                from .errors import SurfaceWindowExceeded

                raise SurfaceWindowExceeded(
                    f"steps {start}..{start + steps} exceed surface window {surfaces.window}")
        zs, xs, ys, exit_n = _drift_on_surfaces(sys, surfaces, code, z0, eps, steps, start)
    else:
        zs, xs, ys, exit_n = _drift_direct(sys, code, z0, eps, steps, start, window_width)
    traj = DriftTrajectory(code, eps, start, zs, xs, ys, exit_n is not None, exit_n)
    if traj.exited and raise_on_exit:
        raise DomainExit(f"drift left the domain at step {exit_n}", float(exit_n))
    return traj


def _drift_direct(sys, code, z0, eps, steps, start, width):
    lo = min(start, code.offset) - width
    hi = max(start + steps, code.end) + width
    x, y, z = solve_coupled_orbit(sys, code, z0, eps, (lo, hi), i0=start)
    s = start - lo
    zs = np.empty((steps + 1, z0.size))
    zs[0] = z0
    xs = x[s:s + steps].copy()
    ys = y[s + 1:s + steps + 1].copy()
    for n in range(steps):
        i = start + n
        p = code[i] + code[i + 1]
        zs[n + 1] = zs[n] + eps * sys.phi[p](xs[n], ys[n], zs[n], eps)
        if not sys.domain.contains(zs[n + 1]):
            return zs[:n + 2], xs[:n + 1], ys[:n + 1], n + 1
    return zs, xs, ys, None


def homogeneous_run(sys: CrossFormSystem, c: str, z0, eps: float, steps: int,
                    surfaces: Optional[SurfaceFamily] = None, resolution=33) -> DriftTrajectory:
    """Drift along the pure code ``c`` using its index-independent surface."""
    code = Code.pure(c)
    if surfaces is None:
        surfaces = invariant_surfaces(sys, code, eps, resolution=resolution)
    return drift_run(sys, code, z0, eps, steps, surfaces=surfaces)


def block_compare(traj1: DriftTrajectory, traj2: DriftTrajectory, j: int, t0: float):
    """Largest ``|z1_{j+N} - z2_N| / eps`` for ``0 <= N <= floor(t0 / eps)``.

    ``j`` counts steps of ``traj1``.  Returns ``(profile, K1)``.
    """
    eps = traj1.eps
    if traj2.eps != eps:
        raise ValueError("trajectories use different eps")
    n = math.floor(t0 / eps + 1e-9)
    if j + n > traj1.steps or n > traj2.steps:
        raise ValueError("trajectories are too short for the requested block")
    for N in range(n):
        i1 = traj1.start + j + N
        i2 = traj2.start + N
        if traj1.code[i1] != traj2.code[i2] or traj1.code[i1 + 1] != traj2.code[i2 + 1]:
            raise BlockMismatch(f"codes differ at block position {N}")
    diff = np.linalg.norm(traj1.z[j:j + n + 1] - traj2.z[:n + 1], axis=1)
    profile = diff / eps
    return profile, float(np.max(profile))


def block_constant(sys: CrossFormSystem, eps: float, z0, t0: float = 1.0, k0: float = 1.0,
                   lead: int = 20, resolution: int = 17) -> float:
    """Measured ``K1`` for a ``b``-history followed by an ``a`` block of slow length ``t0``.

    The first run follows ``b^lead`` into ``a``; the second starts the pure
    ``a`` drift ``k0 eps`` away from where the first enters the block.
    """
    n = math.floor(t0 / eps + 1e-9)
    code = Code("b" * lead, "b", "a", offset=-lead)
    t1 = drift_run(sys, code, z0, eps, lead + n, start=-lead)
    start2 = t1.z[lead] + k0 * eps * np.eye(t1.z.shape[1])[0]
    t2 = homogeneous_run(sys, "a", start2, eps, n, resolution=resolution)
    return block_compare(t1, t2, lead, t0)[1]


# ---------------------------------------------------------------------------
# End-to-end shadowing


@dataclass
class ShadowReport:
    eps: float
    steps: np.ndarray
    slow_times: np.ndarray
    z: np.ndarray
    gamma: np.ndarray
    errors: np.ndarray
    segment_errors: tuple
    endpoint_error: float
    plan: Optional[CodePlan] = None
    trajectory: Optional[DriftTrajectory] = None
    surfaces_residual: float = 0.0
    mollifier: Optional[dict] = None

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors)) if self.errors.size else 0.0

    @property
    def C0(self) -> float:
        return self.max_error / self.eps

    def to_csv(self, path):
        d = self.z.shape[1] // 2
        names = [f"v{j}" for j in range(d)] + [f"u{j}" for j in range(d)]
        with open(path, "w", newline="") as fh:
            if self.mollifier:
                fh.write("# mollifier=" + ";".join(f"{k}={v}" for k, v in self.mollifier.items()) + "\n")
            out = csv.writer(fh)
            out.writerow(["step", "tau"] + [f"z_{n}" for n in names] + [f"gamma_{n}" for n in names]
                         + ["error"])
            for n in range(self.steps.size):
                out.writerow([int(self.steps[n])] + [f"{v:.17g}" for v in
                                                     (self.slow_times[n], *self.z[n], *self.gamma[n],
                                                      self.errors[n])])


@dataclass
class Theorem1Result:
    reports: list
    ratios: list
    bounds: tuple = (1.5, 3.0)

    @property
    def scaling_violation(self) -> bool:
        lo, hi = self.bounds
        return any(not lo <= r <= hi for r in self.ratios)

    @property
    def C0(self) -> float:
        return max(r.C0 for r in self.reports)

    def endpoint_ok(self, report: ShadowReport, slack: float = 1e-9) -> bool:
        """Endpoint error within ``C0 eps``, compared in units of eps."""
        return report.endpoint_error / report.eps <= self.C0 + slack

    def summary_rows(self):
        rows = []
        for n, r in enumerate(self.reports):
            ratio = self.ratios[n - 1] if n else float("nan")
            rows.append((r.eps, r.max_error, r.max_error / r.eps, r.endpoint_error, ratio))
        return rows


def shadow_path(sys: CrossFormSystem, gens: Sequence, path: AccessiblePath, codes, eps: float,
                resolution=33, window_width: int = 20) -> ShadowReport:
    """Drift along the planned code and compare with the path at matched slow times."""
    path = path if path.points is not None or path.n_segments == 0 else path_validate(path, gens)
    gamma = PathFunction(path, gens) if path.n_segments else None
    if path.n_segments == 0:
        z0 = path.z0[None, :]
        return ShadowReport(eps, np.array([0]), np.array([0.0]), z0, z0.copy(), np.zeros(1), (), 0.0,
                            mollifier=sys.metadata.get("mollifier"))
    plan = plan_code(path, codes, eps)
    code = plan.code
    window = (code.offset - window_width, code.end + window_width)
    fam = invariant_surfaces(sys, code, eps, window=window, resolution=resolution)
    traj = drift_run(sys, code, path.z0, eps, plan.length, surfaces=fam)
    if traj.exited:
        raise DomainExit(f"drift left the domain at step {traj.exit_step}", float(traj.exit_step))
    # slow time advances eps * T_k / l_k per symbol step inside block k
    seg_of_step = np.repeat(np.arange(path.n_segments), [len(b) for b in plan.blocks])
    inc = np.empty(plan.length)
    for s, k in enumerate(path.generators):
        sel = seg_of_step == s
        T = np.asarray(gens[k].period(traj.z[:-1][sel]), dtype=float)
        inc[sel] = eps * T / len(codes[k])
    taus = np.concatenate([[0.0], np.cumsum(inc)])
    taus = np.minimum(taus, path.duration)
    g = gamma(taus)
    err = np.linalg.norm(traj.z - g, axis=1)
    seg_err = []
    bounds = (0,) + plan.offsets
    for s in range(path.n_segments):
        seg_err.append(float(np.max(err[bounds[s]:bounds[s + 1] + 1])))
    end = float(np.linalg.norm(traj.z[-1] - gamma(path.duration)[0]))
    return ShadowReport(eps, np.arange(plan.length + 1), taus, traj.z.copy(), g, err, tuple(seg_err), end,
                        plan=plan, trajectory=traj, surfaces_residual=fam.residual,
                        mollifier=sys.metadata.get("mollifier"))


def verify_theorem1(sys: CrossFormSystem, gens: Sequence, path: AccessiblePath, eps_list, codes,
                    delta: Optional[float] = 0.25, resolution=33, window_width: int = 20,
                    bounds=(1.5, 3.0)) -> Theorem1Result:
    """Mollify, plan, build surfaces, drift and compare for every eps.

    ``ratios[n]`` is ``max_error(eps_n) / max_error(eps_{n+1})``; with
    halving eps this should be close to 2.
    """
    msys = mollify(sys, delta) if delta else sys
    path = path_validate(path, gens) if path.n_segments else path
    reports = [shadow_path(msys, gens, path, codes, e, resolution, window_width)
               for e in sorted(eps_list, reverse=True)]
    ratios = []
    for a, b in zip(reports, reports[1:]):
        ratios.append(a.max_error / b.max_error if b.max_error > 0 else float("nan"))
    return Theorem1Result(reports, ratios, tuple(bounds))
