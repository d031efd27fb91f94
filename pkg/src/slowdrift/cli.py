"""Command line experiment runner.

Every run reads an optional JSON config (``"schema": 1``), executes one
pipeline, writes CSV files plus ``summary.csv`` and ``manifest.json`` to
the output directory and prints a pass/fail table.

Exit codes: 0 all checks pass, 1 a check failed, 2 bad config,
3 runtime error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, SlowDriftError
from .horseshoe import (Code, check_contraction, invariant_surfaces, mix_check, mollify,
                        orbit_for_code)
from .model import BUILTIN_MODELS, Box, Field, domain_from_spec
from .orbit import (OrbitConfig, action, action_gradient, build_action_field, find_periodic_orbit,
                    floquet)
from .scenarios import synthetic_scenario
from .shadow import block_constant, drift_run, verify_theorem1
from .slowdrive import (AccessiblePath, AnalyticGenerator, SlowGeneratorSet, path_validate,
                        plan_level_lines, reference_generator, slow_trajectory,
                        track_slow_component)

SCHEMA_VERSION = 1
TOP_KEYS = {"schema", "pipeline", "model", "system", "domain", "generators", "path", "eps",
            "output", "seed", "params"}

PIPELINE_DEFAULTS = {
    "action_identity": {
        "model": {"name": "oscillator", "omega": [1.0, 0.1, 0.3]},
        "domain": {"shape": "box", "lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
        "params": {"samples": 10, "fd_step": 1e-5, "tolerance": 1e-6},
    },
    "floquet": {
        "params": {"lambdas": [0.25, 0.5, 1.0], "z": [0.3, -0.2], "tolerance": 1e-6},
    },
    "lemma_stab": {
        "model": {"name": "oscillator", "omega": [1.0, 0.1, 0.3]},
        "domain": {"shape": "box", "lo": [-3.0, -3.0], "hi": [3.0, 3.0]},
        "eps": [1e-2, 5e-3],
        "params": {"z0": [0.3, 0.2], "tau0": 1.0, "ratio_bounds": [1.5, 3.0]},
    },
    "horseshoe_lemmas": {
        "system": {"name": "synthetic", "coupling": 0.1, "mu": 0.2},
        "eps": [1e-2, 5e-3, 2.5e-3],
        "params": {"pairs": 100, "max_block": 8, "resolution": 17, "delta": 0.25,
                   "z": [0.3, 0.1], "t0": 1.0, "k0": 1.0, "lead": 20,
                   "surface_ratio_bounds": [0.5, 2.0], "k1_spread": 2.0},
    },
    "theorem1": {
        "system": {"name": "synthetic", "coupling": 0.1, "mu": 0.2},
        "eps": [1e-2, 5e-3],
        "params": {"resolution": 33, "delta": 0.25, "window": 20, "ratio_bounds": [1.5, 3.0]},
    },
    "orbit_find": {
        "model": {"name": "oscillator"},
        "params": {"z": [0.3, 0.2], "guess": None, "period": None, "samples": 512},
    },
    "action_map": {
        "model": {"name": "oscillator"},
        "domain": {"shape": "box", "lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
        "params": {"resolution": 11, "seed_z": None},
    },
    "slow_flow": {
        "generators": [{"kind": "quadratic", "center": [0.0, 0.0]}],
        "domain": {"shape": "box", "lo": [-2.0, -2.0], "hi": [2.5, 2.0]},
        "params": {"generator": 0, "z0": [0.5, 0.0], "tau": 1.0, "samples": 101},
    },
    "path_plan": {
        "generators": [{"kind": "quadratic", "center": [0.0, 0.0]},
                       {"kind": "quadratic", "center": [1.0, 0.0]}],
        "domain": {"shape": "box", "lo": [-2.0, -2.0], "hi": [2.5, 2.0]},
        "params": {"z0": [0.5, 0.0], "z1": [0.5, 0.3], "levels": 64, "tol": 1e-6},
    },
    "drift_run": {
        "system": {"name": "synthetic", "coupling": 0.1, "mu": 0.2},
        "eps": [1e-2],
        "params": {"core": "aaaaabbbbb", "left": "a", "right": "a", "z0": [0.0, 0.5],
                   "steps": 10, "resolution": 17, "delta": 0.25},
    },
}
PIPELINES = tuple(PIPELINE_DEFAULTS)
SYSTEM_KEYS = {"name", "coupling", "mu"}
PATH_KEYS = {"z0", "durations", "generators"}
GENERATOR_KEYS = {"kind", "center", "coeffs", "scale", "offset", "period", "label"}


# ---------------------------------------------------------------------------
# Config handling


def _fail(msg):
    raise ConfigError(msg)


def _check_eps(eps):
    if not isinstance(eps, list) or not eps:
        _fail("eps must be a nonempty list")
    for e in eps:
        if not isinstance(e, (int, float)) or isinstance(e, bool) or not math.isfinite(e) or e <= 0:
            _fail(f"eps values must be positive numbers, got {e!r}")


def validate_config(raw: dict, pipeline: str = None) -> dict:
    """Merge ``raw`` over the pipeline defaults, rejecting unknown keys."""
    if not isinstance(raw, dict):
        _fail("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        _fail(f"unknown config keys: {sorted(unknown)}")
    if raw.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        _fail(f"unsupported schema version {raw.get('schema')!r}")
    name = raw.get("pipeline", pipeline)
    if pipeline is not None and name != pipeline:
        _fail(f"config names pipeline {name!r} but {pipeline!r} was requested")
    if name not in PIPELINE_DEFAULTS:
        _fail(f"unknown pipeline {name!r}; choose from {', '.join(PIPELINES)}")
    cfg = copy.deepcopy(PIPELINE_DEFAULTS[name])
    cfg.setdefault("params", {})
    for key, val in raw.items():
        if key == "params":
            if not isinstance(val, dict):
                _fail("params must be an object")
            bad = set(val) - set(cfg["params"])
            if bad:
                _fail(f"unknown params for {name}: {sorted(bad)}")
            cfg["params"].update(val)
        else:
            cfg[key] = copy.deepcopy(val)
    cfg["pipeline"] = name
    cfg["schema"] = SCHEMA_VERSION
    cfg.setdefault("seed", 0)
    cfg.setdefault("output", "out")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        _fail("seed must be an integer")
    if "eps" in cfg:
        _check_eps(cfg["eps"])
    if "domain" in cfg:
        try:
            domain_from_spec(cfg["domain"])
        except (KeyError, ValueError, TypeError) as exc:
            _fail(f"bad domain: {exc}")
    if "model" in cfg:
        m = cfg["model"]
        if not isinstance(m, dict) or m.get("name") not in BUILTIN_MODELS:
            _fail(f"model.name must be one of {sorted(BUILTIN_MODELS)}")
    if "system" in cfg:
        s = cfg["system"]
        if not isinstance(s, dict) or set(s) - SYSTEM_KEYS or s.get("name") != "synthetic":
            _fail("system must be {'name': 'synthetic', 'coupling': ..., 'mu': ...}")
    if "path" in cfg:
        p = cfg["path"]
        if not isinstance(p, dict) or set(p) - PATH_KEYS or set(p) != PATH_KEYS:
            _fail(f"path needs exactly the keys {sorted(PATH_KEYS)}")
        if any((not isinstance(d, (int, float))) or d <= 0 for d in p["durations"]):
            _fail("path durations must be positive")
    if "generators" in cfg:
        for g in cfg["generators"]:
            if not isinstance(g, dict) or set(g) - GENERATOR_KEYS or g.get("kind") not in ("quadratic", "linear"):
                _fail(f"bad generator spec {g!r}")
    return cfg


def load_config(path, pipeline: str = None) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        _fail(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        _fail(f"config is not valid JSON: {exc}")
    return validate_config(raw, pipeline)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Artifacts


@dataclass
class Check:
    name: str
    passed: bool
    measured: str


@dataclass
class RunArtifacts:
    out_dir: Path
    files: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def add(self, name: str, role: str) -> Path:
        self.files.append((name, role))
        return self.out_dir / name

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _g(x) -> str:
    return f"{float(x):.17g}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for r in rows:
            out.writerow([_g(v) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# Scenario assembly


def build_model(spec: dict):
    spec = dict(spec)
    name = spec.pop("name")
    kwargs = {}
    for key, val in spec.items():
        if name == "oscillator" and key in ("omega", "energy") and isinstance(val, list):
            kwargs[key] = Field.affine(*val)
        else:
            kwargs[key] = val
    try:
        return BUILTIN_MODELS[name](**kwargs)
    except TypeError as exc:
        _fail(f"bad parameters for model {name!r}: {exc}")


def build_generators(specs, domain):
    gens = []
    for n, g in enumerate(specs):
        label = g.get("label", f"J{n}")
        period = g.get("period", 1.0)
        if g["kind"] == "quadratic":
            gens.append(AnalyticGenerator.quadratic(label, g["center"], domain, g.get("scale", 1.0), period))
        else:
            gens.append(AnalyticGenerator.linear(label, g["coeffs"], domain, g.get("offset", 0.0), period))
    return SlowGeneratorSet(gens)


def build_scenario(cfg: dict):
    s = cfg.get("system", {})
    kw = {k: s[k] for k in ("coupling", "mu") if k in s}
    if "path" in cfg:
        p = cfg["path"]
        kw.update(z0=p["z0"], durations=p["durations"], segments=p["generators"])
    if "delta" in cfg["params"]:
        kw["delta"] = cfg["params"]["delta"]
    return synthetic_scenario(**kw)


def _reference_orbit(model, z, cfg=None):
    ref = model.metadata["reference"]
    return find_periodic_orbit(model, z, ref["orbit"](z), ref["period"](z), cfg)


# ---------------------------------------------------------------------------
# Pipelines


def _p_action_identity(cfg, art):
    prm = cfg["params"]
    model = build_model(cfg["model"])
    dom = domain_from_spec(cfg["domain"])
    lo, hi = dom.bounding_box()
    rng = np.random.default_rng(cfg["seed"])
    h = prm["fd_step"]
    rows = []
    worst = 0.0
    for _ in range(prm["samples"]):
        # keep the difference stencil inside D
        z = lo + h + (hi - lo - 2 * h) * rng.random(lo.size)
        orb = _reference_orbit(model, z)
        gv, gu = action_gradient(model, orb)
        grad = np.concatenate([gv, gu])
        fd = np.empty_like(grad)
        for j in range(z.size):
            dz = np.zeros_like(z)
            dz[j] = h
            fd[j] = (action(_reference_orbit(model, z + dz)) - action(_reference_orbit(model, z - dz))) / (2 * h)
        rel = float(np.linalg.norm(grad - fd) / np.linalg.norm(fd))
        worst = max(worst, rel)
        rows.append([*z, action(orb), *grad, *fd, rel])
    _write_rows(art.add("action_identity.csv", "gradient vs finite differences"),
                ["v", "u", "J", "dJdv", "dJdu", "fd_v", "fd_u", "rel_error"], rows)
    art.checks.append(Check("action gradient identity", worst <= prm["tolerance"], f"max rel err {worst:.3e}"))


def _p_floquet(cfg, art):
    from .model import builtin_saddle_oscillator

    prm = cfg["params"]
    z = np.asarray(prm["z"], dtype=float)
    rows = []
    worst = 0.0
    for lam in prm["lambdas"]:
        model = builtin_saddle_oscillator(lam=lam)
        orb = _reference_orbit(model, z)
        fl = floquet(model, orb)
        mult = np.sort(np.abs(fl.nontrivial()))
        exact = np.sort([math.exp(-lam * orb.period), math.exp(lam * orb.period)])
        rel = float(np.max(np.abs(mult - exact) / exact))
        worst = max(worst, rel)
        rows.append([lam, orb.period, mult[0], mult[1], exact[0], exact[1], rel])
    _write_rows(art.add("floquet.csv", "multipliers vs exp(+-lambda T)"),
                ["lambda", "T", "mu_small", "mu_large", "exact_small", "exact_large", "rel_error"], rows)
    art.checks.append(Check("Floquet multipliers", worst <= prm["tolerance"], f"max rel err {worst:.3e}"))


def _p_lemma_stab(cfg, art):
    prm = cfg["params"]
    model = build_model(cfg["model"])
    dom = domain_from_spec(cfg["domain"])
    gen = reference_generator(model, dom)
    orb = _reference_orbit(model, np.asarray(prm["z0"], dtype=float))
    eps = sorted(cfg["eps"], reverse=True)
    reps = [track_slow_component(model, gen, orb, e, prm["tau0"]) for e in eps]
    rows = [[r.eps, r.max_error, r.C2, r.max_orbit_distance, r.C1] for r in reps]
    _write_rows(art.add("lemma_stab.csv", "slow tracking error per eps"),
                ["eps", "max_error", "C2", "orbit_distance", "C1"], rows)
    lo, hi = prm["ratio_bounds"]
    for a, b in zip(reps, reps[1:]):
        ratio = a.max_error / b.max_error
        art.checks.append(Check(f"tracking scaling {a.eps:g}->{b.eps:g}", lo <= ratio <= hi,
                                f"ratio {ratio:.4f}, C2 {a.C2:.4f}/{b.C2:.4f}"))


def _p_horseshoe_lemmas(cfg, art):
    prm = cfg["params"]
    sc = build_scenario(cfg)
    sys_ = sc.system
    z = np.asarray(prm["z"], dtype=float)
    rng = np.random.default_rng(cfg["seed"])

    lam_hat, ok = check_contraction(sys_, seed=cfg["seed"])
    art.checks.append(Check("contraction", ok, f"lambda_hat {lam_hat:.6g} <= {sys_.lam}"))

    orb = orbit_for_code(sys_, Code("abbab", "a", "b"), z)
    fmax = float(np.max(orb.factors)) if orb.factors.size else 0.0
    art.checks.append(Check("orbit_for_code residual", orb.residual <= 1e-12, f"{orb.residual:.3e}"))
    art.checks.append(Check("orbit_for_code rate", fmax <= lam_hat + 1e-3, f"factor {fmax:.6f}"))

    rows = []
    violations = 0
    for trial in range(prm["pairs"]):
        n = int(rng.integers(1, prm["max_block"] + 1))
        block = "".join(rng.choice(["a", "b"], 2 * n + 1))
        words = ["".join(rng.choice(["a", "b"], 6)) for _ in range(4)]
        c1 = Code(block + words[0], words[1], words[0], offset=-n)
        c2 = Code(block + words[2], words[3], words[2], offset=-n)
        rep = mix_check(sys_, c1, c2, n, z)
        violations += rep.violations
        rows.append([trial, n, float(np.max(rep.ratios)), rep.violations])
    _write_rows(art.add("mix.csv", "mix estimate per code pair"), ["trial", "n", "max_ratio", "violations"], rows)
    art.checks.append(Check("mix estimate", violations == 0, f"{violations} violations in {prm['pairs']} pairs"))

    msys = mollify(sys_, prm["delta"])
    code = Code("aaaabbbbaaab", "a", "b")
    window = code.default_window(20)
    base = invariant_surfaces(msys, code, 0.0, window=window, resolution=prm["resolution"])
    srows = []
    consts = []
    for e in sorted(cfg["eps"], reverse=True)[:2]:
        fam = invariant_surfaces(msys, code, e, window=window, resolution=prm["resolution"])
        dev = max(float(np.max(np.abs(fam.X - base.X))), float(np.max(np.abs(fam.Y - base.Y))))
        consts.append(dev / e)
        srows.append([e, fam.residual, dev, dev / e, fam.sweeps])
        art.checks.append(Check(f"surface invariance eps={e:g}", fam.residual <= 1e-8, f"{fam.residual:.3e}"))
    _write_rows(art.add("surfaces.csv", "surface residual and deviation per eps"),
                ["eps", "residual", "deviation", "deviation_over_eps", "sweeps"], srows)
    lo, hi = prm["surface_ratio_bounds"]
    if len(consts) == 2:
        r = consts[0] / consts[1]
        art.checks.append(Check("surface O(eps) scaling", lo <= r <= hi, f"ratio {r:.4f}"))

    k1 = [block_constant(msys, e, z, prm["t0"], prm["k0"], prm["lead"], prm["resolution"])
          for e in sorted(cfg["eps"], reverse=True)]
    _write_rows(art.add("block_compare.csv", "measured K1 per eps"), ["eps", "K1"],
                [[e, k] for e, k in zip(sorted(cfg["eps"], reverse=True), k1)])
    spread = max(k1) / min(k1)
    art.checks.append(Check("block closeness K1", spread <= prm["k1_spread"], f"max/min {spread:.4f}"))


def _p_theorem1(cfg, art):
    prm = cfg["params"]
    sc = build_scenario(cfg)
    res = verify_theorem1(sc.system, sc.generators, sc.path, cfg["eps"], sc.codes, delta=sc.delta,
                          resolution=prm["resolution"], window_width=prm["window"],
                          bounds=tuple(prm["ratio_bounds"]))
    for r in res.reports:
        r.to_csv(art.add(f"shadow_eps_{r.eps:g}.csv", f"drift vs path at eps={r.eps:g}"))
    rows = [[e, m, c, end, ratio] for e, m, c, end, ratio in res.summary_rows()]
    _write_rows(art.add("theorem1.csv", "per-eps shadowing errors"),
                ["eps", "max_error", "error_over_eps", "endpoint_error", "scaling_ratio"], rows)
    C0 = res.C0
    art.checks.append(Check("shadowing scaling", not res.scaling_violation,
                            "ratios " + ", ".join(f"{r:.4f}" for r in res.ratios)))
    for r in res.reports:
        art.checks.append(Check(f"endpoint within C0 eps (eps={r.eps:g})", res.endpoint_ok(r),
                                f"C0 {C0:.4f}, endpoint/eps {r.endpoint_error / r.eps:.4f}"))


def _p_orbit_find(cfg, art):
    prm = cfg["params"]
    model = build_model(cfg["model"])
    z = np.asarray(prm["z"], dtype=float)
    ref = model.metadata.get("reference", {})
    guess = prm["guess"] if prm["guess"] is not None else ref["orbit"](z)
    period = prm["period"] if prm["period"] is not None else ref["period"](z)
    orb = find_periodic_orbit(model, z, np.asarray(guess, dtype=float), period,
                              OrbitConfig(samples=prm["samples"]))
    fl = floquet(model, orb)
    m = model.dims.fast_dof
    _write_rows(art.add("orbit.csv", "orbit samples"),
                ["t"] + [f"p{j}" for j in range(m)] + [f"q{j}" for j in range(m)],
                [[t, *w] for t, w in zip(orb.times, orb.samples)])
    mults = np.abs(fl.multipliers)
    _write_rows(art.add("orbit_summary.csv", "period, action, multipliers"),
                ["period", "action", "closure_residual"] + [f"abs_mu{j}" for j in range(mults.size)],
                [[orb.period, action(orb), orb.closure_residual, *mults]])
    art.checks.append(Check("orbit closure", orb.closure_residual <= 1e-8, f"{orb.closure_residual:.3e}"))


def _p_action_map(cfg, art):
    prm = cfg["params"]
    model = build_model(cfg["model"])
    dom = domain_from_spec(cfg["domain"])
    lo, hi = dom.bounding_box()
    z = np.asarray(prm["seed_z"], dtype=float) if prm["seed_z"] is not None else (lo + hi) / 2
    seed = _reference_orbit(model, z)
    fld = build_action_field(model, seed, dom, prm["resolution"], label=model.name)
    fld.to_csv(art.add("action_field.csv", "action, period and gradient on the grid"))
    art.checks.append(Check("action field complete", bool(np.all(np.isfinite(fld.J))), "all nodes solved"))


def _p_slow_flow(cfg, art):
    prm = cfg["params"]
    dom = domain_from_spec(cfg["domain"])
    gens = build_generators(cfg["generators"], dom)
    gen = gens[prm["generator"]]
    sol = slow_trajectory(gen, prm["z0"], prm["tau"])
    taus = np.linspace(0.0, prm["tau"], prm["samples"])
    zs = sol(taus).T
    J = gen.value(zs)
    _write_rows(art.add("slow_flow.csv", "slow flow samples"), ["tau", "v", "u", "J"],
                [[t, *zz, j] for t, zz, j in zip(taus, zs, J)])
    drift = float(np.max(np.abs(J - J[0])))
    art.checks.append(Check("action conserved along its flow", drift <= 1e-8, f"{drift:.3e}"))


def _p_path_plan(cfg, art):
    prm = cfg["params"]
    dom = domain_from_spec(cfg["domain"])
    gens = build_generators(cfg["generators"], dom)
    path = plan_level_lines(gens[0], gens[1], prm["z0"], prm["z1"], levels=prm["levels"], tol=prm["tol"])
    path = path_validate(path, gens)
    path.to_csv(art.add("path.csv", "planned accessible path"))
    miss = float(np.linalg.norm(np.asarray(path.points[-1]) - np.asarray(prm["z1"])))
    art.checks.append(Check("path reaches target", miss <= prm["tol"], f"miss {miss:.3e}"))


def _p_drift_run(cfg, art):
    prm = cfg["params"]
    sc = build_scenario(cfg)
    msys = mollify(sc.system, prm["delta"])
    code = Code(prm["core"], prm["left"], prm["right"])
    eps = cfg["eps"][0]
    fam = invariant_surfaces(msys, code, eps, resolution=prm["resolution"])
    traj = drift_run(msys, code, prm["z0"], eps, prm["steps"], surfaces=fam)
    traj.to_csv(art.add("drift.csv", "drift iterates"))
    replay = float(np.max(np.abs(traj.replay(msys) - traj.z)))
    art.checks.append(Check("drift replay", replay == 0.0, f"{replay:.3e}"))
    art.checks.append(Check("drift stays in D", not traj.exited, f"steps {traj.steps}"))


RUNNERS = {
    "action_identity": _p_action_identity,
    "floquet": _p_floquet,
    "lemma_stab": _p_lemma_stab,
    "horseshoe_lemmas": _p_horseshoe_lemmas,
    "theorem1": _p_theorem1,
    "orbit_find": _p_orbit_find,
    "action_map": _p_action_map,
    "slow_flow": _p_slow_flow,
    "path_plan": _p_path_plan,
    "drift_run": _p_drift_run,
}


def run_experiment(cfg: dict, out_dir=None) -> RunArtifacts:
    """Execute ``cfg["pipeline"]`` and write its outputs."""
    out = Path(out_dir or cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(out)
    started = time.time()
    RUNNERS[cfg["pipeline"]](cfg, art)
    _write_rows(art.add("summary.csv", "check results"), ["check", "passed", "measured"],
                [[c.name, int(c.passed), c.measured] for c in art.checks])
    art.manifest = {
        "pipeline": cfg["pipeline"],
        "config_hash": config_hash(cfg),
        "version": __version__,
        "started": started,
        "finished": time.time(),
        "files": [{"name": n, "role": r} for n, r in art.files],
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(art.manifest, fh, indent=2, sort_keys=True)
    return art


def emit_summary(art: RunArtifacts, stream=None) -> int:
    """Print one line per check; return 0 if all pass, else 1."""
    stream = stream or sys.stdout
    for name, _ in art.files:
        if not (art.out_dir / name).exists():
            raise OSError(f"missing artifact {name}")
    if art.checks:
        width = max(len(c.name) for c in art.checks)
        for c in art.checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.measured}", file=stream)
    return 0 if art.passed else 1


# ---------------------------------------------------------------------------
# Entry point


SUBCOMMANDS = {
    ("orbit", "find"): "orbit_find",
    ("action", "map"): "action_map",
    ("slow", "flow"): "slow_flow",
    ("path", "plan"): "path_plan",
    ("horseshoe", "verify"): "horseshoe_lemmas",
    ("drift", "run"): "drift_run",
    ("theorem1",): "theorem1",
}


def _common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--eps", help="comma separated eps list")
    p.add_argument("--seed", type=int, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowdrift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"slowdrift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    groups = {}
    for words, pipeline in SUBCOMMANDS.items():
        if len(words) == 1:
            p = sub.add_parser(words[0], help=f"run the {pipeline} pipeline")
            p.set_defaults(pipeline=pipeline)
            _common(p)
            continue
        if words[0] not in groups:
            g = sub.add_parser(words[0])
            groups[words[0]] = g.add_subparsers(dest="action", required=True)
        p = groups[words[0]].add_parser(words[1], help=f"run the {pipeline} pipeline")
        p.set_defaults(pipeline=pipeline)
        _common(p)
    p = sub.add_parser("run", help="run the pipeline named in the config")
    p.add_argument("name", nargs="?", choices=PIPELINES, help="pipeline (default: from config)")
    p.set_defaults(pipeline=None)
    _common(p)
    return parser


def _parse_eps(text: str):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        _fail(f"cannot parse eps list {text!r}")
    _check_eps(vals)
    return vals


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    pipeline = args.pipeline or getattr(args, "name", None)
    try:
        if args.config:
            cfg = load_config(args.config, pipeline)
        else:
            if pipeline is None:
                _fail("run needs a pipeline name or a config naming one")
            cfg = validate_config({}, pipeline)
        if args.eps:
            cfg["eps"] = _parse_eps(args.eps)
        if args.seed is not None:
            cfg["seed"] = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        art = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SlowDriftError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return emit_summary(art)


if __name__ == "__main__":
    sys.exit(main())
