"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every test measures wall time and fails if the stated budget is exceeded.
Run with ``pytest tests/test_acceptance.py -v`` to see the report lines.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from slowdrift.cli import PIPELINES, run_experiment, validate_config
from slowdrift.errors import NotAccessible
from slowdrift.horseshoe import (Code, check_contraction, invariant_surfaces, mix_check, mollify,
                                 orbit_for_code)
from slowdrift.model import Box
from slowdrift.scenarios import synthetic_scenario
from slowdrift.shadow import block_constant
from slowdrift.slowdrive import AnalyticGenerator, path_eval, path_validate, plan_level_lines

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    """Print ``PASS/FAIL  #n  name  measured  (elapsed/limit)`` and assert."""
    def emit(n, name, passed, measured, elapsed, limit):
        ok = passed and elapsed <= limit
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  #{n:<2} {name}: {measured}  ({elapsed:.1f}s / {limit:g}s)")
        assert passed, measured
        assert elapsed <= limit, f"took {elapsed:.1f}s, budget {limit:g}s"
    return emit


def _checks(pipeline, out, **raw):
    art = run_experiment(validate_config({"pipeline": pipeline, **raw}), out)
    return art.checks


def _measured(checks):
    return "; ".join(f"{c.name}: {c.measured}" for c in checks)


@pytest.fixture(scope="module")
def sc():
    return synthetic_scenario()


def test_1_action_gradient_identity(tmp_path, report):
    t = time.perf_counter()
    checks = _checks("action_identity", tmp_path)
    report(1, "action gradient identity", all(c.passed for c in checks), _measured(checks),
           time.perf_counter() - t, 10)


def test_2_floquet_multipliers(tmp_path, report):
    t = time.perf_counter()
    checks = _checks("floquet", tmp_path)
    report(2, "Floquet multipliers", all(c.passed for c in checks), _measured(checks),
           time.perf_counter() - t, 10)


def test_3_slow_tracking(tmp_path, report):
    t = time.perf_counter()
    checks = _checks("lemma_stab", tmp_path)
    report(3, "slow tracking O(eps)", all(c.passed for c in checks), _measured(checks),
           time.perf_counter() - t, 120)


def test_4_contraction_solver(sc, report):
    t = time.perf_counter()
    lam_hat, ok = check_contraction(sc.system)
    orb = orbit_for_code(sc.system, Code("abbab", "a", "b"), [0.3, 0.1])
    factor = float(np.max(orb.factors))
    passed = ok and orb.residual <= 1e-12 and factor <= sc.system.lam + 1e-3
    report(4, "contraction solver", passed,
           f"residual {orb.residual:.2e}, factor {factor:.6f}, lambda_hat {lam_hat:.6f}",
           time.perf_counter() - t, 5)


def test_5_mix_estimate(sc, report):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    violations = 0
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        block = "".join(rng.choice(["a", "b"], 2 * n + 1))
        w = ["".join(rng.choice(["a", "b"], 6)) for _ in range(4)]
        rep = mix_check(sc.system, Code(block + w[0], w[1], w[0], offset=-n),
                        Code(block + w[2], w[3], w[2], offset=-n), n, [0.3, 0.1])
        violations += rep.violations
        worst = max(worst, float(np.max(rep.ratios)))
    report(5, "mix estimate", violations == 0, f"{violations} violations, max measured/bound {worst:.4f}",
           time.perf_counter() - t, 30)


def test_6_invariant_surfaces(sc, report):
    t = time.perf_counter()
    msys = mollify(sc.system, sc.delta)
    code = Code("aaaabbbbaaab", "a", "b")
    window = code.default_window(20)
    base = invariant_surfaces(msys, code, 0.0, window=window, resolution=17)
    residuals, consts = [], []
    for eps in (1e-2, 5e-3):
        fam = invariant_surfaces(msys, code, eps, window=window, resolution=17)
        dev = max(np.max(np.abs(fam.X - base.X)), np.max(np.abs(fam.Y - base.Y)))
        residuals.append(fam.residual)
        consts.append(dev / eps)
    ratio = consts[0] / consts[1]
    passed = max(residuals) <= 1e-8 and 0.5 <= ratio <= 2
    report(6, "invariant surfaces", passed,
           f"residuals {residuals[0]:.2e}/{residuals[1]:.2e}, deviation/eps ratio {ratio:.4f}",
           time.perf_counter() - t, 120)


def test_7_block_closeness(sc, report):
    t = time.perf_counter()
    msys = mollify(sc.system, sc.delta)
    k1 = [block_constant(msys, eps, [0.3, 0.1]) for eps in (1e-2, 5e-3, 2.5e-3)]
    spread = max(k1) / min(k1)
    report(7, "block closeness K1", spread <= 2,
           "K1 " + ", ".join(f"{k:.4f}" for k in k1) + f", max/min {spread:.4f}",
           time.perf_counter() - t, 120)


def test_8_shadowing_end_to_end(tmp_path, report):
    t = time.perf_counter()
    checks = _checks("theorem1", tmp_path)
    report(8, "shadowing end to end", all(c.passed for c in checks), _measured(checks),
           time.perf_counter() - t, 300)


def test_9_level_line_planner(report):
    t = time.perf_counter()
    dom = Box([-2.0, -2.0], [2.5, 2.0])
    gens = [AnalyticGenerator.quadratic("J_a", [0.0, 0.0], dom),
            AnalyticGenerator.quadratic("J_b", [1.0, 0.0], dom)]
    misses = []
    for z0, z1 in [([0.5, 0.0], [0.5, 0.3]), ([0.0, 0.5], [1.2, -0.4]), ([-0.8, 0.2], [0.3, 0.9])]:
        path = path_validate(plan_level_lines(*gens, z0, z1), gens)
        misses.append(float(np.linalg.norm(path_eval(path, gens, path.duration) - z1)))
    doubled = AnalyticGenerator.quadratic("J_c", [0.0, 0.0], dom, scale=2.0)
    try:
        plan_level_lines(gens[0], doubled, [0.5, 0.0], [0.8, 0.0])
        blocked = False
    except NotAccessible:
        blocked = True
    report(9, "level-line planner", max(misses) <= 1e-6 and blocked,
           f"max miss {max(misses):.2e}, obstruction {'NotAccessible' if blocked else 'not detected'}",
           time.perf_counter() - t, 60)


def _csv_bytes(out: Path):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_10_determinism(tmp_path, report):
    t = time.perf_counter()
    differing = []
    for name in PIPELINES:
        cfg = validate_config({"pipeline": name})
        run_experiment(cfg, tmp_path / name / "a")
        run_experiment(cfg, tmp_path / name / "b")
        first, second = _csv_bytes(tmp_path / name / "a"), _csv_bytes(tmp_path / name / "b")
        if not first or first != second:
            differing.append(name)
    report(10, "determinism", not differing,
           f"{len(PIPELINES) - len(differing)}/{len(PIPELINES)} pipelines byte-identical"
           + (f"; differing: {', '.join(differing)}" if differing else ""),
           time.perf_counter() - t, 600)
