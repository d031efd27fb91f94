import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowdrift.errors import (DimensionError, DomainError, DomainExit, NonIncreasingBreakpoints,
                              NotAccessible, SegmentExit)
from slowdrift.model import Ball, Box, Field, builtin_oscillator
from slowdrift.orbit import find_periodic_orbit
from slowdrift.slowdrive import (AccessiblePath, AnalyticGenerator, PathFunction, exit_time,
                                 path_eval, path_validate, plan_level_lines, reference_generator,
                                 slow_flow, slow_vector_field, track_slow_component)

DISK = Ball([0.0, 0.0], 1.0)
BIG = Box([-3.0, -3.0], [3.0, 3.0])


@pytest.fixture(scope="module")
def rotation(oscillator):
    return reference_generator(oscillator, BIG)


@pytest.fixture(scope="module")
def planner_gens():
    dom = Box([-2.0, -2.0], [2.5, 2.0])
    return (AnalyticGenerator.quadratic("J_a", [0.0, 0.0], dom),
            AnalyticGenerator.quadratic("J_b", [1.0, 0.0], dom))


def test_slow_field_of_oscillator(rotation):
    assert np.allclose(slow_vector_field(rotation, [1.0, 0.0]), [0.0, -1.0], atol=1e-12)
    assert np.allclose(slow_vector_field(rotation, [0.0, 0.0]), 0.0)
    flat = AnalyticGenerator.linear("const", [0.0, 0.0], DISK, offset=3.0)
    assert np.all(slow_vector_field(flat, [0.2, 0.3]) == 0.0)
    with pytest.raises(DomainError):
        slow_vector_field(rotation, [5.0, 0.0])


def test_slow_field_from_action_field_matches_stored_gradient(oscillator):
    from slowdrift.orbit import ActionField

    axes = [np.linspace(-1, 1, 5)] * 2
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    ref = oscillator.metadata["reference"]
    G = np.apply_along_axis(ref["gradient"], -1, Z)
    fld = ActionField("osc", Box([-1, -1], [1, 1]), axes, np.apply_along_axis(ref["action"], -1, Z),
                      np.full(Z.shape[:-1], 2 * np.pi), G[..., :1], G[..., 1:])
    # D is open, so only interior nodes
    for z, g in zip(Z[1:-1, 1:-1].reshape(-1, 2), G[1:-1, 1:-1].reshape(-1, 2)):
        assert np.allclose(slow_vector_field(fld, z), np.array([g[1], -g[0]]) / (2 * np.pi), rtol=0, atol=1e-14)


def test_rotation_quarter_turn(rotation):
    assert np.allclose(slow_flow(rotation, [1.0, 0.0], np.pi / 2), [0.0, -1.0], atol=1e-8)
    assert np.array_equal(slow_flow(rotation, [0.4, 0.1], 0.0), [0.4, 0.1])


def test_action_is_conserved(rotation, planner_gens):
    for gen in (rotation,) + planner_gens:
        z0 = np.array([0.5, 0.2])
        J0 = gen.value(z0)
        for tau in np.linspace(0.5, 10.0, 6):
            assert abs(gen.value(slow_flow(gen, z0, tau)) - J0) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_semigroup(t1, t2, v, u):
    gen = AnalyticGenerator.quadratic("J_b", [1.0, 0.0], BIG)
    z = np.array([v, u])
    once = slow_flow(gen, z, t1 + t2)
    twice = slow_flow(gen, slow_flow(gen, z, t1), t2)
    assert np.allclose(once, twice, atol=1e-8)


def test_exit_times(rotation):
    line = AnalyticGenerator.linear("J=u", [0.0, 1.0], DISK)
    assert float(exit_time(line, [0.0, 0.0])) == pytest.approx(1.0, abs=1e-9)
    assert float(exit_time(line, [-0.5, 0.0])) == pytest.approx(1.5, abs=1e-9)
    circ = exit_time(reference_generator(builtin_oscillator(), DISK), [0.5, 0.0], tau_max=50.0)
    assert circ.infinite and float(circ) == np.inf
    with pytest.raises(DomainError):
        exit_time(line, [2.0, 0.0])


def test_flow_leaving_domain_reports_exit_time():
    line = AnalyticGenerator.linear("J=u", [0.0, 1.0], DISK)
    with pytest.raises(DomainExit) as info:
        slow_flow(line, [0.0, 0.0], 2.0)
    assert info.value.tau_exit == pytest.approx(1.0, abs=1e-9)


def test_path_validation():
    line = AnalyticGenerator.linear("J=u", [0.0, 1.0], DISK)
    up = AnalyticGenerator.linear("J=-v", [-1.0, 0.0], DISK)
    gens = [line, up]
    ok = path_validate(AccessiblePath.from_durations([0.0, 0.0], [0.5], [0]), gens)
    assert np.allclose(ok.points[-1], [0.5, 0.0])
    with pytest.raises(SegmentExit) as info:
        path_validate(AccessiblePath.from_durations([0.0, 0.0], [0.3, 1.5], [0, 1]), gens)
    assert info.value.segment == 1
    with pytest.raises(NonIncreasingBreakpoints):
        path_validate(AccessiblePath([0.0, 0.0], (0.0, 0.5, 0.5), (0, 1)), gens)
    two = path_validate(AccessiblePath.from_durations([0.0, 0.0], [0.3, 0.4], [0, 1]), gens)
    assert np.allclose(two.points[1], slow_flow(line, [0.0, 0.0], 0.3), atol=1e-10)


def test_path_eval(rotation):
    path = path_validate(AccessiblePath.from_durations([1.0, 0.0], [np.pi / 2, 1.0], [0, 0]), [rotation])
    assert np.array_equal(path_eval(path, [rotation], 0.0), [1.0, 0.0])
    assert np.array_equal(path_eval(path, [rotation], np.pi / 2), path.points[1])
    assert np.allclose(path_eval(path, [rotation], np.pi / 2), [0.0, -1.0], atol=1e-8)
    with pytest.raises(ValueError):
        path_eval(path, [rotation], 10.0)
    gamma = PathFunction(path, [rotation])
    taus = np.array([0.0, 0.3, np.pi / 2, 2.0])
    assert np.allclose(gamma(taus), [path_eval(path, [rotation], t) for t in taus], atol=1e-9)


def test_planner_reaches_target(planner_gens):
    ja, jb = planner_gens
    path = plan_level_lines(ja, jb, [0.5, 0.0], [0.5, 0.3])
    path = path_validate(path, [ja, jb])
    assert np.linalg.norm(path_eval(path, [ja, jb], path.duration) - [0.5, 0.3]) <= 1e-6


def test_planner_obstruction():
    dom = Box([-2.0, -2.0], [2.5, 2.0])
    ja = AnalyticGenerator.quadratic("J_a", [0.0, 0.0], dom)
    jc = AnalyticGenerator.quadratic("J_c", [0.0, 0.0], dom, scale=2.0)
    with pytest.raises(NotAccessible):
        plan_level_lines(ja, jc, [0.5, 0.0], [0.8, 0.0])


def test_planner_trivial_and_dimension_cases(planner_gens):
    ja, jb = planner_gens
    path = plan_level_lines(ja, jb, [0.5, 0.0], [0.5, 0.0])
    assert path.n_segments == 0 and path.duration == 0.0
    box4 = Box([-1.0] * 4, [1.0] * 4)
    g4 = AnalyticGenerator.quadratic("J", np.zeros(4), box4)
    with pytest.raises(DimensionError):
        plan_level_lines(g4, g4, np.zeros(4), np.full(4, 0.1))


def test_tracking_error_scales_with_eps():
    model = builtin_oscillator(omega=Field.affine(1.0, 0.1, 0.3))
    gen = reference_generator(model, BIG)
    z = np.array([0.3, 0.2])
    ref = model.metadata["reference"]
    orb = find_periodic_orbit(model, z, ref["orbit"](z), ref["period"](z))
    reps = [track_slow_component(model, gen, orb, eps, tau0=0.5) for eps in (2e-2, 1e-2)]
    assert 1.5 <= reps[0].max_error / reps[1].max_error <= 3.0
    assert reps[1].max_orbit_distance <= 1e-6
