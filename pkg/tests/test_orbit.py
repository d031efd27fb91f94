import numpy as np
import pytest

from slowdrift.errors import AccuracyError, ContinuationBreakdown, NoConvergence
from slowdrift.model import Box, Field, builtin_oscillator, builtin_perturbative
from slowdrift.orbit import (ActionField, OrbitConfig, PeriodicOrbit, action, action_gradient,
                             build_action_field, find_periodic_orbit, floquet, perturbative_action)


def _ref_orbit(model, z):
    ref = model.metadata["reference"]
    z = np.asarray(z, dtype=float)
    return find_periodic_orbit(model, z, ref["orbit"](z), ref["period"](z))


def test_oscillator_orbit_from_rough_guess(oscillator):
    orb = find_periodic_orbit(oscillator, [0.0, 0.0], np.array([1.5, 0.0]), 6.0)
    assert orb.period == pytest.approx(2 * np.pi, abs=1e-10)
    r2 = orb.samples[:, 0] ** 2 + orb.samples[:, 1] ** 2
    assert np.max(np.abs(r2 - 2.0)) <= 1e-9
    assert orb.closure_residual <= 1e-10
    assert orb.energy_residual <= 1e-9


def test_saddle_orbit_lies_on_subsystem(saddle):
    orb = _ref_orbit(saddle, [0.0, 0.0])
    assert orb.period == pytest.approx(2 * np.pi, abs=1e-10)
    assert np.max(np.abs(orb.samples[:, [0, 2]])) <= 1e-10


def test_far_guess_does_not_converge(oscillator):
    with pytest.raises(NoConvergence):
        find_periodic_orbit(oscillator, [0.0, 0.0], np.array([100.0, 0.0]), 6.0)


def test_floquet_of_elliptic_orbit(oscillator):
    fl = floquet(oscillator, _ref_orbit(oscillator, [0.2, 0.1]))
    assert np.allclose(fl.multipliers, [1.0, 1.0], atol=1e-6)
    assert not fl.hyperbolic
    assert abs(np.prod(fl.multipliers) - 1.0) <= 1e-6


def test_floquet_of_saddle_orbit(saddle):
    fl = floquet(saddle, _ref_orbit(saddle, [0.0, 0.0]))
    mags = np.sort(np.abs(fl.multipliers))
    assert mags[0] == pytest.approx(np.exp(-np.pi), rel=1e-6)
    assert mags[-1] == pytest.approx(np.exp(np.pi), rel=1e-6)
    assert np.allclose(fl.trivial_pair(), 1.0, atol=1e-6)
    assert fl.hyperbolic
    assert abs(np.prod(fl.multipliers) - 1.0) <= 1e-6


def test_weak_saddle_is_nearly_degenerate():
    from slowdrift.model import builtin_saddle_oscillator

    model = builtin_saddle_oscillator(lam=1e-5)
    fl = floquet(model, _ref_orbit(model, [0.0, 0.0]))
    assert np.allclose(np.abs(fl.multipliers), 1.0, atol=1e-3)
    assert not fl.hyperbolic


@pytest.mark.parametrize("z, expected", [((0.0, 0.0), 2 * np.pi), ((1.0, 0.0), 3 * np.pi)])
def test_action_closed_form(oscillator, z, expected):
    assert action(_ref_orbit(oscillator, z)) == pytest.approx(expected, abs=1e-8)


def test_zero_amplitude_orbit_has_zero_action():
    n = 256
    orb = PeriodicOrbit(np.zeros(2), 2 * np.pi, np.zeros(2), np.linspace(0, 2 * np.pi, n, endpoint=False),
                        np.zeros((n, 2)), np.zeros((n, 2)), 0.0, 0.0)
    assert action(orb) == 0.0


def test_action_needs_enough_samples(oscillator):
    orb = find_periodic_orbit(oscillator, [0.0, 0.0], np.array([1.4, 0.0]), 6.2, OrbitConfig(samples=32))
    with pytest.raises(AccuracyError):
        action(orb)


def test_action_gradient_closed_form(oscillator):
    dv, du = action_gradient(oscillator, _ref_orbit(oscillator, [0.0, 0.5]))
    assert dv[0] == pytest.approx(0.0, abs=1e-10)
    assert du[0] == pytest.approx(np.pi, rel=1e-10)
    dv, du = action_gradient(oscillator, _ref_orbit(oscillator, [0.0, 0.0]))
    assert np.allclose([dv[0], du[0]], 0.0, atol=1e-12)


@pytest.mark.parametrize("model", [builtin_oscillator(omega=Field.affine(1.0, 0.1, 0.3)),
                                   builtin_oscillator(omega=Field.affine(1.2, -0.2, 0.1),
                                                      energy=Field.affine(1.0, 0.3, 0.2))])
def test_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(7)
    h = 1e-4
    for z in rng.uniform(-0.8, 0.8, size=(3, 2)):
        grad = np.concatenate(action_gradient(model, _ref_orbit(model, z)))
        fd = []
        for j in range(2):
            dz = np.zeros(2)
            dz[j] = h
            fd.append((action(_ref_orbit(model, z + dz)) - action(_ref_orbit(model, z - dz))) / (2 * h))
        assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) <= 1e-6


def test_perturbative_action_examples():
    model = builtin_perturbative()
    orb = find_periodic_orbit(model, [0.0, 1.0], np.array([np.sqrt(2.0), 0.0]), 2 * np.pi)
    assert perturbative_action(model, orb) == pytest.approx(2 * np.pi, rel=1e-9)
    assert perturbative_action(model, orb, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    flat = builtin_perturbative(coupling=0.0)
    assert perturbative_action(flat, orb) == 0.0


@pytest.fixture(scope="module")
def small_field(oscillator):
    box = Box([-1.0, -1.0], [1.0, 1.0])
    return build_action_field(oscillator, _ref_orbit(oscillator, [0.0, 0.0]), box, resolution=5)


def test_action_field_nodes_match_closed_form(small_field, oscillator):
    ref = oscillator.metadata["reference"]
    for node, J in zip(small_field.nodes().reshape(-1, 2), small_field.J.reshape(-1)):
        assert J == pytest.approx(ref["action"](node), abs=1e-8)
    g = small_field.gradient(np.array([0.5, -0.5]))
    assert np.allclose(g, ref["gradient"](np.array([0.5, -0.5])), atol=1e-9)


def test_action_field_node_resolves_from_fresh_guess(small_field, oscillator):
    z = small_field.nodes()[1, 3]
    orb = find_periodic_orbit(oscillator, z, np.array([1.0, 0.3]), 6.0)
    assert action(orb) == pytest.approx(small_field.J[1, 3], abs=1e-9)


def test_action_field_csv_round_trip(tmp_path, small_field):
    out = tmp_path / "field.csv"
    small_field.to_csv(out)
    back = ActionField.from_csv(out)
    assert np.array_equal(back.J, small_field.J)
    assert np.array_equal(back.dJdu, small_field.dJdu)
    z = np.array([0.31, -0.42])
    assert back.value(z) == small_field.value(z)


def _closed_form_field(oscillator, n):
    ref = oscillator.metadata["reference"]
    box = Box([-1.0, -1.0], [1.0, 1.0])
    axes = [np.linspace(-1, 1, n)] * 2
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    J = np.apply_along_axis(ref["action"], -1, Z)
    T = np.apply_along_axis(ref["period"], -1, Z)
    G = np.apply_along_axis(ref["gradient"], -1, Z)
    return ActionField("osc", box, axes, J, T, G[..., :1], G[..., 1:])


def test_interpolation_on_fine_grid(oscillator):
    fld = _closed_form_field(oscillator, 21)
    assert fld.value(np.array([0.3, 0.4])) == pytest.approx(2.25 * np.pi, abs=1e-6)


def test_interpolation_converges_fourth_order():
    # a model whose action is not a polynomial, so spline error is visible
    model = builtin_oscillator(omega=Field.affine(2.0, 0.5, 0.3))
    probe = np.random.default_rng(3).uniform(-0.9, 0.9, size=(200, 2))
    exact = np.array([model.metadata["reference"]["action"](z) for z in probe])
    errs = []
    hs = []
    for n in (11, 21, 41):
        fld = _closed_form_field(model, n)
        errs.append(np.max(np.abs(fld.value(probe) - exact)))
        hs.append(2.0 / (n - 1))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 3.5


def test_continuation_breakdown_reports_frontier():
    # omega vanishes on the line v = -0.8, so orbits cease to exist there
    model = builtin_oscillator(omega=Field.affine(0.8, 1.0, 0.0))
    box = Box([-1.0, -0.5], [0.5, 0.5])
    with pytest.raises(ContinuationBreakdown) as info:
        build_action_field(model, _ref_orbit(model, [0.0, 0.0]), box, resolution=4,
                           cfg=OrbitConfig(max_iter=8))
    assert len(info.value.frontier) > 0
