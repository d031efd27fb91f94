import math

import numpy as np
import pytest

from slowdrift.errors import DivergenceError, StiffnessError
from slowdrift.flow import (IntegratorConfig, Section, detect_crossings, integrate_frozen,
                            integrate_full, integrate_splitting)
from slowdrift.model import Dims, HamiltonianModel, builtin_oscillator

SQ2 = math.sqrt(2.0)
TIGHT = IntegratorConfig(1e-10, 1e-12)


def test_full_run_returns_to_start(oscillator):
    y0 = np.array([SQ2, 0.0, 0.0, 0.0])
    traj = integrate_full(oscillator, y0, 0.0, (0.0, 2 * np.pi), TIGHT)
    assert np.max(np.abs(traj.states[-1] - y0)) <= 1e-8


def test_zero_span_gives_single_state(oscillator):
    y0 = np.array([0.3, 0.2, 0.1, -0.1])
    traj = integrate_full(oscillator, y0, 0.01, (1.0, 1.0))
    assert traj.states.shape == (1, 4)
    assert np.array_equal(traj.states[0], y0)


def test_energy_drift_is_small(oscillator):
    traj = integrate_full(oscillator, np.array([SQ2, 0.0, 0.0, 0.0]), 0.0, (0.0, 100.0), TIGHT)
    assert traj.energy_drift <= 1e-8


def test_frozen_run_matches_closed_form(oscillator):
    z = np.array([0.0, 0.0])
    traj = integrate_frozen(oscillator, np.array([SQ2, 0.0]), z, (0.0, 10.0), TIGHT)
    t = np.linspace(0.0, 10.0, 57)
    y = traj(t)
    assert np.max(np.abs(y[:, 0] - SQ2 * np.cos(t))) <= 1e-8
    assert np.max(np.abs(y[:, 1] - SQ2 * np.sin(t))) <= 1e-8
    assert np.all(traj.states[:, 2:] == 0.0)


def test_frozen_z_is_bit_exact(oscillator):
    z = np.array([0.123456789, -0.987654321])
    traj = integrate_frozen(oscillator, np.array([1.0, 0.5]), z, (0.0, 5.0))
    assert np.all(traj.states[:, 2:] == z)


def test_saddle_stays_on_subsystem(saddle):
    z = np.zeros(2)
    r = math.sqrt(2.0)
    w0 = np.array([0.0, r, 0.0, 0.0])  # p1, p2, q1, q2
    traj = integrate_frozen(saddle, w0, z, (0.0, 2 * np.pi), TIGHT)
    radius = traj.states[:, 1] ** 2 + traj.states[:, 3] ** 2
    assert np.max(np.abs(radius - 2.0)) <= 1e-8
    assert np.max(np.abs(traj.states[:, [0, 2]])) == 0.0


def test_crossings_of_q_section(oscillator):
    traj = integrate_frozen(oscillator, np.array([SQ2, 0.0]), np.zeros(2), (0.0, 4 * np.pi + 1.0), TIGHT)
    up = detect_crossings(traj, Section.coordinate(1, 4, label="q=0"))
    assert [e.t for e in up] == pytest.approx([0.0, 2 * np.pi, 4 * np.pi], abs=1e-8)
    down = detect_crossings(traj, Section.coordinate(1, 4).reversed())
    assert [e.t for e in down] == pytest.approx([np.pi, 3 * np.pi], abs=1e-8)
    both = detect_crossings(traj, Section("q=0", lambda y: y[1], orientation=0))
    assert sorted(e.t for e in both) == pytest.approx(sorted([e.t for e in up + down]), abs=1e-8)
    for e in up:
        assert e.residual <= 1e-10 and not e.tangential


def test_constant_sign_section_has_no_crossings(oscillator):
    traj = integrate_frozen(oscillator, np.array([SQ2, 0.0]), np.zeros(2), (0.0, 10.0))
    assert detect_crossings(traj, Section("far", lambda y: y[1] - 5.0, orientation=0)) == []


def _separable_model():
    # H = K(p, v) + V(q, u)
    return HamiltonianModel(
        Dims(1, 1),
        lambda p, q, v, u, eps: 0.5 * p[0] ** 2 + 0.25 * v[0] ** 2 + 0.5 * q[0] ** 2 + 0.25 * u[0] ** 2 - 1.0,
        lambda p, q, v, u, eps: np.array([p[0]]),
        lambda p, q, v, u, eps: np.array([q[0]]),
        lambda p, q, v, u, eps: np.array([0.5 * v[0]]),
        lambda p, q, v, u, eps: np.array([0.5 * u[0]]),
        name="separable", separable=True,
    )


def test_splitting_is_second_order():
    model = _separable_model()
    y0 = np.array([1.0, 0.5, 0.2, -0.3])
    ref = integrate_full(model, y0, 0.05, (0.0, 5.0), TIGHT)
    errs = []
    for dt in (0.01, 0.005):
        split = integrate_splitting(model, y0, 0.05, (0.0, 5.0), dt)
        errs.append(np.max(np.abs(split.states[-1] - ref.states[-1])))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_splitting_needs_separable_model(oscillator):
    from slowdrift.errors import ModelError

    with pytest.raises(ModelError):
        integrate_splitting(oscillator, np.zeros(4), 0.0, (0.0, 1.0), 0.1)


def test_non_finite_field_is_reported():
    # the force is undefined for q > 1 and the orbit runs into that region
    blow = HamiltonianModel(Dims(1, 1), lambda p, q, v, u, eps: 0.5 * p[0] ** 2,
                            lambda p, q, v, u, eps: np.array([p[0]]),
                            lambda p, q, v, u, eps: np.array([np.sqrt(1.0 - q[0]) - 1.0]),
                            lambda p, q, v, u, eps: np.zeros(1),
                            lambda p, q, v, u, eps: np.zeros(1))
    with np.errstate(invalid="ignore"), pytest.raises(DivergenceError):
        integrate_full(blow, np.array([1.0, 0.0, 0.0, 0.0]), 0.0, (0.0, 10.0))


def test_finite_time_blow_up_stops_the_solver():
    blow = HamiltonianModel(Dims(1, 1), lambda p, q, v, u, eps: 0.5 * p[0] ** 2 - q[0] ** 4,
                            lambda p, q, v, u, eps: np.array([p[0]]),
                            lambda p, q, v, u, eps: np.array([-4 * q[0] ** 3]),
                            lambda p, q, v, u, eps: np.zeros(1),
                            lambda p, q, v, u, eps: np.zeros(1))
    with pytest.raises((StiffnessError, DivergenceError)):
        integrate_full(blow, np.array([1.0, 1.0, 0.0, 0.0]), 0.0, (0.0, 100.0))


def test_csv_export_has_seventeen_digits(tmp_path, oscillator):
    traj = integrate_frozen(oscillator, np.array([SQ2, 0.0]), np.zeros(2), (0.0, 1.0))
    out = tmp_path / "traj.csv"
    traj.to_csv(out, times=[0.0, 0.5])
    lines = out.read_text().splitlines()
    assert lines[0] == "t,p0,q0,v0,u0,H"
    assert float(lines[2].split(",")[2]) == pytest.approx(SQ2 * math.sin(0.5), abs=1e-9)
