import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowdrift.errors import DimensionError, EvaluationError, ModelError
from slowdrift.model import (Ball, Box, Dims, FastHamiltonian, FastPoint, Field, FullState,
                             HamiltonianModel, SlowPoint, builtin_oscillator, builtin_perturbative,
                             builtin_saddle_oscillator, domain_from_spec, evaluate,
                             frozen_vector_field, full_vector_field, harmonic_fast,
                             make_perturbative)

finite = st.floats(-3, 3, allow_nan=False)


def test_evaluate_oscillator_at_unit_point(oscillator):
    ev = evaluate(oscillator, FastPoint([1.0], [1.0]), SlowPoint([0.0], [0.0]))
    assert ev.H == pytest.approx(0.0, abs=1e-15)
    assert ev.dHdp[0] == 1.0 and ev.dHdq[0] == 1.0
    assert ev.dHdv[0] == 0.0 and ev.dHdu[0] == 0.0


def test_evaluate_origin_and_u_gradient(oscillator):
    assert evaluate(oscillator, FastPoint([0.0], [0.0]), SlowPoint([0.0], [0.0])).H == -1.0
    assert evaluate(oscillator, FastPoint([0.3], [0.2]), SlowPoint([0.0], [1.0])).dHdu[0] == -1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_evaluator_raises():
    bad = HamiltonianModel.from_function(Dims(1, 1), lambda p, q, v, u, eps: np.log(q[0] - 1.0))
    with pytest.raises(EvaluationError):
        evaluate(bad, FastPoint([0.0], [0.0]), SlowPoint([0.0], [0.0]))


def test_full_vector_field_examples(oscillator):
    d = full_vector_field(oscillator, FullState(FastPoint([1.0], [1.0]), SlowPoint([0.0], [0.0])), 0.3)
    assert d.w.q[0] == 1.0 and d.w.p[0] == -1.0
    assert d.z.u[0] == 0.0 and d.z.v[0] == 0.0
    d = full_vector_field(oscillator, FullState(FastPoint([1.0], [1.0]), SlowPoint([0.0], [1.0])), 0.1)
    assert d.z.u[0] == 0.0
    assert d.z.v[0] == pytest.approx(0.1)


@settings(max_examples=40, deadline=None)
@given(finite, finite, finite, finite)
def test_frozen_limit_has_no_slow_motion(p, q, v, u):
    model = builtin_oscillator(omega=Field.affine(2.0, 0.1, 0.2))
    state = FullState(FastPoint([p], [q]), SlowPoint([v], [u]))
    full = full_vector_field(model, state, 0.0)
    assert full.z.v[0] == 0.0 and full.z.u[0] == 0.0
    fast = frozen_vector_field(model, state.w, state.z)
    assert np.array_equal(fast.as_array(), full.w.as_array())


def test_frozen_field_example(oscillator):
    d = frozen_vector_field(oscillator, FastPoint([0.0], [1.0]), SlowPoint([0.0], [0.0]))
    assert d.q[0] == 0.0 and d.p[0] == -1.0


def test_saddle_subspace_is_invariant(saddle):
    d = frozen_vector_field(saddle, FastPoint([0.0, 0.7], [0.0, -0.4]), SlowPoint([0.2], [0.1]))
    assert d.p[0] == 0.0 and d.q[0] == 0.0


def test_perturbative_slow_equation():
    model = builtin_perturbative()
    y = np.array([0.3, 0.8, 0.1, 0.5])  # p, q, v, u
    rhs = model.rhs(y, 0.01)
    assert rhs[2] == pytest.approx(-0.01 * 0.8 ** 2)
    assert rhs[3] == 0.0


def test_perturbative_zero_coupling():
    zero = HamiltonianModel(Dims(1, 1), lambda p, q, v, u, eps: 0.0,
                            *(lambda p, q, v, u, eps: np.zeros(1),) * 4)
    model = make_perturbative(harmonic_fast(1.0), zero)
    y = np.array([0.3, 0.8, 0.1, 0.5])
    for eps in (0.0, 0.1, 1.0):
        assert np.all(model.rhs(y, eps)[2:] == 0.0)
    h0 = harmonic_fast(1.0)
    fast = model.fast_rhs(y[:2], y[2:])
    assert np.allclose(fast, [-h0.dHdq(y[:1], y[1:2])[0], h0.dHdp(y[:1], y[1:2])[0]])


def test_perturbative_dimension_mismatch():
    h1 = builtin_saddle_oscillator()
    with pytest.raises(DimensionError):
        make_perturbative(harmonic_fast(1.0), h1)


def test_oscillator_rejects_nonpositive_frequency():
    with pytest.raises(ModelError):
        builtin_oscillator(omega=0.0)
    with pytest.raises(ModelError):
        builtin_oscillator(omega=Field.affine(0.5, 1.0, 0.0), domain=Box([-1, -1], [1, 1]))


def test_oscillator_closed_form_actions(oscillator):
    ref = oscillator.metadata["reference"]
    assert ref["action"](np.array([0.0, 0.0])) == pytest.approx(2 * np.pi)
    assert ref["action"](np.array([1.0, 0.0])) == pytest.approx(3 * np.pi)
    w = ref["orbit"](np.zeros(2), 0.7)
    assert w[0] ** 2 + w[1] ** 2 == pytest.approx(2.0)


def test_saddle_rejects_bad_parameters():
    with pytest.raises(ModelError):
        builtin_saddle_oscillator(lam=-1.0)


def test_domains():
    box = Box([-1.0, -2.0], [1.0, 2.0])
    assert box.contains(np.zeros(2))
    assert box.boundary_distance(np.array([0.5, 0.0])) == pytest.approx(0.5)
    assert box.inradius == 1.0
    ball = domain_from_spec({"shape": "ball", "center": [0, 0], "radius": 2})
    assert isinstance(ball, Ball)
    assert ball.signed_distance(np.array([3.0, 0.0])) == pytest.approx(-1.0)
    with pytest.raises(DimensionError):
        Box([0.0], [1.0])
    with pytest.raises(ValueError):
        domain_from_spec({"shape": "torus"})


def test_point_types_round_trip():
    w = FastPoint.from_array([1.0, 2.0, 3.0, 4.0])
    assert w.p.tolist() == [1.0, 2.0] and w.q.tolist() == [3.0, 4.0]
    assert np.array_equal(w.as_array(), [1.0, 2.0, 3.0, 4.0])
    s = FullState.from_array(np.arange(6.0), Dims(2, 1))
    assert np.array_equal(s.as_array(), np.arange(6.0))


def test_from_function_gradients_match_analytic(oscillator):
    fd = HamiltonianModel.from_function(Dims(1, 1), oscillator.H)
    w, z = FastPoint([0.4], [-0.3]), SlowPoint([0.2], [0.6])
    a, b = evaluate(oscillator, w, z), evaluate(fd, w, z)
    for x, y in zip(a[1:], b[1:]):
        assert np.allclose(x, y, atol=1e-7)
