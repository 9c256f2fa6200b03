import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twocharge.core import ComState, Constants, LabState, com_momenta_from_lab, lab_canonical_momenta, to_com
from twocharge.fields import (
    FieldModelError,
    LinearField,
    LinearGauge,
    QuadraticGauge,
    UniformField,
    evaluate_field,
    gauge_transform,
    linearity_ratio,
    numerical_curl,
    numerical_divergence,
    stern_gerlach_field,
    vector_potential,
    zero_field,
)

coord = st.floats(-5, 5, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


def random_gradient(rng):
    G = rng.normal(size=(3, 3))
    G = G + G.T
    return G - np.trace(G) / 3.0 * np.eye(3)


def test_uniform_field_is_constant(rng):
    f = UniformField((1.0, -2.0, 0.5))
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(evaluate_field(f, x), np.tile([1.0, -2.0, 0.5], (5, 1)))


def test_stern_gerlach_preset():
    f = stern_gerlach_field(2.0, 0.5)
    np.testing.assert_allclose(f.field([1.0, 7.0, 3.0]), [-0.5, 0.0, 3.5])
    np.testing.assert_array_equal(f.field([0.0, 9.0, 0.0]), [0.0, 0.0, 2.0])


def test_asymmetric_gradient_rejected():
    G = np.zeros((3, 3))
    G[0, 1] = 1.0
    with pytest.raises(FieldModelError, match="symmetric"):
        LinearField((0, 0, 1), G)


def test_traced_gradient_rejected():
    with pytest.raises(FieldModelError, match="trace"):
        LinearField((0, 0, 1), np.diag([1.0, 1.0, 0.0]))


def test_gradient_shape_checked():
    with pytest.raises(FieldModelError):
        LinearField((0, 0, 1), np.zeros((2, 2)))


def test_symmetric_gauge_value():
    f = UniformField((0.0, 0.0, 2.0))
    np.testing.assert_allclose(vector_potential(f, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_curl_of_potential_is_field(seed):
    rng = np.random.default_rng(seed)
    f = LinearField(rng.normal(size=3), random_gradient(rng))
    x = rng.normal(size=(10, 3)) * 2
    curl = numerical_curl(f.potential, x, step=1e-4)
    np.testing.assert_allclose(curl, f.field(x), rtol=1e-8, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_field_is_solenoidal_and_irrotational(seed):
    rng = np.random.default_rng(seed)
    f = LinearField(rng.normal(size=3), random_gradient(rng))
    x = rng.normal(size=(10, 3))
    np.testing.assert_allclose(numerical_divergence(f.field, x), 0.0, atol=1e-9)
    np.testing.assert_allclose(numerical_curl(f.field, x), 0.0, atol=1e-9)


def test_poincare_potential_is_radial_gauge(rng):
    # x . A(x) = 0 for the radial gauge anchored at the origin
    f = LinearField(rng.normal(size=3), random_gradient(rng))
    x = rng.normal(size=(20, 3))
    np.testing.assert_allclose(np.sum(x * f.potential(x), axis=-1), 0.0, atol=1e-14)


def test_linear_reduces_to_uniform(rng):
    H0 = rng.normal(size=3)
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(LinearField(H0, np.zeros((3, 3))).potential(x), UniformField(H0).potential(x))


@given(point)
def test_gauge_leaves_field_unchanged(x):
    f = stern_gerlach_field(1.5, 0.3)
    for g in (LinearGauge((1.0, -2.0, 0.5)), QuadraticGauge(np.array([[1, 0.2, 0], [0.2, -1, 0.3], [0, 0.3, 2]]))):
        gf = gauge_transform(f, g)
        np.testing.assert_array_equal(gf.field(x), f.field(x))
        np.testing.assert_allclose(gf.potential(x) - f.potential(x), g.gradient(x), rtol=1e-12, atol=1e-12)


def test_gauge_gradients_match_finite_differences(rng):
    Q = rng.normal(size=(3, 3))
    g = QuadraticGauge(Q + Q.T)
    x = rng.normal(size=3)
    h = 1e-6
    fd = np.array([(g.value(x + h * e) - g.value(x - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(g.gradient(x), fd, rtol=1e-7)


def test_quadratic_gauge_must_be_symmetric():
    with pytest.raises(FieldModelError):
        QuadraticGauge(np.triu(np.ones((3, 3))))


def test_canonical_momentum_shift_under_gauge(rng):
    k = Constants.hydrogen()
    f = stern_gerlach_field(1.0, 0.2)
    s = LabState(*rng.normal(size=(4, 3)))
    c = to_com(s, k)
    kvec = rng.normal(size=3)
    Q = rng.normal(size=(3, 3))
    Q = Q + Q.T
    base = com_momenta_from_lab(*lab_canonical_momenta(s, f, k), k)
    for g, dP, dp in [
        (LinearGauge(kvec), np.zeros(3), -(k.e / k.c) * kvec),
        (QuadraticGauge(Q), -(2 * k.e / k.c) * Q @ c.r, -(2 * k.e / k.c) * Q @ (c.R + k.K_L * c.r)),
    ]:
        P, p = com_momenta_from_lab(*lab_canonical_momenta(s, gauge_transform(f, g), k), k)
        scale = 1e-15 * k.M * np.max(np.abs(s.as_array()))
        np.testing.assert_allclose(P - base[0], dP, atol=scale)
        np.testing.assert_allclose(p - base[1], dp, atol=scale)


def test_reduced_momenta_differ_from_lab_by_total_derivative(rng):
    # in a uniform field the reduced-frame momenta equal the symmetric-gauge ones
    # plus the gradient of F = (e/2c) H . (R x r)
    from twocharge.core import canonical_momenta, to_lab

    k = Constants.hydrogen()
    H = rng.normal(size=3)
    f = UniformField(H)
    c = ComState(*rng.normal(size=(4, 3)))
    P_lab, p_lab = com_momenta_from_lab(*lab_canonical_momenta(to_lab(c, k), f, k), k)
    P, p = canonical_momenta(c, f, k)
    eoc2 = k.e / (2 * k.c)
    np.testing.assert_allclose(P, P_lab + eoc2 * np.cross(c.r, H), atol=1e-13)
    np.testing.assert_allclose(p, p_lab + eoc2 * np.cross(H, c.R), atol=1e-13)


def test_linearity_ratio():
    assert linearity_ratio(stern_gerlach_field(2.0, 0.5), 1.0) == pytest.approx(0.25)
    assert linearity_ratio(zero_field(), 1.0) == 0.0
    assert linearity_ratio(LinearField((0, 0, 0), np.diag([1.0, -1.0, 0.0])), 1.0) == float("inf")


def test_field_models_compare_by_value():
    assert stern_gerlach_field(1.0, 0.1) == stern_gerlach_field(1.0, 0.1)
    assert UniformField((0, 0, 1)) != UniformField((0, 0, 2))
