import numpy as np
import pytest

from cutwave.basis import gauss_lobatto_nodes, lagrange_1d, shape_eval, tensor_basis


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_nodal_delta_and_partition_of_unity(p, rng):
    b = lagrange_1d(p)
    np.testing.assert_allclose(b.values(gauss_lobatto_nodes(p)), np.eye(p + 1), atol=1e-14)
    xi = rng.uniform(-1, 1, 20)
    np.testing.assert_allclose(b.values(xi).sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(b.derivatives(xi, 1).sum(axis=1), 0.0, atol=1e-12)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_derivatives_of_interpolated_monomial(p, rng):
    b = lagrange_1d(p)
    coef = gauss_lobatto_nodes(p) ** p
    xi = rng.uniform(-1, 1, 10)
    fact = 1.0
    for k in range(0, p + 2):
        expected = fact * xi ** (p - k) if k <= p else 0 * xi
        np.testing.assert_allclose(b.derivatives(xi, k) @ coef, expected, atol=1e-11)
        fact *= p - k


@pytest.mark.parametrize("p", [1, 2, 3])
def test_tensor_gradient_matches_finite_differences(p, rng):
    tb = tensor_basis(p)
    x, y = rng.uniform(-0.9, 0.9, 2)
    g = tb.gradients(np.array([x]), np.array([y]))[:, 0, :]
    e = 1e-6
    fx = (tb.values(np.array([x + e]), np.array([y])) - tb.values(np.array([x - e]), np.array([y]))) / (2 * e)
    fy = (tb.values(np.array([x]), np.array([y + e])) - tb.values(np.array([x]), np.array([y - e]))) / (2 * e)
    np.testing.assert_allclose(g[0], fx[0], atol=1e-7)
    np.testing.assert_allclose(g[1], fy[0], atol=1e-7)


def test_local_ordering_is_x_fastest():
    tb = tensor_basis(2)
    nodes = gauss_lobatto_nodes(2)
    v = tb.values(np.array([nodes[1]]), np.array([nodes[0]]))
    assert np.argmax(v[0]) == 1
    v = tb.values(np.array([nodes[0]]), np.array([nodes[1]]))
    assert np.argmax(v[0]) == 3


def test_shape_eval_rejects_excess_derivatives():
    with pytest.raises(ValueError):
        shape_eval(tensor_basis(2), np.zeros((1, 2)), max_deriv=3)
