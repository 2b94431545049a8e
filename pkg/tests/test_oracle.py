import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from septensor import oracle, problems
from septensor.basis import make_uniform_mesh
from septensor.errors import InvalidArgumentError, OracleError, UndefinedMetricError
from septensor.field import DimensionSpec, SeparableField


def test_rel_l2_examples():
    assert oracle.rel_l2_pointwise([1, 2, 3], [1, 2, 3]) == 0.0
    assert abs(oracle.rel_l2_pointwise([0, 0], [3, 4]) - 1.0) < 1e-15
    assert abs(oracle.rel_l2_pointwise([1.1, 2.2], [1, 2]) - 0.1) < 1e-14
    with pytest.raises(UndefinedMetricError):
        oracle.rel_l2_pointwise([1, 2], [0, 0])
    with pytest.raises(InvalidArgumentError):
        oracle.rel_l2_pointwise([1, 2], [1, 2, 3])


def test_rel_l2_integral_of_scaled_field():
    m = make_uniform_mesh(0, 1, 8)
    dims = [DimensionSpec("x", m), DimensionSpec("y", m)]
    rng = np.random.default_rng(0)
    g = SeparableField(dims, [rng.standard_normal((2, 9)) for _ in dims])
    f = SeparableField(dims, [1.1 * g.coeffs[0], g.coeffs[1]])
    assert abs(oracle.rel_l2_integral(f, g) - 0.1) < 1e-7
    assert oracle.rel_l2_integral(g, g) < 1e-7


def test_fd_poisson_exact_for_quadratics_and_second_order():
    x, U = oracle.fd_poisson_2d(9, lambda X, Y: 2 + 0 * X, lambda X, Y: X**2)
    X, Y = np.meshgrid(x, x, indexing="ij")
    assert np.abs(U - X**2).max() < 1e-12
    x, U = oracle.fd_poisson_2d(11, lambda X, Y: 0 * X, lambda X, Y: 0 * X)
    assert not np.any(U)
    u = lambda X, Y: np.sin(np.pi * X) * np.sinh(np.pi * Y) / np.sinh(np.pi) + X * Y
    f = lambda X, Y: 0 * X
    errs = []
    for n in (17, 33, 65, 129):
        x, U = oracle.fd_poisson_2d(n, f, u)
        X, Y = np.meshgrid(x, x, indexing="ij")
        errs.append(np.abs(U - u(X, Y)).max())
    assert errs[-1] < 1e-3
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))
    with pytest.raises(InvalidArgumentError):
        oracle.fd_poisson_2d(2, f, u)


def test_heat_zero_power_and_linearity():
    _, _, U0 = oracle.fd_heat_2d_param(17, 20, 2.0, 0.0)
    assert not np.any(U0)
    _, _, U1 = oracle.fd_heat_2d_param(17, 20, 2.0, 100.0)
    _, _, U2 = oracle.fd_heat_2d_param(17, 20, 2.0, 200.0)
    assert np.allclose(U2, 2 * U1, rtol=1e-13, atol=1e-15)
    assert np.all(U1[1:, 1:-1, 1:-1] > 0)
    assert not np.any(U1[:, 0, :]) and not np.any(U1[0])


def test_heat_time_convergence_is_second_order():
    ref = oracle.fd_heat_2d_param(17, 1600, 2.5, 150.0, snapshots=[1600])[2][0]
    errs = [np.abs(oracle.fd_heat_2d_param(17, n, 2.5, 150.0, snapshots=[n])[2][0] - ref).max()
            for n in (25, 50, 100)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_heat_stride_subsamples():
    x, t, U = oracle.fd_heat_3d_param(17, 10, 1.5, 120.0, snapshots=[5, 10])
    xs, ts, Us = oracle.fd_heat_3d_param(17, 10, 1.5, 120.0, snapshots=[5, 10], stride=4)
    assert np.allclose(xs, x[::4]) and np.array_equal(t, ts)
    assert np.allclose(Us, U[:, ::4, ::4, ::4], rtol=1e-12, atol=1e-14)
    with pytest.raises(InvalidArgumentError):
        oracle.fd_heat_3d_param(17, 10, 1.5, 120.0, stride=3)


def test_heat_1d_varcoef_steady_state():
    x, t, U = oracle.fd_heat_1d_varcoef(33, 200, lambda x: np.ones_like(x), lambda x: np.ones_like(x),
                                        5.0, snapshots=[200])
    assert np.abs(U[0] - x * (1 - x) / 2).max() < 1e-8
    with pytest.raises(OracleError):
        oracle.fd_heat_1d_varcoef(9, 2, lambda x: x - 0.5, lambda x: 1 + 0 * x, 0.1)


def test_heat_dataset_layout():
    X, y, names = oracle.heat_dataset_2d(9, 20, [(1.0, 100.0), (2.0, 150.0)], n_snapshots=4)
    assert names == ("x", "y", "k", "P", "t")
    assert X.shape == (2 * 4 * 81, 5) and y.shape == (2 * 4 * 81,)
    assert set(np.unique(X[:, 4]).round(6)) == {0.01, 0.02, 0.03, 0.04}
    with pytest.raises(InvalidArgumentError):
        oracle.heat_dataset_2d(9, 20, [(1.0, 100.0)], n_snapshots=3)


def test_jacobi_matches_numpy():
    C = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]])
    w, V = oracle.jacobi_eigh(C)
    assert np.allclose(w, np.linalg.eigvalsh(C)[::-1], atol=1e-12)
    assert np.allclose(V @ np.diag(w) @ V.T, C, atol=1e-12)
    assert np.allclose(V.T @ V, np.eye(3), atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        oracle.jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_jacobi_random_symmetric(n, seed):
    A = np.random.default_rng(seed).standard_normal((n, n))
    C = A + A.T
    w, V = oracle.jacobi_eigh(C)
    assert np.all(np.diff(w) <= 1e-12)
    assert np.allclose(w, np.linalg.eigvalsh(C)[::-1], atol=1e-9 * max(1, np.abs(w).max()))


def test_kl_properties():
    mesh = make_uniform_mesh(0, 1, 32)
    kl = oracle.kl_build(0.05, 0.3, mesh, 5)
    assert abs(kl.eigenvalues.sum() - mesh.n_nodes * 0.05**2) < 1e-12
    assert np.all(kl.eigenvalues[:5] > 0)
    x = np.linspace(0, 1, 11)
    assert np.array_equal(oracle.kl_sample(kl, np.zeros(5), x), np.ones(11))
    flat = oracle.kl_build(0.1, 1e9, mesh, 1)
    assert abs(flat.eigenvalues[0] - mesh.n_nodes * 0.01) < 1e-12
    assert np.all(np.abs(flat.eigenvalues[1:]) < 1e-12)
    v = flat.mode_vector(0)
    assert np.allclose(v, v[0]) and abs(v[0] - 0.1) < 1e-12
    with pytest.raises(InvalidArgumentError):
        oracle.kl_sample(kl, np.zeros(4), x)
    with pytest.raises(InvalidArgumentError):
        oracle.kl_build(0.1, 0.3, mesh, 0)


def test_grid_error_agrees_with_reported_error():
    prob = problems.poisson_case1(D=2)
    f, _ = prob.solve()
    g = np.linspace(0, 1, 101)
    X, Y = np.meshgrid(g, g, indexing="ij")
    P = np.column_stack([X.ravel(), Y.ravel()])
    grid = oracle.rel_l2_pointwise(f(P), prob.exact(P))
    for reported in (prob.error_pointwise(f), prob.error_integral(f)):
        assert abs(grid - reported) <= 0.1 * reported
