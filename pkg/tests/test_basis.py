import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from septensor.basis import (Kernel, Mesh1D, PatchConfig, eval_basis, gauss_rule, get_basis,
                             locate_element, make_graded_mesh, make_uniform_mesh)
from septensor.errors import ConfigurationError, InvalidArgumentError, OutOfDomainError

CONFIGS = [PatchConfig(s=s, p=p, kernel=k)
           for k in Kernel for s in (0, 1, 2, 3) for p in (1, 2, 3) if s == 0 or p <= 2 * s]
MESHES = {
    "uniform": make_uniform_mesh(0.0, 1.0, 12),
    "graded": make_graded_mesh([((0.0, 0.3), 6), ((0.3, 1.0), 4)]),
}


def test_uniform_mesh_examples():
    assert np.allclose(make_uniform_mesh(0, 1, 4).nodes, [0, 0.25, 0.5, 0.75, 1])
    m = make_uniform_mesh(0, 12, 32)
    assert m.n_nodes == 33 and np.allclose(m.element_lengths, 0.375)
    assert make_uniform_mesh(-1, 1, 250).n_nodes == 251


@pytest.mark.parametrize("args", [(1, 0, 4), (0, 1, 0), (0, np.inf, 3), (0, 1, 2.5)])
def test_uniform_mesh_rejects(args):
    with pytest.raises(InvalidArgumentError):
        make_uniform_mesh(*args)


def test_graded_mesh_examples():
    m = make_graded_mesh([((0, 10), 2), ((10, 30), 20), ((30, 100), 7)])
    assert m.n_elem == 2 + 20 + 7
    fine = m.element_lengths[(m.nodes[:-1] >= 10) & (m.nodes[1:] <= 30)]
    assert np.allclose(fine, 1.0) and fine.size == 20
    assert np.allclose(make_graded_mesh([((0, 1), 1)]).nodes, [0, 1])
    assert np.allclose(make_graded_mesh([((0, 1), 2), ((1, 3), 4)]).nodes,
                       [0, .5, 1, 1.5, 2, 2.5, 3])


def test_graded_mesh_gap_and_overlap():
    with pytest.raises(InvalidArgumentError, match="gap"):
        make_graded_mesh([((0, 1), 2), ((1.5, 3), 4)])
    with pytest.raises(InvalidArgumentError, match="overlap"):
        make_graded_mesh([((0, 1), 2), ((0.5, 3), 4)])


def test_mesh_invariants():
    with pytest.raises(InvalidArgumentError):
        Mesh1D(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(InvalidArgumentError):
        Mesh1D(np.array([0.0]))


def test_locate_element():
    m = make_uniform_mesh(0, 1, 4)
    assert locate_element(m, 0.3) == 1
    assert locate_element(m, 1.0) == 3
    assert locate_element(m, 0.0) == 0
    with pytest.raises(OutOfDomainError):
        locate_element(m, 1.0 + 1e-6)


def test_patch_config_validation():
    with pytest.raises(ConfigurationError):
        PatchConfig(s=1, p=3)
    with pytest.raises(ConfigurationError):
        PatchConfig(s=-1)
    with pytest.raises(ConfigurationError):
        PatchConfig(a=0.0)


def test_gauss_rules():
    r1 = gauss_rule(1)
    assert np.allclose(r1.points, [0]) and np.allclose(r1.weights, [2])
    r2 = gauss_rule(2)
    assert np.allclose(sorted(r2.points), [-1 / np.sqrt(3), 1 / np.sqrt(3)])
    assert np.allclose(r2.weights, [1, 1])
    r3 = gauss_rule(3)
    assert abs(np.sum(r3.weights * r3.points**4) - 0.4) < 1e-15
    for g in range(1, 11):
        r = gauss_rule(g)
        assert abs(r.weights.sum() - 2) < 1e-14
        for q in range(2 * g):
            exact = 0.0 if q % 2 else 2.0 / (q + 1)
            assert abs(np.sum(r.weights * r.points**q) - exact) < 1e-13


def test_linear_hat_reduction():
    m = make_uniform_mesh(0, 1, 4)
    for cfg in (PatchConfig(s=0, p=1), PatchConfig(s=0, p=3, a=3.0, kernel=Kernel.LAGRANGE)):
        b = eval_basis(m, cfg, 0.3)
        vals = dict(zip(b.node_indices.tolist(), b.values.tolist()))
        assert set(k for k, v in vals.items() if abs(v) > 0) == {1, 2}
        assert abs(vals[1] - 0.8) < 1e-14 and abs(vals[2] - 0.2) < 1e-14
        ders = dict(zip(b.node_indices.tolist(), b.derivs.tolist()))
        assert abs(ders[1] + 4) < 1e-12 and abs(ders[2] - 4) < 1e-12


def test_lagrange_quadratic_reproduction_interior():
    # end patches are truncated, so only elements away from the ends reproduce x^2
    m = make_uniform_mesh(0, 1, 10)
    q = lambda x: 3 * x**2 - x + 0.5
    basis = get_basis(m, PatchConfig(s=1, p=2, kernel=Kernel.LAGRANGE))
    xs = np.linspace(0.1, 0.9, 301)
    assert np.max(np.abs(basis.interpolate(q(m.nodes), xs) - q(xs))) < 1e-12


@pytest.mark.parametrize("mesh_name", list(MESHES))
@pytest.mark.parametrize("cfg", CONFIGS, ids=str)
def test_basis_invariants(cfg, mesh_name):
    mesh = MESHES[mesh_name]
    basis = get_basis(mesh, cfg)
    xs = np.random.default_rng(0).uniform(mesh.lower, mesh.upper, 1000)
    bb = basis.evaluate(xs)
    vals = np.where(bb.mask, bb.values, 0.0)
    ders = np.where(bb.mask, bb.derivs, 0.0)
    assert np.max(np.abs(vals.sum(1) - 1)) < 1e-10
    assert np.max(np.abs(ders.sum(1))) < 1e-8 * max(1.0, np.abs(ders).max())
    assert bb.width <= 2 * (cfg.s + 1)
    # Kronecker delta at the nodes
    bn = basis.evaluate(mesh.nodes)
    full = np.zeros((mesh.n_nodes, mesh.n_nodes))
    for w in range(bn.width):
        np.add.at(full, (np.arange(mesh.n_nodes), bn.idx[:, w]), np.where(bn.mask[:, w], bn.values[:, w], 0))
    assert np.max(np.abs(full - np.eye(mesh.n_nodes))) < 1e-10
    # analytic derivative against central differences
    h = mesh.element_lengths.min()
    x0 = xs[(xs > mesh.lower + h) & (xs < mesh.upper - h)][:100]
    d = 1e-6 * h
    for x in x0:
        b = eval_basis(mesh, cfg, x)
        bp, bm = eval_basis(mesh, cfg, x + d), eval_basis(mesh, cfg, x - d)
        if not (np.array_equal(bp.node_indices, b.node_indices)
                and np.array_equal(bm.node_indices, b.node_indices)):
            continue
        fd = (bp.values - bm.values) / (2 * d)
        scale = max(1.0, np.abs(b.derivs).max())
        assert np.max(np.abs(fd - b.derivs)) / scale < 1e-6
    # reproduction of monomials of order <= p on interior elements
    inner = (xs > mesh.nodes[cfg.s + 1]) & (xs < mesh.nodes[-cfg.s - 2])
    p = cfg.p if cfg.s > 0 else 1
    for q in range(p + 1):
        approx = basis.interpolate(mesh.nodes**q, xs[inner])
        assert np.max(np.abs(approx - xs[inner]**q)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 1.0), s=st.integers(0, 3), kern=st.sampled_from(list(Kernel)))
def test_partition_of_unity_property(x, s, kern):
    cfg = PatchConfig(s=s, p=min(2, 2 * s) if s else 1, kernel=kern)
    b = eval_basis(MESHES["graded"], cfg, x)
    assert abs(b.values.sum() - 1) < 1e-10
    assert len(b.node_indices) <= 2 * (s + 1)


@pytest.mark.parametrize("s", [1, 2, 3])
def test_mls_stable_next_to_nodes(s):
    mesh = MESHES["graded"]
    cfg = PatchConfig(s=s, p=2, kernel=Kernel.INTERP_MLS)
    for node in (0, 3, mesh.n_nodes - 1):
        at = eval_basis(mesh, cfg, mesh.nodes[node])
        for off in (1e-13, 1e-10, 6e-8, 1e-6):
            x = mesh.nodes[node] + (off if node < mesh.n_nodes - 1 else -off)
            b = eval_basis(mesh, cfg, x)
            assert abs(b.values.sum() - 1) < 1e-13
            assert abs(b.derivs.sum()) < 1e-9 * max(1.0, np.abs(b.derivs).max())
            if np.array_equal(b.node_indices, at.node_indices):
                assert np.abs(b.values - at.values).max() < 1e-4
