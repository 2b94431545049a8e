import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from septensor import field as fm
from septensor.basis import Kernel, PatchConfig, make_graded_mesh, make_uniform_mesh
from septensor.errors import FormatError, InvalidArgumentError
from septensor.field import DimKind, DimensionSpec, SeparableField, inner_product_l2


def _dims(D=2, n=8, cfg=PatchConfig(s=1, p=2)):
    return [DimensionSpec(f"x{i}", make_uniform_mesh(0, 1, n), cfg) for i in range(D)]


def _random_field(rng, D=3, M=4):
    dims = [DimensionSpec("a", make_uniform_mesh(0, 1, 6), PatchConfig(s=1, p=2)),
            DimensionSpec("b", make_graded_mesh([((-1, 0), 3), ((0, 2), 5)]), PatchConfig(s=2, p=3)),
            DimensionSpec("c", make_uniform_mesh(0, 5, 4), PatchConfig(), DimKind.TIME)][:D]
    return SeparableField(dims, [rng.standard_normal((M, d.n_nodes)) for d in dims])


def _random_points(rng, f, n):
    lo = np.array([d.mesh.lower for d in f.dims])
    hi = np.array([d.mesh.upper for d in f.dims])
    return lo + (hi - lo) * rng.random((n, f.n_dims))


def test_trivial_fields():
    dims = _dims()
    ones = SeparableField(dims, [np.ones((1, d.n_nodes)) for d in dims])
    assert abs(ones.evaluate([0.3, 0.77]) - 1) < 1e-14
    assert SeparableField(dims).evaluate([0.3, 0.2]) == 0.0
    assert SeparableField(dims).n_modes == 0


def test_sine_product_at_center():
    dims = _dims(n=200)
    f = SeparableField.from_functions(dims, [lambda x: np.sin(np.pi * x)] * 2)
    assert abs(f.evaluate([0.5, 0.5]) - 1) < 1e-3


def test_batch_matches_single_point_evaluation():
    rng = np.random.default_rng(0)
    f = _random_field(rng)
    pts = _random_points(rng, f, 10_000)
    batch = f.evaluate_batch(pts)
    looped = np.array([f.evaluate(p) for p in pts])
    assert np.array_equal(batch, looped)
    assert f.evaluate_batch(np.zeros((0, 3))).size == 0
    assert f.evaluate_batch(pts[:1])[0] == f.evaluate(pts[0])


def test_add_mode_superposition():
    rng = np.random.default_rng(1)
    f = _random_field(rng, M=3)
    pts = _random_points(rng, f, 500)
    vecs = [rng.standard_normal(d.n_nodes) for d in f.dims]
    g = f.add_mode(vecs)
    single = SeparableField(f.dims).add_mode(vecs)
    assert single.n_modes == 1
    assert np.allclose(g(pts), f(pts) + single(pts), rtol=1e-12, atol=1e-12)
    z = f.add_mode([np.zeros(d.n_nodes) for d in f.dims])
    assert np.array_equal(z(pts), f(pts))
    parts = sum(SeparableField(f.dims, [c[m:m + 1] for c in f.coeffs])(pts) for m in range(3))
    assert np.allclose(parts, f(pts), rtol=1e-12, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        f.add_mode(vecs[:2])


def test_nodal_exactness():
    rng = np.random.default_rng(2)
    f = _random_field(rng, M=1)
    nodes = [d.mesh.nodes for d in f.dims]
    idx = [rng.integers(0, len(n), 20) for n in nodes]
    pts = np.column_stack([n[i] for n, i in zip(nodes, idx)])
    expected = np.prod([c[0][i] for c, i in zip(f.coeffs, idx)], axis=0)
    assert np.allclose(f(pts), expected, rtol=1e-12, atol=1e-13)


def test_inner_products():
    dims = _dims(n=64)
    ones = SeparableField(dims, [np.ones((1, d.n_nodes)) for d in dims])
    assert abs(inner_product_l2(ones, ones) - 1) < 1e-12
    sines = SeparableField.from_functions(dims, [lambda x: np.sin(np.pi * x)] * 2)
    assert abs(inner_product_l2(sines, sines) - 0.25) < 1e-6
    rng = np.random.default_rng(4)
    f = SeparableField(dims, [rng.standard_normal((3, d.n_nodes)) for d in dims])
    assert inner_product_l2(f, f) >= 0


def test_inner_product_matches_tensor_quadrature():
    rng = np.random.default_rng(5)
    dims = [DimensionSpec("x", make_uniform_mesh(0, 1, 5), PatchConfig(s=0)),
            DimensionSpec("y", make_uniform_mesh(0, 2, 4), PatchConfig(s=1, p=2, kernel=Kernel.LAGRANGE))]
    f = SeparableField(dims, [rng.standard_normal((2, d.n_nodes)) for d in dims])
    g = SeparableField(dims, [rng.standard_normal((3, d.n_nodes)) for d in dims])
    # piecewise polynomials: per-element Gauss rules of high order are exact
    pts, wts = [], []
    gp, gw = np.polynomial.legendre.leggauss(10)
    for d in dims:
        nd = d.mesh.nodes
        a, b = nd[:-1, None], nd[1:, None]
        pts.append((0.5 * (b - a) * gp + 0.5 * (a + b)).ravel())
        wts.append((0.5 * (b - a) * gw).ravel())
    X, Y = np.meshgrid(pts[0], pts[1], indexing="ij")
    W = np.outer(wts[0], wts[1])
    P = np.column_stack([X.ravel(), Y.ravel()])
    quad = np.sum(W.ravel() * f(P) * g(P))
    assert abs(inner_product_l2(f, g) - quad) < 1e-9 * abs(quad)


def test_evaluate_grid_matches_batch():
    rng = np.random.default_rng(6)
    f = _random_field(rng, D=2)
    ax = [np.linspace(d.mesh.lower, d.mesh.upper, 7) for d in f.dims]
    G = f.evaluate_grid(ax)
    X, Y = np.meshgrid(*ax, indexing="ij")
    assert np.allclose(G.ravel(), f(np.column_stack([X.ravel(), Y.ravel()])))


def test_normalize_modes_keeps_values():
    rng = np.random.default_rng(7)
    f = _random_field(rng)
    g = f.normalize_modes()
    pts = _random_points(rng, f, 200)
    assert np.allclose(f(pts), g(pts), rtol=1e-12, atol=1e-12)
    for c in g.coeffs[1:]:
        assert np.allclose(np.linalg.norm(c, axis=1), 1)


def test_container_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    f = _random_field(rng)
    path = tmp_path / "f.inntd"
    fm.save(f, path)
    g = fm.load(path)
    pts = _random_points(rng, f, 300)
    assert np.array_equal(f(pts), g(pts))
    assert g.names == f.names and [d.kind for d in g.dims] == [d.kind for d in f.dims]
    data = path.read_bytes()
    (tmp_path / "cut.inntd").write_bytes(data[:-20])
    with pytest.raises(FormatError):
        fm.load(tmp_path / "cut.inntd")
    flipped = bytearray(data)
    flipped[-30] ^= 0xFF
    (tmp_path / "bad.inntd").write_bytes(bytes(flipped))
    with pytest.raises(FormatError, match="checksum"):
        fm.load(tmp_path / "bad.inntd")
    (tmp_path / "junk.inntd").write_bytes(b"hello world")
    with pytest.raises(FormatError):
        fm.load(tmp_path / "junk.inntd")


def test_header_is_read_without_coefficients(tmp_path):
    cfg = PatchConfig(s=1, p=2)
    dims = [DimensionSpec(f"d{i}", make_uniform_mesh(0, 1, 32), cfg) for i in range(6)]
    f = SeparableField(dims, [np.ones((100, d.n_nodes)) for d in dims])
    path = tmp_path / "big.inntd"
    f.save(path)
    # chop off the coefficient blocks: the header must still be readable
    blob = path.read_bytes()
    hlen = int.from_bytes(blob[6:14], "little")
    (tmp_path / "head.inntd").write_bytes(blob[:14 + hlen])
    hdr = fm.read_header(tmp_path / "head.inntd")
    assert hdr["n_modes"] == 100 and len(hdr["dims"]) == 6
    with pytest.raises(FormatError):
        fm.load(tmp_path / "head.inntd")


def test_dimension_validation():
    m = make_uniform_mesh(0, 1, 4)
    with pytest.raises(InvalidArgumentError):
        SeparableField([DimensionSpec("x", m), DimensionSpec("x", m)])
    with pytest.raises(InvalidArgumentError):
        SeparableField([DimensionSpec("x", m)], [np.ones((1, 3))])
    with pytest.raises(InvalidArgumentError):
        DimensionSpec("", m)


@settings(max_examples=30, deadline=None)
@given(M=st.integers(0, 5), seed=st.integers(0, 2**32 - 1))
def test_self_inner_product_nonnegative(M, seed):
    rng = np.random.default_rng(seed)
    dims = _dims(n=5)
    f = SeparableField(dims, [rng.standard_normal((M, d.n_nodes)) for d in dims])
    assert inner_product_l2(f, f) >= -1e-12
