import numpy as np
import pytest

from septensor.basis import PatchConfig, make_uniform_mesh
from septensor.errors import ConfigurationError, InvalidArgumentError, OutOfDomainError
from septensor.field import DimKind, DimensionSpec, SeparableField
from septensor.inverse import InverseConfig, TargetField, eval_param_grad, invert

CFG = PatchConfig(s=1, p=2)


def _dims():
    return [DimensionSpec("x", make_uniform_mesh(0, 1, 12), CFG),
            DimensionSpec("a", make_uniform_mesh(0, 2, 8), CFG, DimKind.PARAM),
            DimensionSpec("b", make_uniform_mesh(1, 3, 8), CFG, DimKind.PARAM)]


def _field():
    # u = x a + x^2 b
    dims = _dims()
    return SeparableField.from_functions(dims, [lambda x: x, lambda a: a, np.ones_like]).add_mode(
        [d.mesh.nodes ** e for d, e in zip(dims, (2, 0, 1))])


def _target(f, a, b, n=200):
    x = np.random.default_rng(0).random(n)
    pts = np.column_stack([x, np.full(n, a), np.full(n, b)])
    return TargetField(x[:, None], f(pts))


def test_collapsed_box_returns_the_point():
    f = _field()
    res = invert(f, _target(f, 1.3, 2.2),
                 InverseConfig(("a", "b"), box={"a": (0.7, 0.7), "b": (2.0, 2.0)}))
    assert res.params == {"a": 0.7, "b": 2.0}
    assert res.steps == [0] and res.converged


def test_param_gradient_examples():
    dims = _dims()
    const = SeparableField(dims, [np.ones((1, d.n_nodes)) for d in dims])
    assert abs(eval_param_grad(const, [0.3, 1.1, 2.0], "a")) < 1e-12
    ramp = SeparableField.from_functions(dims, [np.ones_like, lambda a: a, np.ones_like])
    assert abs(eval_param_grad(ramp, [0.3, 1.1, 2.0], "a") - 1) < 1e-12
    f = _field()
    assert abs(eval_param_grad(f, [0.3, 1.1, 2.0], "b") - 0.09) < 1e-10
    with pytest.raises(InvalidArgumentError):
        eval_param_grad(f, [0.3, 1.1], "a")


def test_param_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    dims = _dims()
    f = SeparableField(dims, [rng.standard_normal((3, d.n_nodes)) for d in dims])
    for _ in range(10):
        pt = np.array([rng.random(), 2 * rng.random(), 1 + 2 * rng.random()])
        for d in (1, 2):
            h = 1e-6
            e = np.zeros(3)
            e[d] = h
            fd = (f.evaluate(pt + e) - f.evaluate(pt - e)) / (2 * h)
            assert abs(eval_param_grad(f, pt, d) - fd) <= 1e-6 * max(1, abs(fd))


def test_recovers_parameters_of_its_own_field():
    f = _field()
    res = invert(f, _target(f, 1.3, 2.2),
                 InverseConfig(("a", "b"), learning_rate=0.05, max_steps=500, n_restarts=3))
    assert abs(res.params["a"] - 1.3) < 1e-3 and abs(res.params["b"] - 2.2) < 1e-3
    assert res.loss < 1e-3
    box_lo, box_hi = np.array([0.0, 1.0]), np.array([2.0, 3.0])
    for it in res.iterates:
        assert np.all(it >= box_lo) and np.all(it <= box_hi)
    for tr in res.traces:
        assert all(b <= a for a, b in zip(tr, tr[1:]))
    assert res.restart in range(3) and len(res.steps) == 3


def test_sub_box_is_respected():
    f = _field()
    res = invert(f, _target(f, 1.3, 2.2),
                 InverseConfig(("a", "b"), box={"a": (0.0, 1.0)}, max_steps=200, n_restarts=2))
    assert res.params["a"] <= 1.0
    for it in res.iterates:
        assert np.all(it[:, 0] <= 1.0)


def test_one_free_parameter():
    f = _field()
    x = np.linspace(0, 1, 50)
    pts = np.column_stack([x, np.full(50, 0.9), np.full(50, 1.5)])
    tgt = TargetField(np.column_stack([x, np.full(50, 1.5)]), f(pts))
    res = invert(f, tgt, InverseConfig(("a",), learning_rate=0.05, max_steps=400, n_restarts=2))
    assert abs(res.params["a"] - 0.9) < 1e-3


def test_bad_setups_are_rejected():
    f = _field()
    tgt = _target(f, 1.0, 2.0)
    with pytest.raises(ConfigurationError):
        invert(f, tgt, InverseConfig(("x", "b")))
    with pytest.raises(ConfigurationError):
        invert(f, tgt, InverseConfig(("c",)))
    with pytest.raises(ConfigurationError):
        invert(f, tgt, InverseConfig(("a", "b"), box={"a": (-1.0, 1.0)}))
    with pytest.raises(InvalidArgumentError):
        invert(f, tgt, InverseConfig(("a",)))
    with pytest.raises(OutOfDomainError):
        invert(f, TargetField([[1.5]], [0.0]), InverseConfig(("a", "b")))
    with pytest.raises(ConfigurationError):
        InverseConfig(())
    with pytest.raises(InvalidArgumentError):
        TargetField(np.zeros((3, 1)), np.zeros(2))
