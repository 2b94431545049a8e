from pathlib import Path

import numpy as np
import pytest

from septensor import config
from septensor.basis import Kernel
from septensor.errors import ConfigurationError
from septensor.field import DimKind

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    cfg = config.load(path)
    assert cfg["problem"] in config.PROBLEMS


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigurationError, match="solver"):
        config.validate({"problem": "helmholtz", "solver": {"max_mode": 3}})
    with pytest.raises(ConfigurationError, match="<root>"):
        config.validate({"problem": "helmholtz", "colour": "red"})
    with pytest.raises(ConfigurationError, match="problem"):
        config.validate({"problem": "navier_stokes"})
    with pytest.raises(ConfigurationError, match="presets"):
        config.validate({"problem": "helmholtz", "presets": ["fastest"]})


def test_custom_only_keys():
    with pytest.raises(ConfigurationError, match="custom"):
        config.validate({"problem": "helmholtz", "exact": "x"})
    with pytest.raises(ConfigurationError, match="dims"):
        config.validate({"problem": "custom"})


def test_presets_merge_under_explicit_values():
    cfg = config.validate({"problem": "heat_spt", "presets": ["inverse_defaults"],
                           "inverse": {"n_restarts": 2}})
    assert cfg["inverse"]["n_restarts"] == 2
    assert cfg["inverse"]["free_dims"] == ["k", "P"]
    assert cfg["inverse"]["learning_rate"] == 0.1
    tr = config.train_config(config.validate({"problem": "custom", "presets": ["training_defaults"],
                                              "dims": [{"name": "x", "domain": [0, 1]}]}))
    assert tr.modes == 60 and tr.learning_rate == 1e-4 and tr.batch_size == 128


def test_load_resolves_relative_paths(tmp_path):
    (tmp_path / "c.yaml").write_text(
        "problem: custom\ndims: [{name: x, domain: [0, 1]}]\ntrainer: {data: d.csv}\n")
    cfg = config.load(tmp_path / "c.yaml")
    assert cfg["trainer"]["data"] == str(tmp_path / "d.csv")
    (tmp_path / "bad.yaml").write_text("problem: [unclosed\n")
    with pytest.raises(ConfigurationError):
        config.load(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(ConfigurationError):
        config.load(tmp_path / "list.yaml")


def test_config_hash_ignores_key_order():
    assert config.config_hash({"a": 1, "b": [1, 2]}) == config.config_hash({"b": [1, 2], "a": 1})
    assert config.config_hash({"a": 1}) != config.config_hash({"a": 2})


def test_expressions():
    f = config.compile_expr("sin(pi*x) + x**2", ("x",))
    x = np.linspace(0, 1, 5)
    assert np.allclose(f(x), np.sin(np.pi * x) + x**2)
    g = config.compile_expr("2.5", ("x", "y"))
    assert np.array_equal(g(x, x), np.full(5, 2.5))
    h = config.compile_expr("where(x > 0.5, 1.0, 0.0) * y", ("x", "y"))
    assert np.array_equal(h(np.array([0.2, 0.7]), np.array([3.0, 3.0])), [0.0, 3.0])


@pytest.mark.parametrize("src", [
    "__import__('os')", "x.__class__", "open('f')", "[x for x in y]", "'a'", "lambda: 1",
    "x if x else 1", "np.sin(x)", "z + 1", "sin(",
])
def test_unsafe_or_bad_expressions_are_rejected(src):
    with pytest.raises(ConfigurationError):
        config.compile_expr(src, ("x",))


def test_breakpoints():
    assert config.expr_breakpoints("where(x >= 0.5, 1, 0)") == [0.5]
    assert config.expr_breakpoints("heaviside(x - 0.3, 1) + (0.7 < x)") == [0.3, 0.7]
    assert config.expr_breakpoints("sin(x)") == []
    assert config.expr_breakpoints("y > 0.2") == []


def test_build_dims_and_custom_problem():
    cfg = config.validate({
        "problem": "custom", "discretization": {"n_elem": 4, "s": 1, "p": 2},
        "dims": [{"name": "x", "domain": [0, 2]},
                 {"name": "k", "kind": "param", "domain": [1, 4], "n_elem": 3,
                  "kernel": "lagrange"}],
        "operator": [{"kinds": ["stiffness", {"weighted_mass": "x"}]}],
        "source": [{"factors": ["where(x > 0.3, 1.0, 0.0)", "1"]}],
    })
    dims = config.build_dims(cfg)
    assert dims[0].mesh.n_elem == 5 and 0.3 in np.round(dims[0].mesh.nodes, 12)
    assert dims[1].kind is DimKind.PARAM and dims[1].patch.kernel is Kernel.LAGRANGE
    prob, extra = config.build_problem(cfg)
    assert extra is None and prob.bc.constrained[1].size == 0
    assert list(prob.bc.constrained[0]) == [0, dims[0].n_nodes - 1]
    bad = dict(cfg, operator=[{"kinds": ["stiffness"]}])
    with pytest.raises(ConfigurationError, match="operator/0/kinds"):
        config.build_problem(bad)


def test_named_problem_parameters():
    prob, _ = config.build_problem(config.validate(
        {"problem": "poisson_case2", "params": {"D": 3}, "discretization": {"n_elem": 9, "s": 1, "p": 2},
         "solver": {"max_modes": 2}, "seed": 7}))
    assert len(prob.dims) == 3 and prob.dims[0].mesh.n_elem == 9
    assert prob.dims[0].patch.s == 1 and prob.solver.max_modes == 2 and prob.solver.seed == 7
    with pytest.raises(ConfigurationError, match="params/bogus"):
        config.build_problem(config.validate({"problem": "helmholtz", "params": {"bogus": 1}}))
    with pytest.raises(ConfigurationError, match="n_elem"):
        config.build_problem(config.validate(
            {"problem": "poisson_local_source", "discretization": {"n_elem": 9}}))
