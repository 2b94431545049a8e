"""Recover parametric inputs of a separable field from space-time observations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError, OutOfDomainError
from .field import DimKind, SeparableField
from .trainer import Adam

log = logging.getLogger(__name__)

# below this residual norm the l2 loss is replaced by its square
RESID_GUARD = 1e-14


@dataclass(frozen=True)
class InverseConfig:
    free_dims: tuple
    box: dict = field(default_factory=dict)   # name -> (lo, hi); default is the dim's domain
    learning_rate: float = 0.1
    max_steps: int = 1000
    grad_tol: float = 1e-8
    n_restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "free_dims", tuple(self.free_dims))
        if not self.free_dims:
            raise ConfigurationError("no free dimensions given")
        if not self.learning_rate > 0 or self.max_steps < 0 or self.n_restarts < 1:
            raise ConfigurationError("learning_rate > 0, max_steps >= 0 and n_restarts >= 1 required")


@dataclass
class TargetField:
    """Observations u*(points); columns follow the field's non-free dims in order."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size == 0:
            raise InvalidArgumentError("target has no samples")
        if self.points.shape[0] != self.values.size:
            raise InvalidArgumentError("target points and values disagree in length")


@dataclass
class InverseResult:
    params: dict
    loss: float
    converged: bool
    restart: int
    steps: list            # steps taken per restart
    traces: list           # best-so-far loss per step, per restart
    iterates: list         # (steps+1, n_free) parameter history per restart


def _factors_at(f: SeparableField, d: int, xs, deriv: bool = False):
    """(len(xs), M) mode factors of dim d, or their x-derivatives."""
    bb = f.dims[d].basis.evaluate(np.asarray(xs, dtype=np.float64))
    vals = np.where(bb.mask, bb.derivs if deriv else bb.values, 0.0)
    C = f.coeffs[d]
    out = np.zeros((vals.shape[0], C.shape[0]))
    for w in range(bb.width):
        out += vals[:, w, None] * C[:, bb.idx[:, w]].T
    return out


def eval_param_grad(f: SeparableField, point, d) -> float:
    """d(Ju)/dx_d at ``point`` by the product rule over modes."""
    pt = np.asarray(point, dtype=np.float64).reshape(-1)
    if pt.size != f.n_dims:
        raise InvalidArgumentError(f"point must have {f.n_dims} coordinates")
    d = f.names.index(d) if isinstance(d, str) else int(d)
    prod = np.ones(f.n_modes)
    for e in range(f.n_dims):
        prod = prod * _factors_at(f, e, pt[e:e + 1], deriv=(e == d))[0]
    return float(prod.sum())


def _resolve(f: SeparableField, cfg: InverseConfig):
    names = f.names
    free = []
    for name in cfg.free_dims:
        if name not in names:
            raise ConfigurationError(f"unknown free dimension {name!r}")
        if f.dims[names.index(name)].kind != DimKind.PARAM:
            raise ConfigurationError(f"free dimension {name!r} is not a parameter dimension")
        free.append(names.index(name))
    lo, hi = [], []
    for i in free:
        mesh = f.dims[i].mesh
        a, b = cfg.box.get(names[i], (mesh.lower, mesh.upper))
        if not (mesh.lower <= a <= b <= mesh.upper):
            raise ConfigurationError(f"box for {names[i]!r} must lie inside [{mesh.lower}, {mesh.upper}]")
        lo.append(float(a))
        hi.append(float(b))
    return free, np.array(lo), np.array(hi)


def invert(f: SeparableField, target: TargetField, cfg: InverseConfig) -> InverseResult:
    """Projected Adam on ||Ju(., x_p) - u*||_2 over the box, best of several restarts.

    Adam runs in box-normalized coordinates so one learning rate suits
    parameters of any magnitude.
    """
    free, lo, hi = _resolve(f, cfg)
    fixed = [i for i in range(f.n_dims) if i not in free]
    if target.points.shape[1] != len(fixed):
        raise InvalidArgumentError(
            f"target points need {len(fixed)} columns ({', '.join(f.names[i] for i in fixed)})")
    # the non-free factors never change
    base = np.ones((target.values.size, f.n_modes))
    for col, i in enumerate(fixed):
        mesh = f.dims[i].mesh
        xs = target.points[:, col]
        if np.any(xs < mesh.lower) or np.any(xs > mesh.upper):
            bad = np.flatnonzero((xs < mesh.lower) | (xs > mesh.upper))
            raise OutOfDomainError(f"target points leave dim {f.names[i]!r}", indices=bad)
        base *= _factors_at(f, i, xs)
    u_star = target.values
    width = hi - lo

    def loss_grad(x):
        g = [_factors_at(f, i, x[j:j + 1])[0] for j, i in enumerate(free)]
        dg = [_factors_at(f, i, x[j:j + 1], deriv=True)[0] for j, i in enumerate(free)]
        prod = np.prod(g, axis=0)
        r = base @ prod - u_star
        nr = float(np.linalg.norm(r))
        grad = np.empty(len(free))
        for j in range(len(free)):
            others = np.prod([g[k] for k in range(len(free)) if k != j], axis=0) \
                if len(free) > 1 else np.ones(f.n_modes)
            J = base @ (dg[j] * others)
            grad[j] = (J @ r) / nr if nr >= RESID_GUARD else 2.0 * (J @ r)
        return nr, grad

    to_x = lambda xi: np.clip(lo + xi * width, lo, hi)
    rng = np.random.default_rng(cfg.seed)
    names = [f.names[i] for i in free]
    if np.all(width == 0):
        loss, _ = loss_grad(lo)
        return InverseResult(dict(zip(names, lo.tolist())), loss, True, 0, [0], [[loss]],
                             [lo[None, :].copy()])

    best = (np.inf, None, 0)
    steps_all, traces, iterates = [], [], []
    converged_any = False
    for rs in range(cfg.n_restarts):
        xi = rng.uniform(0.0, 1.0, len(free))
        xi[width == 0] = 0.0
        opt = Adam([xi.shape], cfg.learning_rate)
        x = to_x(xi)
        loss, g = loss_grad(x)
        run_best, run_x = loss, x.copy()
        trace, hist = [loss], [x.copy()]
        steps = 0
        conv = False
        for _ in range(cfg.max_steps):
            gxi = g * width
            if np.linalg.norm(gxi) < cfg.grad_tol:
                conv = True
                break
            params = [xi]
            opt.step(params, [gxi])
            xi = np.clip(params[0], 0.0, 1.0)
            xi[width == 0] = 0.0
            x = to_x(xi)
            loss, g = loss_grad(x)
            steps += 1
            if loss < run_best:
                run_best, run_x = loss, x.copy()
            trace.append(run_best)
            hist.append(x.copy())
        steps_all.append(steps)
        traces.append(trace)
        iterates.append(np.array(hist))
        converged_any |= conv
        if run_best < best[0]:
            best = (run_best, run_x, rs)
    if not converged_any:
        log.info("no restart reached grad_tol=%g; returning best iterate", cfg.grad_tol)
    return InverseResult(dict(zip(names, best[1].tolist())), float(best[0]), converged_any,
                         best[2], steps_all, traces, iterates)
