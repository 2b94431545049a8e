"""Data-free separable solver: greedy rank-1 enrichment with alternating per-dimension solves."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .assembly import SeparableOperator, SeparableSource, cached_matrix, mass_matrix
from .banded import BandedMatrix, banded_lu_solve
from .errors import (ConfigurationError, InvalidArgumentError, SingularMatrixError,
                     SolverError, UnsupportedError)
from .field import DimensionSpec, SeparableField, same_dims

log = logging.getLogger(__name__)

# right-hand side counts as vanished below this fraction of its contributions
NEGLIGIBLE = 1e-13


@dataclass(frozen=True)
class DirichletSpec:
    """Homogeneous constraints per dimension plus an optional lift carrying boundary data."""

    constrained: tuple = ()
    lift: SeparableField | None = None

    def __post_init__(self):
        object.__setattr__(self, "constrained",
                           tuple(np.unique(np.asarray(c, dtype=np.int64)) for c in self.constrained))

    @classmethod
    def none(cls, dims) -> "DirichletSpec":
        return cls(tuple(() for _ in dims))

    @classmethod
    def boundary(cls, dims, which=None, lift=None) -> "DirichletSpec":
        """Constrain end nodes. ``which`` maps dim name -> 'both' | 'lower' | 'upper' | 'none'.

        Unlisted dims default to 'both' for SPACE and 'none' otherwise.
        """
        which = dict(which or {})
        out = []
        for d in dims:
            mode = which.get(d.name, "both" if d.kind.value == "space" else "none")
            n = d.n_nodes - 1
            out.append({"both": (0, n), "lower": (0,), "upper": (n,), "none": ()}[mode])
        return cls(tuple(out), lift)

    def validate(self, dims) -> None:
        if len(self.constrained) != len(dims):
            raise InvalidArgumentError(
                f"constraints given for {len(self.constrained)} dims, field has {len(dims)}")
        for d, c in zip(dims, self.constrained):
            if c.size and (c.min() < 0 or c.max() >= d.n_nodes):
                raise InvalidArgumentError(f"constrained index out of range in dim {d.name!r}")
            if c.size >= d.n_nodes:
                raise ConfigurationError(f"every DOF of dim {d.name!r} is constrained")
        if self.lift is not None and not same_dims(self.lift.dims, dims):
            raise InvalidArgumentError("lift lives on different dims")


@dataclass(frozen=True)
class SolverConfig:
    max_modes: int = 10
    max_subspace_iters: int = 5
    iter_tol: float = 1e-6
    mode_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if int(self.max_modes) < 1 or int(self.max_subspace_iters) < 1:
            raise ConfigurationError("max_modes and max_subspace_iters must be positive")
        if not (self.iter_tol > 0 and self.mode_tol > 0):
            raise ConfigurationError("tolerances must be positive")


@dataclass
class SolveReport:
    config: dict
    modes_used: int = 0
    iterations: list = field(default_factory=list)
    changes: list = field(default_factory=list)
    energy_increments: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def apply_dirichlet(A: BandedMatrix, Q, constrained, diag: float = 1.0):
    """Symmetric elimination of homogeneous constraints; returns new (A, Q).

    Constrained rows get ``diag`` on the diagonal (unit by default).
    """
    c = np.asarray(constrained, dtype=np.int64)
    n, u = A.size, A.half_bandwidth
    if c.size >= n:
        raise ConfigurationError("all DOFs constrained")
    A = A.copy()
    Q = np.array(Q, dtype=np.float64, copy=True)
    if c.size == 0:
        return A, Q
    cols = np.arange(n)
    for k in range(-min(u, n - 1), min(u, n - 1) + 1):
        row = cols + k  # A[row, col] stored at bands[u + k, col]
        hit = np.isin(row, c) | np.isin(cols, c)
        hit &= (row >= 0) & (row < n)
        A.bands[u + k, hit] = 0.0
    A.bands[u, c] = diag
    Q[c] = 0.0
    return A, Q


def make_lift_for_separable_boundary(dims: Sequence[DimensionSpec], data) -> SeparableField:
    """Nodal interpolation of boundary data given as a list of rank-1 terms.

    Each term is a sequence with one entry per dim: a callable of one coordinate,
    a constant, or an array of nodal values.
    """
    dims = tuple(dims)
    if callable(data):
        raise UnsupportedError("boundary data must be a sum of per-dimension products")
    vecs = [[] for _ in dims]
    for term in data:
        if callable(term) or len(term) != len(dims):
            raise UnsupportedError("each boundary term needs one factor per dimension")
        for d, (dim, g) in enumerate(zip(dims, term)):
            if callable(g):
                v = np.asarray(g(dim.mesh.nodes), dtype=np.float64)
                v = np.broadcast_to(v, dim.mesh.nodes.shape)
            elif np.isscalar(g):
                v = np.full(dim.n_nodes, float(g))
            elif np.shape(g) == (dim.n_nodes,):
                v = np.asarray(g, dtype=np.float64)
            else:
                raise UnsupportedError(f"unsupported boundary factor {g!r}")
            vecs[d].append(v)
    if not vecs[0]:
        return SeparableField(dims)
    f = SeparableField(dims, [np.array(v) for v in vecs])
    keep = [m for m in range(f.n_modes) if all(np.any(c[m] != 0) for c in f.coeffs)]
    return SeparableField(dims, [c[keep] for c in f.coeffs])


class _System:
    """Cached 1D matrices, loads and prior-mode products for one solve."""

    def __init__(self, op: SeparableOperator, src: SeparableSource, dims):
        self.dims = tuple(dims)
        self.D = len(self.dims)
        if not op.terms:
            raise ConfigurationError("operator has no terms")
        self.coeffs = np.array([t.coeff for t in op.terms])
        self.mats = op.matrices(self.dims)
        self.loads = src.load_vectors(self.dims)
        self.masses = [mass_matrix(d.mesh, d.patch) for d in self.dims]
        self.set_prior(SeparableField(self.dims))

    def set_prior(self, prior: SeparableField):
        self.prior = prior
        # KV[t][d] : (n_d, M_prior) = K_{t,d} V_d^T
        self.KV = [[K.matmat(prior.coeffs[d].T) for d, K in enumerate(row)] for row in self.mats]

    def add_prior_mode(self, vecs):
        self.prior = self.prior.add_mode(vecs)
        for t, row in enumerate(self.mats):
            for d, K in enumerate(row):
                self.KV[t][d] = np.column_stack([self.KV[t][d], K.matvec(vecs[d])])

    def build(self, vecs, d: int):
        D = self.D
        # per-term, per-dim scalars u^T K u and per-term, per-dim prior contractions
        A = None
        Q = np.zeros(self.dims[d].n_nodes)
        scale_q = 0.0
        for t, row in enumerate(self.mats):
            scale = self.coeffs[t]
            hist = np.full(self.prior.n_modes, self.coeffs[t])
            for e in range(D):
                if e == d:
                    continue
                scale *= row[e].quad(vecs[e], vecs[e])
                hist = hist * (vecs[e] @ self.KV[t][e])
            term = row[d] * scale
            A = term if A is None else A + term
            if hist.size:
                h = self.KV[t][d] @ hist
                Q -= h
                scale_q += float(np.abs(h).max())
        for load in self.loads:
            w = 1.0
            for e in range(D):
                if e != d:
                    w *= float(vecs[e] @ load[e])
            Q += load[d] * w
            scale_q += float(np.abs(load[d]).max()) * abs(w)
        return A, Q, scale_q


def build_dim_system(op: SeparableOperator, src: SeparableSource, prior: SeparableField,
                     vecs, d: int):
    """(A_d, Q_d) for dimension ``d`` with the other current-mode vectors held fixed."""
    sys = _System(op, src, prior.dims)
    sys.set_prior(prior)
    return sys.build([np.asarray(v, dtype=np.float64) for v in vecs], d)[:2]


def _normalize(vecs):
    """Unit norm and positive dominant entry on dims 1.., scale folded into dim 0."""
    out = [v.copy() for v in vecs]
    for d in range(1, len(out)):
        nrm = np.linalg.norm(out[d])
        if nrm == 0:
            return out
        sign = 1.0 if out[d][np.argmax(np.abs(out[d]))] >= 0 else -1.0
        out[d] *= sign / nrm
        out[0] *= sign * nrm
    return out


def _rel_change(new, old) -> float:
    worst = 0.0
    for a, b in zip(new, old):
        nb = np.linalg.norm(b)
        worst = max(worst, np.linalg.norm(a - b) / nb if nb > 0 else np.inf)
    return worst


def solve(op: SeparableOperator, src: SeparableSource, dims: Sequence[DimensionSpec],
          bc: DirichletSpec | None = None, cfg: SolverConfig | None = None):
    """Greedy separable solve; returns (field, report). Lift modes, if any, come first."""
    t0 = time.perf_counter()
    dims = tuple(dims)
    cfg = cfg or SolverConfig()
    bc = bc or DirichletSpec.none(dims)
    bc.validate(dims)
    report = SolveReport(config=asdict(cfg))
    sys = _System(op, src, dims)
    lift = bc.lift if bc.lift is not None else SeparableField(dims)
    sys.set_prior(lift)
    rng = np.random.default_rng(cfg.seed)

    # running ||field||^2 via Gram products
    G = np.ones((lift.n_modes, lift.n_modes))
    for d in range(len(dims)):
        G *= lift.coeffs[d] @ sys.masses[d].matmat(lift.coeffs[d].T)
    norm2 = float(G.sum())

    for m in range(int(cfg.max_modes)):
        vecs = []
        for d, dim in enumerate(dims):
            v = rng.uniform(-1.0, 1.0, dim.n_nodes)
            v[bc.constrained[d]] = 0.0
            vecs.append(v / np.linalg.norm(v))
        history = []
        zero = False
        for it in range(int(cfg.max_subspace_iters)):
            old = [v.copy() for v in vecs]
            for d in range(len(dims)):
                A, Q, scale_q = sys.build(vecs, d)
                free = np.setdiff1d(np.arange(A.size), bc.constrained[d])
                if np.abs(Q[free]).max(initial=0.0) <= NEGLIGIBLE * scale_q:
                    zero = True
                    break
                diag = float(np.mean(np.abs(A.bands[A.half_bandwidth, free]))) or 1.0
                A, Q = apply_dirichlet(A, Q, bc.constrained[d], diag=diag)
                try:
                    vecs[d] = banded_lu_solve(A, Q)
                except SingularMatrixError as exc:
                    raise SolverError(f"singular system in dim {dims[d].name!r} for mode {m}: {exc}",
                                      dim=dims[d].name, mode=m) from None
                if not np.any(vecs[d]):
                    zero = True
                    break
            if zero:
                break
            vecs = _normalize(vecs)
            history.append(_rel_change(vecs, old))
            if history[-1] < cfg.iter_tol:
                break
        report.iterations.append(len(history))
        report.changes.append(history)
        if zero:
            report.energy_increments.append(0.0)
            log.info("mode %d vanished; stopping", m)
            break
        if history and history[-1] >= cfg.iter_tol:
            msg = f"mode {m}: subspace iteration stopped at change {history[-1]:.3e}"
            report.warnings.append(msg)
            log.debug(msg)
        # energy of the new mode and of the updated field
        cross = np.ones(sys.prior.n_modes)
        self_e = 1.0
        for d in range(len(dims)):
            Mv = sys.masses[d].matvec(vecs[d])
            cross = cross * (sys.prior.coeffs[d] @ Mv)
            self_e *= float(vecs[d] @ Mv)
        norm2 = norm2 + 2.0 * float(cross.sum()) + self_e
        rel = np.sqrt(max(self_e, 0.0)) / np.sqrt(norm2) if norm2 > 0 else 0.0
        report.energy_increments.append(float(rel))
        sys.add_prior_mode(vecs)
        report.modes_used += 1
        if rel < cfg.mode_tol:
            break

    report.wall_time = time.perf_counter() - t0
    return sys.prior, report
