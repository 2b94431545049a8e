"""1D Galerkin matrices/loads and separable operator and source descriptions."""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .banded import BandedMatrix, banded_lu_solve  # noqa: F401  (re-export)
from .basis import Kernel, Mesh1D, PatchConfig, default_quadrature_order, gauss_rule, get_basis
from .errors import AssemblyError, ConfigurationError, InvalidArgumentError
from .field import DimKind, DimensionSpec


class OpTag(str, enum.Enum):
    MASS = "mass"
    STIFFNESS = "stiffness"
    CONVECTION = "convection"
    WEIGHTED_MASS = "weighted_mass"
    WEIGHTED_STIFFNESS = "weighted_stiffness"


@dataclass(frozen=True)
class Op1DKind:
    """Kind of 1D bilinear form; weighted kinds carry a coefficient ``w(x)``.

    CONVECTION is ``int N_k N_l'``: test function on the left, derivative on the trial.
    """

    tag: OpTag
    weight: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "tag", OpTag(self.tag))
        weighted = self.tag in (OpTag.WEIGHTED_MASS, OpTag.WEIGHTED_STIFFNESS)
        if weighted and not callable(self.weight):
            raise InvalidArgumentError(f"{self.tag.value} needs a callable weight")
        if not weighted and self.weight is not None:
            raise InvalidArgumentError(f"{self.tag.value} takes no weight")

    @property
    def weighted(self) -> bool:
        return self.weight is not None


MASS = Op1DKind(OpTag.MASS)
STIFFNESS = Op1DKind(OpTag.STIFFNESS)
CONVECTION = Op1DKind(OpTag.CONVECTION)


def weighted_mass(w: Callable) -> Op1DKind:
    return Op1DKind(OpTag.WEIGHTED_MASS, w)


def weighted_stiffness(w: Callable) -> Op1DKind:
    return Op1DKind(OpTag.WEIGHTED_STIFFNESS, w)


def identity_weight(x):
    return np.asarray(x, dtype=np.float64)


MLS_SUBCELLS = 4
MLS_POINTS = 8


def quadrature_scheme(cfg: PatchConfig, quad_order: int | None = None):
    """(points per cell, cells per element) shared by every bilinear form and load.

    Interpolating-MLS shapes are rational in x, so they get a composite rule;
    polynomial shapes use a single Gauss rule with room for a smooth weight.
    """
    if cfg.s > 0 and cfg.kernel == Kernel.INTERP_MLS:
        g, sub = MLS_POINTS, MLS_SUBCELLS
    else:
        g, sub = min(max(default_quadrature_order(cfg), cfg.p + 3), 10), 1
    if quad_order is None:
        return g, sub
    if quad_order < g:
        raise InvalidArgumentError(f"quadrature order {quad_order} is below the default {g}")
    return int(quad_order), sub


def quadrature_points(mesh: Mesh1D, g: int, sub: int = 1):
    """Gauss points of ``sub`` equal cells per element, element-major; returns (x, w, element)."""
    rule = gauss_rule(g)
    t = np.arange(sub) / sub
    h = np.diff(mesh.nodes)
    xl = (mesh.nodes[:-1, None] + t[None, :] * h[:, None]).reshape(-1, 1)
    hc = np.repeat(h / sub, sub)[:, None]
    xq = xl + 0.5 * (1.0 + rule.points[None, :]) * hc
    wq = 0.5 * hc * rule.weights[None, :]
    elem = np.repeat(np.arange(mesh.n_elem), sub * g)
    return xq.ravel(), wq.ravel(), elem


def _eval_weight(w: Callable, xq, elem, what: str) -> np.ndarray:
    vals = np.broadcast_to(np.asarray(w(xq), dtype=np.float64), xq.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        e = int(elem[np.argmax(bad)])
        raise AssemblyError(f"non-finite {what} at a quadrature point of element {e}", element=e)
    return vals


def assemble_matrix(mesh: Mesh1D, cfg: PatchConfig, kind: Op1DKind,
                    quad_order: int | None = None) -> BandedMatrix:
    basis = get_basis(mesh, cfg)
    xq, wq, elem = quadrature_points(mesh, *quadrature_scheme(cfg, quad_order))
    if kind.weighted:
        wq = wq * _eval_weight(kind.weight, xq, elem, "weight")
    bb = basis.evaluate(xq)
    vals = np.where(bb.mask, bb.values, 0.0)
    ders = np.where(bb.mask, bb.derivs, 0.0)
    tag = kind.tag
    if tag in (OpTag.MASS, OpTag.WEIGHTED_MASS):
        test, trial = vals, vals
    elif tag in (OpTag.STIFFNESS, OpTag.WEIGHTED_STIFFNESS):
        test, trial = ders, ders
    else:
        test, trial = vals, ders
    local = wq[:, None, None] * test[:, :, None] * trial[:, None, :]
    n = mesh.n_nodes
    u = basis.half_bandwidth
    rows = np.broadcast_to(bb.idx[:, :, None], local.shape)
    cols = np.broadcast_to(bb.idx[:, None, :], local.shape)
    keep = bb.mask[:, :, None] & bb.mask[:, None, :]
    r, c, v = rows[keep], cols[keep], local[keep]
    flat = (u + r - c) * n + c
    bands = np.bincount(flat, weights=v, minlength=(2 * u + 1) * n).reshape(2 * u + 1, n)
    return BandedMatrix(bands, u)


@functools.lru_cache(maxsize=512)
def cached_matrix(mesh: Mesh1D, cfg: PatchConfig, kind: Op1DKind,
                  quad_order: int | None = None) -> BandedMatrix:
    m = assemble_matrix(mesh, cfg, kind, quad_order)
    m.bands.setflags(write=False)
    return m


def mass_matrix(mesh: Mesh1D, cfg: PatchConfig) -> BandedMatrix:
    return cached_matrix(mesh, cfg, MASS)


def assemble_load(mesh: Mesh1D, cfg: PatchConfig, g: Callable,
                  quad_order: int | None = None) -> np.ndarray:
    """F_k = int N_k(x) g(x) dx."""
    basis = get_basis(mesh, cfg)
    xq, wq, elem = quadrature_points(mesh, *quadrature_scheme(cfg, quad_order))
    gv = _eval_weight(g, xq, elem, "source")
    bb = basis.evaluate(xq)
    contrib = np.where(bb.mask, bb.values, 0.0) * (wq * gv)[:, None]
    return np.bincount(bb.idx[bb.mask], weights=contrib[bb.mask], minlength=mesh.n_nodes)


def basis_matrix(mesh: Mesh1D, cfg: PatchConfig, xs) -> np.ndarray:
    """Dense ``(len(xs), n+1)`` matrix of shape-function values."""
    bb = get_basis(mesh, cfg).evaluate(xs)
    out = np.zeros((len(bb.idx), mesh.n_nodes))
    rows = np.broadcast_to(np.arange(len(bb.idx))[:, None], bb.idx.shape)
    np.add.at(out, (rows[bb.mask], bb.idx[bb.mask]), bb.values[bb.mask])
    return out


def assemble_load_2d(mesh_a: Mesh1D, cfg_a: PatchConfig, mesh_b: Mesh1D, cfg_b: PatchConfig,
                     g: Callable, quad_order: int | None = None) -> np.ndarray:
    """B[k, l] = int int N_k(a) N_l(b) g(a, b) for a non-separable 2D factor."""
    xa, wa, ea = quadrature_points(mesh_a, *quadrature_scheme(cfg_a, quad_order))
    xb, wb, _ = quadrature_points(mesh_b, *quadrature_scheme(cfg_b, quad_order))
    gv = np.asarray(g(xa[:, None], xb[None, :]), dtype=np.float64)
    gv = np.broadcast_to(gv, (xa.size, xb.size))
    bad = ~np.isfinite(gv)
    if bad.any():
        e = int(ea[np.argwhere(bad)[0, 0]])
        raise AssemblyError(f"non-finite source at a quadrature point of element {e}", element=e)
    Sa = basis_matrix(mesh_a, cfg_a, xa) * wa[:, None]
    Sb = basis_matrix(mesh_b, cfg_b, xb) * wb[:, None]
    return Sa.T @ gv @ Sb


def low_rank_terms(B: np.ndarray, rtol: float = 1e-14):
    """Split a load matrix into rank-1 pairs (u_r, v_r) by SVD."""
    U, sv, Vt = np.linalg.svd(B, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        return []
    keep = sv > rtol * sv[0]
    return [(U[:, r] * sv[r], Vt[r].copy()) for r in np.flatnonzero(keep)]


# ---------------------------------------------------------------------------
# separable operators and sources


@dataclass(frozen=True)
class SeparableOperatorTerm:
    coeff: float
    kinds: tuple

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "coeff", float(self.coeff))
        if not np.isfinite(self.coeff):
            raise InvalidArgumentError("operator coefficient must be finite")


@dataclass(frozen=True)
class SeparableOperator:
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.terms:
            D = len(self.terms[0].kinds)
            if any(len(t.kinds) != D for t in self.terms):
                raise InvalidArgumentError("operator terms disagree on the number of dimensions")

    @property
    def n_dims(self) -> int:
        return len(self.terms[0].kinds) if self.terms else 0

    def __add__(self, other: "SeparableOperator") -> "SeparableOperator":
        return SeparableOperator(self.terms + other.terms)

    def matrices(self, dims: Sequence[DimensionSpec]):
        """Per-term list of per-dim banded matrices."""
        if len(dims) != self.n_dims:
            raise InvalidArgumentError(f"operator has {self.n_dims} dims, field has {len(dims)}")
        return [[cached_matrix(d.mesh, d.patch, k) for d, k in zip(dims, t.kinds)]
                for t in self.terms]


@dataclass(frozen=True)
class SourceTerm:
    """Rank-1 source ``coeff * prod_d g_d(x_d)``.

    Each factor is a callable of one coordinate or an already assembled load vector.
    """

    factors: tuple
    coeff: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "coeff", float(self.coeff))


@dataclass(frozen=True)
class SeparableSource:
    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def __add__(self, other: "SeparableSource") -> "SeparableSource":
        return SeparableSource(self.terms + other.terms)

    def load_vectors(self, dims: Sequence[DimensionSpec]):
        """Per-term list of per-dim load vectors, coefficient folded into dim 0."""
        out = []
        for t in self.terms:
            if len(t.factors) != len(dims):
                raise InvalidArgumentError(
                    f"source term has {len(t.factors)} factors, field has {len(dims)} dims")
            vecs = []
            for d, f in zip(dims, t.factors):
                if callable(f):
                    v = assemble_load(d.mesh, d.patch, f)
                else:
                    v = np.asarray(f, dtype=np.float64)
                    if v.shape != (d.mesh.n_nodes,):
                        raise InvalidArgumentError(
                            f"load vector for {d.name!r} has shape {v.shape}, expected ({d.mesh.n_nodes},)")
                    if not np.all(np.isfinite(v)):
                        raise AssemblyError(f"non-finite load vector for {d.name!r}")
                vecs.append(v)
            vecs[0] = vecs[0] * t.coeff
            out.append(vecs)
        return out

    def evaluate(self, points) -> np.ndarray:
        """Pointwise value of the source; only valid when every factor is callable."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        total = np.zeros(pts.shape[0])
        for t in self.terms:
            if not all(callable(f) for f in t.factors):
                raise InvalidArgumentError("pre-assembled source factors cannot be evaluated pointwise")
            prod = np.full(pts.shape[0], t.coeff)
            for d, f in enumerate(t.factors):
                prod = prod * np.asarray(f(pts[:, d]), dtype=np.float64)
            total += prod
        return total


def _kinds_with(D: int, fill: Op1DKind, **at) -> tuple:
    kinds = [fill] * D
    for i, k in at.items():
        kinds[int(i[1:])] = k
    return tuple(kinds)


def make_poisson_operator(dims: Sequence[DimensionSpec]) -> SeparableOperator:
    """Weak form of ``Laplace(u)``: ``-sum_i int grad_i v grad_i u``."""
    D = len(dims)
    space = [i for i, d in enumerate(dims) if d.kind == DimKind.SPACE]
    if not space:
        raise ConfigurationError("Poisson operator needs at least one SPACE dimension")
    return SeparableOperator(
        [SeparableOperatorTerm(-1.0, _kinds_with(D, MASS, **{f"d{i}": STIFFNESS})) for i in space])


def make_helmholtz_operator(dims: Sequence[DimensionSpec], k: float) -> SeparableOperator:
    """Weak form of ``Laplace(u) + k^2 u``."""
    lap = make_poisson_operator(dims)
    return lap + SeparableOperator([SeparableOperatorTerm(float(k) ** 2, (MASS,) * len(dims))])


def make_heat_operator(dims: Sequence[DimensionSpec], conductivity: float | None = None) -> SeparableOperator:
    """Weak form of ``du/dt - k Laplace(u)``.

    Without ``conductivity`` the conductivity is a PARAM dimension named ``k``.
    """
    D = len(dims)
    times = [i for i, d in enumerate(dims) if d.kind == DimKind.TIME]
    space = [i for i, d in enumerate(dims) if d.kind == DimKind.SPACE]
    if len(times) != 1:
        raise ConfigurationError(f"heat operator needs exactly one TIME dimension, got {len(times)}")
    if not space:
        raise ConfigurationError("heat operator needs at least one SPACE dimension")
    it = times[0]
    terms = [SeparableOperatorTerm(1.0, _kinds_with(D, MASS, **{f"d{it}": CONVECTION}))]
    if conductivity is None:
        ks = [i for i, d in enumerate(dims) if d.kind == DimKind.PARAM and d.name == "k"]
        if len(ks) != 1:
            raise ConfigurationError("heat operator needs a PARAM dimension named 'k'")
        kk = weighted_mass(identity_weight)
        for i in space:
            terms.append(SeparableOperatorTerm(
                1.0, _kinds_with(D, MASS, **{f"d{i}": STIFFNESS, f"d{ks[0]}": kk})))
    else:
        c = float(conductivity)
        if not c > 0:
            raise ConfigurationError("conductivity must be positive")
        for i in space:
            terms.append(SeparableOperatorTerm(c, _kinds_with(D, MASS, **{f"d{i}": STIFFNESS})))
    return SeparableOperator(terms)
