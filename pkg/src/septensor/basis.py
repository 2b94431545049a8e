"""1D meshes, C-HiDeNN shape functions and Gauss-Legendre rules.

A C-HiDeNN shape function on element ``e`` blends the two linear hat
functions of the element with patch functions ``W_i`` built over the
neighbourhood of each element node::

    N~_k(x) = sum_{i in {e, e+1}} N_i(x) * W_i^(k)(x)

Two patch-function kernels are provided.  ``LAGRANGE`` uses the Lagrange
polynomials of the patch nodes.  ``INTERP_MLS`` solves, at every ``x``, the
constrained weighted least-squares problem

    min sum_j W_j^2 / w_j(x)   s.t.  sum_j W_j x_j^q = x^q,  q = 0..p

with singular (interpolating) weights, so ``W_i(x_i) = e_i`` exactly.
Both kernels give partition of unity, the Kronecker delta property and
reproduction of polynomials up to degree ``p``.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditioningError,
    ConfigurationError,
    InvalidArgumentError,
    OutOfDomainError,
)

DOMAIN_TOL = 1e-12
NEAR_NODE_TOL = 1e-12
MAX_MOMENT_COND = 1e12


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Sorted node coordinates; element ``e`` spans ``[nodes[e], nodes[e+1]]``."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64).reshape(-1)
        if nodes.size < 2:
            raise InvalidArgumentError("a mesh needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise InvalidArgumentError("mesh nodes must be finite")
        if not np.all(np.diff(nodes) > 0):
            raise InvalidArgumentError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_elem(self) -> int:
        return self.nodes.size - 1

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def lower(self) -> float:
        return float(self.nodes[0])

    @property
    def upper(self) -> float:
        return float(self.nodes[-1])

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def element_lengths(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, Mesh1D):
            return NotImplemented
        return self.nodes.shape == other.nodes.shape and bool(
            np.all(self.nodes == other.nodes)
        )

    def __hash__(self):
        return hash(self.nodes.tobytes())

    def __repr__(self):
        return f"Mesh1D(n_elem={self.n_elem}, [{self.lower:g}, {self.upper:g}])"


class Kernel(str, enum.Enum):
    LAGRANGE = "lagrange"
    INTERP_MLS = "interp_mls"


@dataclass(frozen=True)
class PatchConfig:
    """Hyperparameters of the C-HiDeNN basis.

    ``s`` is the number of neighbour layers joined to each node's patch,
    ``a`` the dilation of the kernel window and ``p`` the reproducing order.
    ``s = 0`` always yields linear finite-element hat functions.
    """

    s: int = 0
    a: float = 20.0
    p: int = 1
    kernel: Kernel = Kernel.INTERP_MLS

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 0:
            raise ConfigurationError(f"patch size s must be a non-negative integer, got {self.s}")
        if int(self.p) != self.p or self.p < 0:
            raise ConfigurationError(f"reproducing order p must be a non-negative integer, got {self.p}")
        if not np.isfinite(self.a) or self.a <= 0:
            raise ConfigurationError(f"dilation a must be positive, got {self.a}")
        object.__setattr__(self, "s", int(self.s))
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        if self.s > 0 and self.p > 2 * self.s:
            raise ConfigurationError(
                f"p={self.p} exceeds the patch capacity 2s={2 * self.s} for s={self.s}"
            )

    @property
    def shape_degree(self) -> int:
        """Polynomial degree of the shape functions on an element (nominal for MLS)."""
        if self.s == 0:
            return 1
        if self.kernel is Kernel.LAGRANGE:
            return 2 * self.s + 1
        return self.p + 1


def default_quadrature_order(cfg: PatchConfig, weighted: bool = False) -> int:
    g = max(cfg.shape_degree + 1, 2)
    if weighted:
        g += 2
    return min(g, 10)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


@functools.lru_cache(maxsize=None)
def gauss_rule(g: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``g`` points on [-1, 1]."""
    if int(g) != g or not 1 <= g <= 10:
        raise InvalidArgumentError(f"quadrature order must be in 1..10, got {g}")
    pts, wts = np.polynomial.legendre.leggauss(int(g))
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts)


def make_uniform_mesh(x_min: float, x_max: float, n_elem: int) -> Mesh1D:
    if not (np.isfinite(x_min) and np.isfinite(x_max)):
        raise InvalidArgumentError("mesh bounds must be finite")
    if not x_min < x_max:
        raise InvalidArgumentError(f"need x_min < x_max, got [{x_min}, {x_max}]")
    if int(n_elem) != n_elem or n_elem < 1:
        raise InvalidArgumentError(f"n_elem must be a positive integer, got {n_elem}")
    return Mesh1D(np.linspace(x_min, x_max, int(n_elem) + 1))


def make_graded_mesh(breakpoints) -> Mesh1D:
    """Concatenate uniform sub-meshes.

    ``breakpoints`` is a sequence of ``((lo, hi), n_elem)`` pairs whose
    intervals must be contiguous.
    """
    pieces = []
    prev_hi = None
    for (lo, hi), n in breakpoints:
        if prev_hi is not None and not np.isclose(lo, prev_hi, rtol=0, atol=1e-12 * max(1.0, abs(lo))):
            kind = "gap" if lo > prev_hi else "overlap"
            raise InvalidArgumentError(f"{kind} between intervals at {prev_hi} and {lo}")
        sub = make_uniform_mesh(lo, hi, n).nodes
        pieces.append(sub if prev_hi is None else sub[1:])
        prev_hi = hi
    if not pieces:
        raise InvalidArgumentError("graded mesh needs at least one interval")
    return Mesh1D(np.concatenate(pieces))


def _domain_tol(mesh: Mesh1D) -> float:
    return DOMAIN_TOL * mesh.length


def locate_elements(mesh: Mesh1D, xs) -> np.ndarray:
    """Vectorised element lookup; raises with the offending indices."""
    xs = np.asarray(xs, dtype=np.float64)
    tol = _domain_tol(mesh)
    bad = ~((xs >= mesh.lower - tol) & (xs <= mesh.upper + tol))
    if np.any(bad):
        where = np.flatnonzero(bad.reshape(-1))
        raise OutOfDomainError(
            f"{where.size} coordinate(s) outside [{mesh.lower}, {mesh.upper}]", where
        )
    e = np.searchsorted(mesh.nodes, xs, side="right") - 1
    return np.clip(e, 0, mesh.n_elem - 1)


def locate_element(mesh: Mesh1D, x: float) -> int:
    return int(locate_elements(mesh, np.array([x]))[0])


@dataclass(frozen=True)
class BasisEval:
    node_indices: np.ndarray
    values: np.ndarray
    derivs: np.ndarray


@dataclass
class BasisBatch:
    """Padded per-point basis data; ``idx`` is clipped so padding is safe to gather."""

    idx: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    mask: np.ndarray
    elements: np.ndarray = field(default=None)

    @property
    def width(self) -> int:
        return self.idx.shape[1]


class Basis1D:
    """Precomputed C-HiDeNN basis on one mesh.

    Construction caches the per-node patch data; ``evaluate`` then works on
    arrays of points.
    """

    def __init__(self, mesh: Mesh1D, cfg: PatchConfig):
        self.mesh = mesh
        self.cfg = cfg
        n = mesh.n_elem
        s = cfg.s
        self.width = 2 * (s + 1)
        self.patch_width = 2 * s + 1
        nodes = mesh.nodes
        i = np.arange(n + 1)
        self.lo = np.maximum(0, i - s)
        self.hi = np.minimum(n, i + s)
        self.count = self.hi - self.lo + 1
        self.half_bandwidth = int(min(2 * s + 1, n))
        if s == 0:
            return

        self.p_eff = np.minimum(cfg.p, self.count - 1)
        self.center = 0.5 * (nodes[self.lo] + nodes[self.hi])
        self.half = 0.5 * (nodes[self.hi] - nodes[self.lo])
        self.hbar = (nodes[self.hi] - nodes[self.lo]) / (self.count - 1)
        J = self.patch_width
        cols = self.lo[:, None] + np.arange(J)[None, :]
        self.patch_mask = cols <= self.hi[:, None]
        self.patch_nodes = nodes[np.minimum(cols, n)]
        self.patch_xi = np.where(
            self.patch_mask, (self.patch_nodes - self.center[:, None]) / self.half[:, None], 0.0
        )

        for node in range(n + 1):
            q = self.p_eff[node] + 1
            xi = self.patch_xi[node, : self.count[node]]
            P = xi[None, :] ** np.arange(q)[:, None]
            cond = np.linalg.cond(P @ P.T)
            if not np.isfinite(cond) or cond > MAX_MOMENT_COND:
                raise ConditioningError(
                    f"moment system of node {node} is ill-conditioned (cond={cond:.3e})"
                )

        if cfg.kernel is Kernel.LAGRANGE:
            # coef[i, j, q]: coefficient of xi^q in the Lagrange polynomial of patch node j
            coef = np.zeros((n + 1, J, J))
            for node in range(n + 1):
                c = self.count[node]
                V = self.patch_xi[node, :c][:, None] ** np.arange(c)[None, :]
                coef[node, :c, :c] = np.linalg.inv(V).T
            self.coef = coef

    # -- patch functions ---------------------------------------------------
    def _patch_lagrange(self, node, x):
        J = self.patch_width
        xi = (x - self.center[node]) / self.half[node]
        q = np.arange(J)
        powers = xi[:, None] ** q[None, :]
        dpowers = np.zeros_like(powers)
        dpowers[:, 1:] = q[None, 1:] * xi[:, None] ** (q[None, 1:] - 1)
        dpowers /= self.half[node][:, None]
        C = self.coef[node]
        W = np.sum(C * powers[:, None, :], axis=-1)
        dW = np.sum(C * dpowers[:, None, :], axis=-1)
        return W, dW

    def _patch_mls(self, node, x):
        K = x.size
        J = self.patch_width
        W = np.zeros((K, J))
        dW = np.zeros((K, J))
        a = self.cfg.a
        mask = self.patch_mask[node]
        hbar = self.hbar[node]
        r = np.where(mask, (x[:, None] - self.patch_nodes[node]) / hbar[:, None], np.inf)
        absr = np.abs(r)
        near = np.any(absr < NEAR_NODE_TOL, axis=1)
        regular = ~near
        peff = self.p_eff[node]
        for q1 in np.unique(peff[regular]) + 1 if np.any(regular) else []:
            rows = np.flatnonzero(regular & (peff + 1 == q1))
            W[rows], dW[rows] = self._mls_regular(node[rows], x[rows], r[rows], mask[rows], int(q1), a)
        for row in np.flatnonzero(near):
            W[row], dW[row] = self._mls_at_node(int(node[row]), float(x[row]), r[row], mask[row], a)
        return W, dW

    def _mls_regular(self, node, x, r, mask, Q, a):
        # KKT form in the inverse weights r^2 exp(r^2/a^2), which stay bounded
        # as x approaches a node (the weights themselves blow up there)
        K, J = r.shape
        rr = np.where(mask, r, 0.0)
        g = np.exp((rr / a) ** 2)
        d = np.where(mask, rr**2 * g, 1.0)
        dd = np.where(mask, 2.0 * rr * g * (1.0 + (rr / a) ** 2), 0.0) / self.hbar[node][:, None]
        # W is invariant under a pointwise rescaling of the inverse weights
        scale = np.max(np.where(mask, d, 0.0), axis=1, keepdims=True)
        d = d / scale
        dd = dd / scale
        qs = np.arange(Q)
        P = self.patch_xi[node][:, None, :] ** qs[None, :, None]
        P = np.where(mask[:, None, :], P, 0.0)
        xi = (x - self.center[node]) / self.half[node]
        b = xi[:, None] ** qs[None, :]
        db = np.zeros_like(b)
        db[:, 1:] = qs[None, 1:] * xi[:, None] ** (qs[None, 1:] - 1)
        db /= self.half[node][:, None]
        M = np.zeros((K, J + Q, J + Q))
        M[:, np.arange(J), np.arange(J)] = d
        M[:, :J, J:] = np.transpose(P, (0, 2, 1))
        M[:, J:, :J] = P
        rhs = np.concatenate([np.zeros((K, J)), b], axis=1)
        Wv = np.linalg.solve(M, rhs[:, :, None])[:, :J, 0]
        rhs = np.concatenate([-dd * Wv, db], axis=1)
        dWv = np.linalg.solve(M, rhs[:, :, None])[:, :J, 0]
        return Wv, dWv

    def _mls_at_node(self, node, x, r, mask, a):
        J = self.patch_width
        W = np.zeros(J)
        dW = np.zeros(J)
        l = int(np.argmin(np.abs(r)))
        W[l] = 1.0
        Q = int(self.p_eff[node]) + 1
        if Q == 1:
            return W, dW
        others = np.flatnonzero(mask & (np.arange(J) != l))
        ro = r[others]
        w = np.exp(-((ro / a) ** 2)) / ro**2
        xi_nodes = self.patch_xi[node]
        qs = np.arange(1, Q)
        D = xi_nodes[others][None, :] ** qs[:, None] - xi_nodes[l] ** qs[:, None]
        G = (D * w[None, :]) @ D.T
        xi = (x - self.center[node]) / self.half[node]
        db = qs * xi ** (qs - 1) / self.half[node]
        mu = np.linalg.solve(G, db)
        dW[others] = w * (D.T @ mu)
        dW[l] = -np.sum(dW[others])
        return W, dW

    # -- public ------------------------------------------------------------
    def evaluate(self, xs) -> BasisBatch:
        """Shape function values and derivatives at each point of ``xs``."""
        xs = np.asarray(xs, dtype=np.float64).reshape(-1)
        mesh = self.mesh
        n = mesh.n_elem
        e = locate_elements(mesh, xs)
        tol = _domain_tol(mesh)
        x = np.clip(xs, mesh.lower, mesh.upper) if tol > 0 else xs
        xl = mesh.nodes[e]
        xr = mesh.nodes[e + 1]
        h = xr - xl
        nl = (xr - x) / h
        nr = (x - xl) / h
        K = x.size
        U = self.width
        s = self.cfg.s
        if s == 0:
            idx = np.stack([e, e + 1], axis=1)
            vals = np.stack([nl, nr], axis=1)
            ders = np.stack([-1.0 / h, 1.0 / h], axis=1)
            return BasisBatch(idx, vals, ders, np.ones((K, 2), dtype=bool), e)

        patch = self._patch_lagrange if self.cfg.kernel is Kernel.LAGRANGE else self._patch_mls
        WL, dWL = patch(e, x)
        WR, dWR = patch(e + 1, x)
        u0 = np.maximum(0, e - s)
        vals = np.zeros((K, U))
        ders = np.zeros((K, U))
        J = self.patch_width
        rows = np.arange(K)[:, None]
        colL = (self.lo[e] - u0)[:, None] + np.arange(J)[None, :]
        colR = (self.lo[e + 1] - u0)[:, None] + np.arange(J)[None, :]
        vals[rows, colL] += nl[:, None] * WL
        ders[rows, colL] += -WL / h[:, None] + nl[:, None] * dWL
        vals[rows, colR] += nr[:, None] * WR
        ders[rows, colR] += WR / h[:, None] + nr[:, None] * dWR
        idx = u0[:, None] + np.arange(U)[None, :]
        top = np.minimum(n, e + 1 + s)
        mask = idx <= top[:, None]
        idx = np.minimum(idx, n)
        vals[~mask] = 0.0
        ders[~mask] = 0.0
        return BasisBatch(idx, vals, ders, mask, e)

    def evaluate_point(self, x: float) -> BasisEval:
        batch = self.evaluate(np.array([x], dtype=np.float64))
        keep = batch.mask[0]
        return BasisEval(batch.idx[0, keep], batch.values[0, keep], batch.derivs[0, keep])

    def interpolate(self, coeffs, xs) -> np.ndarray:
        batch = self.evaluate(xs)
        return np.sum(batch.values * np.asarray(coeffs)[batch.idx], axis=1)


@functools.lru_cache(maxsize=256)
def get_basis(mesh: Mesh1D, cfg: PatchConfig) -> Basis1D:
    return Basis1D(mesh, cfg)


def eval_basis(mesh: Mesh1D, cfg: PatchConfig, x: float) -> BasisEval:
    return get_basis(mesh, cfg).evaluate_point(x)
