"""Independent reference solvers, error metrics and Karhunen-Loeve machinery.

Nothing here goes through the separable solver; the finite-difference solvers
use scipy sparse/banded solves and sine transforms, the dense Galerkin
reference assembles the full tensor-product system.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SeparableOperator, SeparableSource, quadrature_points, quadrature_scheme
from .basis import Mesh1D, PatchConfig, get_basis
from .errors import InvalidArgumentError, OracleError, UndefinedMetricError
from .field import SeparableField, inner_product_l2, same_dims

# ---------------------------------------------------------------------------
# metrics


def rel_l2_pointwise(pred, exact) -> float:
    """sqrt(sum (pred - exact)^2) / sqrt(sum exact^2)."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    exact = np.asarray(exact, dtype=np.float64).ravel()
    if pred.shape != exact.shape:
        raise InvalidArgumentError(f"length mismatch: {pred.size} vs {exact.size}")
    den = np.linalg.norm(exact)
    if den == 0:
        raise UndefinedMetricError("reference values are all zero")
    return float(np.linalg.norm(pred - exact) / den)


def rel_l2_integral(f: SeparableField, g: SeparableField) -> float:
    """||f - g||_L2 / ||g||_L2 through exact Gram products.

    The squared difference is formed by expansion, so values below ~1e-8 are
    at the round-off floor.
    """
    if not same_dims(f.dims, g.dims):
        raise InvalidArgumentError("fields live on different dimension sets")
    gg = inner_product_l2(g, g)
    if gg <= 0:
        raise UndefinedMetricError("reference field has zero norm")
    diff = SeparableField(f.dims, [np.vstack([a, -b if d == 0 else b])
                                   for d, (a, b) in enumerate(zip(f.coeffs, g.coeffs))])
    return float(np.sqrt(max(inner_product_l2(diff, diff), 0.0) / gg))


@dataclass(frozen=True)
class GroupedTerm:
    """coeff * prod_g f_g(x_{dims_g}); groups cover each dimension exactly once."""

    groups: tuple  # tuple of (tuple of dim indices, callable)
    coeff: float = 1.0


def _group_quadrature(field: SeparableField, group):
    dims_idx, _ = group
    pts, wts = [], []
    for d in dims_idx:
        dim = field.dims[d]
        x, w, _ = quadrature_points(dim.mesh, *quadrature_scheme(dim.patch))
        pts.append(x)
        wts.append(w)
    return pts, wts


def _factor_on_quadrature(field: SeparableField, d: int, x) -> np.ndarray:
    """(len(x), M) values of the 1D mode factors of dimension d."""
    dim = field.dims[d]
    return SeparableField([dim], [field.coeffs[d]]).mode_factors(np.asarray(x)[:, None])[0]


def integral_against(field: SeparableField, terms: Sequence[GroupedTerm]) -> float:
    """int field * sum(terms) by tensor quadrature inside each group."""
    total = 0.0
    for term in terms:
        prod = np.full(field.n_modes, term.coeff)
        for group in term.groups:
            dims_idx, fn = group
            pts, wts = _group_quadrature(field, group)
            grids = np.meshgrid(*pts, indexing="ij")
            W = wts[0]
            for w in wts[1:]:
                W = np.multiply.outer(W, w)
            F = np.asarray(fn(*grids), dtype=np.float64) * W
            mats = [_factor_on_quadrature(field, d, x) for d, x in zip(dims_idx, pts)]
            letters = "abcdefgh"[: len(dims_idx)]
            spec = letters + "," + ",".join(f"{c}z" for c in letters) + "->z"
            prod = prod * np.einsum(spec, F, *mats, optimize=True)
        total += float(prod.sum())
    return total


def integral_of_products(field: SeparableField, terms: Sequence[GroupedTerm]) -> float:
    """int (sum terms)^2, all terms sharing one grouping."""
    total = 0.0
    for a in terms:
        for b in terms:
            prod = a.coeff * b.coeff
            for (dims_idx, fa), (_, fb) in zip(a.groups, b.groups):
                pts, wts = _group_quadrature(field, (dims_idx, fa))
                grids = np.meshgrid(*pts, indexing="ij")
                W = wts[0]
                for w in wts[1:]:
                    W = np.multiply.outer(W, w)
                prod *= float(np.sum(np.asarray(fa(*grids)) * np.asarray(fb(*grids)) * W))
            total += prod
    return total


def rel_l2_integral_exact(field: SeparableField, terms: Sequence[GroupedTerm]) -> float:
    """Integral-form relative error against an exact solution given as grouped products."""
    ee = integral_of_products(field, terms)
    if ee <= 0:
        raise UndefinedMetricError("exact solution has zero norm")
    fe = integral_against(field, terms)
    ff = inner_product_l2(field, field)
    return float(np.sqrt(max(ff - 2.0 * fe + ee, 0.0) / ee))


# ---------------------------------------------------------------------------
# finite differences


def fd_poisson_2d(n: int, f: Callable, boundary: Callable, lo: float = 0.0, hi: float = 1.0):
    """5-point solve of Lap(u) = f on an n x n node grid (boundary included).

    Returns (nodes, U) with ``U[i, j] = u(nodes[i], nodes[j])``.
    """
    if not 3 <= n <= 257:
        raise InvalidArgumentError(f"grid size must be in 3..257, got {n}")
    x = np.linspace(lo, hi, n)
    h = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    U = np.zeros((n, n))
    edge = np.zeros((n, n), dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    U[edge] = np.asarray(boundary(X[edge], Y[edge]), dtype=np.float64)
    m = n - 2
    T = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
    I = sp.identity(m)
    L = (sp.kron(T, I) + sp.kron(I, T)).tocsc()
    rhs = np.asarray(f(X[1:-1, 1:-1], Y[1:-1, 1:-1]), dtype=np.float64) * np.ones((m, m))
    rhs = rhs.copy()
    rhs[0, :] -= U[0, 1:-1] / h**2
    rhs[-1, :] -= U[-1, 1:-1] / h**2
    rhs[:, 0] -= U[1:-1, 0] / h**2
    rhs[:, -1] -= U[1:-1, -1] / h**2
    try:
        sol = spla.spsolve(L, rhs.ravel())
    except RuntimeError as exc:  # pragma: no cover - scipy raises on exact singularity
        raise OracleError(f"singular 5-point system: {exc}") from None
    if not np.all(np.isfinite(sol)):
        raise OracleError("5-point solve produced non-finite values")
    U[1:-1, 1:-1] = sol.reshape(m, m)
    return x, U


# default 4 x 4 source layout of the parametric heat problem
HEAT_CENTERS = (0.2, 0.4, 0.6, 0.8)
HEAT_R0 = 0.05
HEAT_DEPTH = 0.5
HEAT_T_END = 0.04


def gaussian_row(x, centers=HEAT_CENTERS, r0: float = HEAT_R0):
    """sum_c exp(-2 (x - c)^2 / r0^2)."""
    x = np.asarray(x, dtype=np.float64)
    return sum(np.exp(-2.0 * (x - c) ** 2 / r0**2) for c in centers)


def depth_indicator(z, depth: float = HEAT_DEPTH):
    return (np.asarray(z, dtype=np.float64) >= depth).astype(np.float64)


def _dst_eigs(n_int: int, h: float) -> np.ndarray:
    j = np.arange(1, n_int + 1)
    return (2.0 - 2.0 * np.cos(j * np.pi / (n_int + 1))) / h**2


def fd_heat_param(n: int, n_steps: int, k: float, P: float, space_dims: int = 2,
                  t_end: float = HEAT_T_END, centers=HEAT_CENTERS, r0: float = HEAT_R0,
                  depth: float = HEAT_DEPTH, snapshots=None, stride: int = 1):
    """Crank-Nicolson + centered differences for du/dt - k Lap(u) = b on [0,1]^D.

    Zero Dirichlet data and zero initial state.  The source is
    ``P * sum_{a,b} exp(-2((x-c_a)^2 + (y-c_b)^2)/r0^2)`` times ``1[z >= depth]``
    in 3D.  The grid has ``n`` nodes per axis including the boundary.  The
    discrete Laplacian is diagonalized by type-I sine transforms, so every
    Crank-Nicolson step is a diagonal update.

    Returns (nodes, times, U) with U of shape ``(len(times),) + (n,)*D``;
    ``snapshots`` selects step indices (default all).  ``stride`` keeps every
    stride-th node of the output grid (the solve itself is unchanged).
    """
    if space_dims not in (2, 3):
        raise InvalidArgumentError("space_dims must be 2 or 3")
    if n < 3 or n_steps < 1:
        raise InvalidArgumentError("need n >= 3 and n_steps >= 1")
    if not (k > 0 and t_end > 0):
        raise InvalidArgumentError("k and t_end must be positive")
    x = np.linspace(0.0, 1.0, n)
    h = x[1] - x[0]
    xi = x[1:-1]
    m = n - 2
    rows = [gaussian_row(xi, centers, r0), gaussian_row(xi, centers, r0)]
    if space_dims == 3:
        # cell average of the step keeps the source second-order accurate
        rows.append(np.clip((xi + 0.5 * h - depth) / h, 0.0, 1.0))
    # separable source -> separable transform
    lam1 = _dst_eigs(m, h)
    bh = [scipy.fft.dst(r, type=1) / (m + 1) for r in rows]
    B = P * bh[0]
    for r in bh[1:]:
        B = np.multiply.outer(B, r)
    lam = lam1
    for _ in range(space_dims - 1):
        lam = np.add.outer(lam, lam1)
    dt = t_end / n_steps
    amp = (1.0 - 0.5 * dt * k * lam) / (1.0 + 0.5 * dt * k * lam)
    steady = B / (k * lam)
    steps = np.arange(n_steps + 1) if snapshots is None else np.asarray(snapshots, dtype=np.int64)
    if steps.size and (steps.min() < 0 or steps.max() > n_steps):
        raise InvalidArgumentError("snapshot index out of range")
    if int(stride) < 1 or (n - 1) % int(stride):
        raise InvalidArgumentError("stride must divide n - 1")
    stride = int(stride)
    times = steps * dt
    with np.errstate(divide="ignore"):
        logamp = np.log(np.abs(amp))
    neg = amp < 0
    out = np.zeros((steps.size,) + (len(x[::stride]),) * space_dims)
    inner = (slice(1, -1),) * space_dims
    # sine synthesis restricted to the kept nodes (boundary rows vanish)
    S = np.sin(np.pi * np.outer(np.arange(0, n, stride), np.arange(1, m + 1)) / (m + 1))
    for i, s in enumerate(steps):
        # CN with constant source: u_hat^n = (1 - amp^n) * b_hat / (k lam)
        Uh = (1.0 - _int_power(amp, logamp, neg, int(s))) * steady
        if stride == 1:
            out[(i,) + inner] = _sine_synthesis(Uh, space_dims)
        else:
            v = Uh
            for _ in range(space_dims):
                v = np.tensordot(v, S, axes=([0], [1]))
            out[i] = v
    return x[::stride], times, out


def _int_power(a, loga, neg, s: int):
    # a**s through exp/log; elementwise integer pow is slow on large grids
    if s == 0:
        return np.ones_like(a)
    out = np.exp(s * loga)
    if s % 2:
        out[neg] *= -1.0
    return out


def _sine_synthesis(Uh, D: int):
    # values from discrete sine-series coefficients: type-I DST halves to the synthesis sum
    v = Uh
    for ax in range(D):
        v = scipy.fft.dst(v, type=1, axis=ax) / 2.0
    return v


def fd_heat_2d_param(n: int, n_steps: int, k: float, P: float, **kw):
    return fd_heat_param(n, n_steps, k, P, space_dims=2, **kw)


def fd_heat_3d_param(n: int, n_steps: int, k: float, P: float, **kw):
    return fd_heat_param(n, n_steps, k, P, space_dims=3, **kw)


def heat_dataset_2d(n: int, n_steps: int, params, n_snapshots: int = 10,
                    t_end: float = HEAT_T_END):
    """Rows (x, y, k, P, t) -> u from the 2D parametric heat oracle.

    ``params`` is a sequence of (k, P) pairs; snapshots are evenly spaced in
    (0, t_end].  Returns (inputs, targets, names).
    """
    if n_snapshots < 1 or n_steps % n_snapshots:
        raise InvalidArgumentError("n_snapshots must divide n_steps")
    snaps = np.arange(1, n_snapshots + 1) * (n_steps // n_snapshots)
    rows, vals = [], []
    for k, P in params:
        x, times, U = fd_heat_2d_param(n, n_steps, float(k), float(P), t_end=t_end, snapshots=snaps)
        T, X, Y = np.meshgrid(times, x, x, indexing="ij")
        rows.append(np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, k),
                                     np.full(X.size, P), T.ravel()]))
        vals.append(U.ravel())
    return np.vstack(rows), np.concatenate(vals), ("x", "y", "k", "P", "t")


def fd_heat_1d_varcoef(n: int, n_steps: int, kfun: Callable, f: Callable, t_end: float,
                       lo: float = 0.0, hi: float = 1.0, snapshots=None):
    """Crank-Nicolson for du/dt - d/dx(k du/dx) = f(x), zero boundary and initial data.

    Conductivity is sampled at cell midpoints (conservative form).
    Returns (nodes, times, U) with U of shape (len(times), n).
    """
    x = np.linspace(lo, hi, n)
    h = x[1] - x[0]
    km = np.asarray(kfun(0.5 * (x[1:] + x[:-1])), dtype=np.float64)
    if np.any(km <= 0) or not np.all(np.isfinite(km)):
        raise OracleError("conductivity must be positive and finite")
    m = n - 2
    dt = t_end / n_steps
    lower = km[1:-1] / h**2
    upper = km[1:-1] / h**2
    diag = -(km[:-1] + km[1:]) / h**2
    # L u for interior nodes: lower[i-1]*u[i-1] + diag[i]*u[i] + upper[i]*u[i+1]
    ab = np.zeros((3, m))
    ab[0, 1:] = -0.5 * dt * upper
    ab[1, :] = 1.0 - 0.5 * dt * diag
    ab[2, :-1] = -0.5 * dt * lower
    fx = np.asarray(f(x[1:-1]), dtype=np.float64) * np.ones(m)
    steps = np.arange(n_steps + 1) if snapshots is None else np.asarray(snapshots, dtype=np.int64)
    want = {int(s): i for i, s in enumerate(steps)}
    out = np.zeros((steps.size, n))
    u = np.zeros(m)
    if 0 in want:
        out[want[0], 1:-1] = u
    for s in range(1, n_steps + 1):
        Lu = diag * u
        Lu[1:] += lower * u[:-1]
        Lu[:-1] += upper * u[1:]
        rhs = u + 0.5 * dt * Lu + dt * fx
        u = scipy.linalg.solve_banded((1, 1), ab, rhs)
        if s in want:
            out[want[s], 1:-1] = u
    return x, steps * dt, out


# ---------------------------------------------------------------------------
# dense tensor-product Galerkin (2D)


def dense_galerkin_2d(op: SeparableOperator, src: SeparableSource, dims, constrained=((), ())):
    """Full Kronecker-product Galerkin solve; returns the (n_x, n_y) nodal coefficient matrix."""
    if len(dims) != 2:
        raise InvalidArgumentError("dense Galerkin reference is 2D only")
    mats = op.matrices(dims)
    nx, ny = dims[0].n_nodes, dims[1].n_nodes
    A = np.zeros((nx * ny, nx * ny))
    for t, (Kx, Ky) in zip(op.terms, mats):
        A += t.coeff * np.kron(Kx.to_dense(), Ky.to_dense())
    F = np.zeros(nx * ny)
    for vx, vy in src.load_vectors(dims):
        F += np.kron(vx, vy)
    cx = np.zeros(nx, dtype=bool)
    cy = np.zeros(ny, dtype=bool)
    cx[list(constrained[0])] = True
    cy[list(constrained[1])] = True
    fixed = (cx[:, None] | cy[None, :]).ravel()
    free = ~fixed
    U = np.zeros(nx * ny)
    try:
        U[free] = np.linalg.solve(A[np.ix_(free, free)], F[free])
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"dense Galerkin system is singular: {exc}") from None
    return U.reshape(nx, ny)


# ---------------------------------------------------------------------------
# Karhunen-Loeve


def jacobi_eigh(C, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns (eigenvalues descending, eigenvectors as columns).  Stops when the
    off-diagonal Frobenius norm falls below ``tol * ||C||_F``.
    """
    A = np.array(C, dtype=np.float64, copy=True)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(np.abs(A).max(), 1e-300)):
        raise InvalidArgumentError("matrix must be square and symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0:
        return np.zeros(n), V

    def off(M):
        return np.linalg.norm(M - np.diag(np.diag(M)))

    for _ in range(max_sweeps):
        if off(A) < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                colp = c * ap - s * aq
                colq = s * ap + c * aq
                A[:, p] = colp
                A[:, q] = colq
                A[p, :] = colp
                A[q, :] = colq
                A[p, p] = ap[p] - t * apq
                A[q, q] = aq[q] + t * apq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if off(A) >= tol * scale:
            raise OracleError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def covariance_matrix(nodes, sigma: float, ell: float) -> np.ndarray:
    x = np.asarray(nodes, dtype=np.float64)
    return sigma**2 * np.exp(-((x[:, None] - x[None, :]) ** 2) / (2.0 * ell**2))


@dataclass(frozen=True)
class KLExpansion:
    k_mu: float
    sigma: float
    ell: float
    mesh: Mesh1D
    patch: PatchConfig
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_e: int

    @property
    def nodes(self) -> np.ndarray:
        return self.mesh.nodes

    def mode_vector(self, J: int) -> np.ndarray:
        """Nodal values sqrt(lambda_J) phi_{.J}."""
        return np.sqrt(max(self.eigenvalues[J], 0.0)) * self.eigenvectors[:, J]

    def mode_function(self, J: int) -> Callable:
        vec = self.mode_vector(J)
        basis = get_basis(self.mesh, self.patch)
        return lambda x: basis.interpolate(vec, np.asarray(x, dtype=np.float64))


def kl_build(sigma: float, ell: float, mesh: Mesh1D, n_e: int, k_mu: float = 1.0,
             patch: PatchConfig | None = None) -> KLExpansion:
    if not (sigma > 0 and ell > 0):
        raise InvalidArgumentError("sigma and ell must be positive")
    if not 1 <= n_e <= mesh.n_nodes:
        raise InvalidArgumentError(f"n_e must be in 1..{mesh.n_nodes}")
    C = covariance_matrix(mesh.nodes, sigma, ell)
    lam, phi = jacobi_eigh(C)
    for J in range(phi.shape[1]):
        # sign convention: first nonzero-ish component positive
        i = int(np.argmax(np.abs(phi[:, J]) > 1e-8))
        if phi[i, J] < 0:
            phi[:, J] *= -1.0
    lam.setflags(write=False)
    phi.setflags(write=False)
    return KLExpansion(float(k_mu), float(sigma), float(ell), mesh, patch or PatchConfig(),
                       lam, phi, int(n_e))


def kl_sample(kl: KLExpansion, zeta, x) -> np.ndarray:
    """k(x, zeta) = k_mu + sum_I N_I(x) sum_J sqrt(lambda_J) phi_IJ zeta_J."""
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape != (kl.n_e,):
        raise InvalidArgumentError(f"zeta must have length {kl.n_e}")
    nodal = np.zeros(kl.mesh.n_nodes)
    for J in range(kl.n_e):
        nodal += zeta[J] * kl.mode_vector(J)
    basis = get_basis(kl.mesh, kl.patch)
    return kl.k_mu + basis.interpolate(nodal, np.atleast_1d(np.asarray(x, dtype=np.float64)))
