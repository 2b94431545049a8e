"""Built-in problem definitions: operator, source, constraints and exact solution."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import (CONVECTION, MASS, STIFFNESS, SeparableOperator, SeparableOperatorTerm,
                       SeparableSource, SourceTerm, assemble_load_2d, identity_weight,
                       low_rank_terms, make_heat_operator, make_helmholtz_operator,
                       make_poisson_operator, weighted_mass, weighted_stiffness)
from .basis import Kernel, Mesh1D, PatchConfig, make_graded_mesh, make_uniform_mesh
from .errors import InvalidArgumentError
from .field import DimKind, DimensionSpec, SeparableField
from .oracle import (HEAT_DEPTH, HEAT_T_END, GroupedTerm, KLExpansion, depth_indicator,
                     gaussian_row, kl_build, rel_l2_integral_exact, rel_l2_pointwise)
from .solver import DirichletSpec, SolverConfig, make_lift_for_separable_boundary, solve


DEFAULT_PATCH = {
    "poisson_case1": PatchConfig(s=2, p=3),
    "poisson_case2": PatchConfig(s=2, p=3),
    "helmholtz": PatchConfig(s=1, p=1, a=0.7),
    "heat_spacetime": PatchConfig(s=3, p=3, kernel=Kernel.LAGRANGE),
    "heat_spt": PatchConfig(s=2, p=3),
    "poisson_local_source": PatchConfig(s=2, p=3),
    "operator_kl": PatchConfig(s=2, p=3),
}


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=np.float64))


@dataclass
class Problem:
    name: str
    dims: tuple
    operator: SeparableOperator
    source: SeparableSource
    bc: DirichletSpec
    solver: SolverConfig = field(default_factory=SolverConfig)
    exact: Callable | None = None          # (N, D) points -> (N,)
    exact_terms: tuple = ()                # grouped products for the integral error
    params: dict = field(default_factory=dict)

    def solve(self, cfg: SolverConfig | None = None):
        return solve(self.operator, self.source, self.dims, self.bc, cfg or self.solver)

    def sample_points(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo = np.array([d.mesh.lower for d in self.dims])
        hi = np.array([d.mesh.upper for d in self.dims])
        return lo + (hi - lo) * rng.random((n, len(self.dims)))

    def error_pointwise(self, f: SeparableField, n_points: int = 20000, seed: int = 0) -> float:
        if self.exact is None:
            raise InvalidArgumentError(f"problem {self.name!r} has no closed-form solution")
        pts = self.sample_points(n_points, seed)
        return rel_l2_pointwise(f.evaluate_batch(pts), self.exact(pts))

    def error_integral(self, f: SeparableField) -> float:
        if not self.exact_terms:
            raise InvalidArgumentError(f"problem {self.name!r} has no grouped exact solution")
        return rel_l2_integral_exact(f, self.exact_terms)


def _space_dims(D, n_elem, patch, lo, hi, prefix="x"):
    mesh = make_uniform_mesh(lo, hi, n_elem)
    return tuple(DimensionSpec(f"{prefix}{i + 1}", mesh, patch) for i in range(D))


def _singletons(D, fns, coeff=1.0):
    return GroupedTerm(tuple(((d,), fn) for d, fn in enumerate(fns)), coeff)


# ---------------------------------------------------------------------------
# high-dimensional Poisson


def poisson_case1(D: int = 2, n_elem: int = 31, patch: PatchConfig | None = None,
                  lo: float = 0.0, hi: float = 1.0, max_modes: int = 4) -> Problem:
    """Lap(u) = f with u = sum_d sin(pi x_d / 2), Dirichlet data from u."""
    patch = patch or DEFAULT_PATCH["poisson_case1"]
    dims = _space_dims(D, n_elem, patch, lo, hi)
    g = lambda x: np.sin(0.5 * np.pi * x)
    c = -0.25 * np.pi**2
    src = SeparableSource([SourceTerm([g if e == d else _ones for e in range(D)], c)
                           for d in range(D)])
    lift = make_lift_for_separable_boundary(dims, [[g if e == d else 1.0 for e in range(D)]
                                                   for d in range(D)])
    exact = lambda P: np.sum(g(P), axis=1)
    terms = tuple(_singletons(D, [g if e == d else _ones for e in range(D)]) for d in range(D))
    return Problem("poisson_case1", dims, make_poisson_operator(dims), src,
                   DirichletSpec.boundary(dims, lift=lift), SolverConfig(max_modes=max_modes),
                   exact, terms, {"D": D, "lo": lo, "hi": hi})


def poisson_case2(D: int = 2, n_elem: int = 31, patch: PatchConfig | None = None,
                  lo: float = 0.0, hi: float = 1.0, max_modes: int = 1) -> Problem:
    """Lap(u) = f with the rank-1 solution u = prod_d sin(pi x_d).

    On [0, L] with integer L the solution vanishes on the boundary.
    """
    patch = patch or DEFAULT_PATCH["poisson_case2"]
    dims = _space_dims(D, n_elem, patch, lo, hi)
    g = lambda x: np.sin(np.pi * x)
    src = SeparableSource([SourceTerm([g] * D, -D * np.pi**2)])
    vals = [g(np.array([lo, hi])) for _ in range(D)]
    lift = None
    if any(np.abs(v).max() > 1e-12 for v in vals):
        lift = make_lift_for_separable_boundary(dims, [[g] * D])
    exact = lambda P: np.prod(g(P), axis=1)
    return Problem("poisson_case2", dims, make_poisson_operator(dims), src,
                   DirichletSpec.boundary(dims, lift=lift), SolverConfig(max_modes=max_modes),
                   exact, (_singletons(D, [g] * D),), {"D": D, "lo": lo, "hi": hi})


# ---------------------------------------------------------------------------
# Helmholtz


def helmholtz(n_elem: int = 250, patch: PatchConfig | None = None, a1: float = 1.0,
              a2: float = 4.0, k: float = 1.0, max_modes: int = 2) -> Problem:
    """Lap(u) + k^2 u = q on [-1, 1]^2 with u = sin(a1 pi x) sin(a2 pi y)."""
    patch = patch or DEFAULT_PATCH["helmholtz"]
    mesh = make_uniform_mesh(-1.0, 1.0, n_elem)
    dims = (DimensionSpec("x", mesh, patch), DimensionSpec("y", mesh, patch))
    gx = lambda x: np.sin(a1 * np.pi * x)
    gy = lambda y: np.sin(a2 * np.pi * y)
    c = -(a1 * np.pi) ** 2 - (a2 * np.pi) ** 2 + k**2
    src = SeparableSource([SourceTerm([gx, gy], c)])
    exact = lambda P: gx(P[:, 0]) * gy(P[:, 1])
    return Problem("helmholtz", dims, make_helmholtz_operator(dims, k), src,
                   DirichletSpec.boundary(dims), SolverConfig(max_modes=max_modes),
                   exact, (_singletons(2, [gx, gy]),), {"a1": a1, "a2": a2, "k": k})


# ---------------------------------------------------------------------------
# space-time heat with a moving source


def _st_T(t):
    return 1.0 - np.exp(-15.0 * t)


def _st_G(x, t):
    return np.exp(-(x - 100.0 * t + 5.0) ** 2)


def _st_Y(y):
    return np.exp(-y**2)


def heat_spacetime(n_elem: int = 32, patch: PatchConfig | None = None,
                   max_modes: int = 400) -> Problem:
    """du/dt - Lap(u) = b on [-10, 10]^3 x [0, 0.1], zero initial state.

    Exact solution (1 - exp(-15 t)) exp(-y^2 - (x - 100 t + 5)^2); the source is
    derived from it.  The (x, t) part of the source is not separable, so it is
    assembled as a 2D load and split by SVD.  The solution does not depend on z,
    so the z faces carry no constraint.
    """
    patch = patch or DEFAULT_PATCH["heat_spacetime"]
    space = make_uniform_mesh(-10.0, 10.0, n_elem)
    dims = (DimensionSpec("x", space, patch), DimensionSpec("y", space, patch),
            DimensionSpec("z", space, patch),
            DimensionSpec("t", make_uniform_mesh(0.0, 0.1, n_elem), patch, DimKind.TIME))

    def h_xt(x, t):
        c = x - 100.0 * t + 5.0
        return (15.0 * np.exp(-15.0 * t) + _st_T(t) * (200.0 * c - 4.0 * c**2 + 2.0)) * _st_G(x, t)

    tg = lambda x, t: _st_T(t) * _st_G(x, t)
    ypp = lambda y: (4.0 * y**2 - 2.0) * _st_Y(y)
    mx, mt = dims[0].mesh, dims[3].mesh
    terms = [SourceTerm([u, _st_Y, _ones, v])
             for u, v in low_rank_terms(assemble_load_2d(mx, patch, mt, patch, h_xt), 1e-12)]
    terms += [SourceTerm([u, ypp, _ones, v], -1.0)
              for u, v in low_rank_terms(assemble_load_2d(mx, patch, mt, patch, tg), 1e-12)]
    exact = lambda P: tg(P[:, 0], P[:, 3]) * _st_Y(P[:, 1])
    exact_terms = (GroupedTerm((((0, 3), tg), ((1,), _st_Y), ((2,), _ones))),)
    bc = DirichletSpec.boundary(dims, {"z": "none", "t": "lower"})
    return Problem("heat_spacetime", dims, make_heat_operator(dims, 1.0), SeparableSource(terms),
                   bc, SolverConfig(max_modes=max_modes), exact, exact_terms, {})


# ---------------------------------------------------------------------------
# space-parameter-time heat


K_RANGE = (1.0, 4.0)
P_RANGE = (100.0, 200.0)


def heat_spt(n_elem: int = 32, patch: PatchConfig | None = None, max_modes: int = 30,
             t_end: float = HEAT_T_END, n_space: int | None = None,
             n_time: int | None = None) -> Problem:
    """du/dt - k Lap(u) = P g(x) g(y) 1[z >= depth] over (x, y, z, k, P, t).

    Zero Dirichlet faces and zero initial state; k and P are input dimensions.
    ``n_space`` and ``n_time`` override the element counts of (x, y, z) and t.
    """
    patch = patch or DEFAULT_PATCH["heat_spt"]
    unit = make_uniform_mesh(0.0, 1.0, n_space or n_elem)
    # the depth step must fall on a node
    zmesh = Mesh1D(np.union1d(unit.nodes, [HEAT_DEPTH]))
    dims = (DimensionSpec("x", unit, patch), DimensionSpec("y", unit, patch),
            DimensionSpec("z", zmesh, patch),
            DimensionSpec("k", make_uniform_mesh(*K_RANGE, n_elem), patch, DimKind.PARAM),
            DimensionSpec("P", make_uniform_mesh(*P_RANGE, n_elem), patch, DimKind.PARAM),
            DimensionSpec("t", make_uniform_mesh(0.0, t_end, n_time or n_elem), patch, DimKind.TIME))
    src = SeparableSource([SourceTerm([gaussian_row, gaussian_row, depth_indicator,
                                       _ones, identity_weight, _ones])])
    bc = DirichletSpec.boundary(dims, {"t": "lower"})
    return Problem("heat_spt", dims, make_heat_operator(dims), src, bc,
                   SolverConfig(max_modes=max_modes), params={"depth": HEAT_DEPTH, "t_end": t_end})


# ---------------------------------------------------------------------------
# local-source Poisson on a graded mesh

LOCAL_BUMPS = ((20.0, 25.0), (60.0, 75.0))
LOCAL_WIDTH = 25.0
LOCAL_AMP = 10.0


def _local_grading(centers, n_fine, n_coarse):
    lo, hi, pieces = 0.0, 100.0, []
    cur = lo
    for c in sorted(centers):
        a, b = max(c - 15.0, lo), min(c + 15.0, hi)
        if a > cur:
            pieces.append(((cur, a), n_coarse))
        pieces.append(((a, b), n_fine))
        cur = b
    if cur < hi:
        pieces.append(((cur, hi), n_coarse))
    return make_graded_mesh(pieces)


def poisson_local_source(n_fine: int = 30, n_coarse: int = 3, patch: PatchConfig | None = None,
                         max_modes: int = 6) -> Problem:
    """Lap(u) = f on [0, 100]^2 with two Gaussian bumps; meshes refined around them."""
    patch = patch or DEFAULT_PATCH["poisson_local_source"]
    dims = (DimensionSpec("x", _local_grading([c[0] for c in LOCAL_BUMPS], n_fine, n_coarse), patch),
            DimensionSpec("y", _local_grading([c[1] for c in LOCAL_BUMPS], n_fine, n_coarse), patch))
    w = LOCAL_WIDTH

    def bump(c):
        return lambda x: np.exp(-((x - c) ** 2) / w)

    def bump_dd(c):
        return lambda x: ((2.0 * (x - c) / w) ** 2 - 2.0 / w) * np.exp(-((x - c) ** 2) / w)

    terms, lift, exact_terms = [], [], []
    for cx, cy in LOCAL_BUMPS:
        terms.append(SourceTerm([bump_dd(cx), bump(cy)], LOCAL_AMP))
        terms.append(SourceTerm([bump(cx), bump_dd(cy)], LOCAL_AMP))
        lift.append([bump(cx), lambda y, cy=cy: LOCAL_AMP * bump(cy)(y)])
        exact_terms.append(_singletons(2, [bump(cx), bump(cy)], LOCAL_AMP))

    def exact(P):
        return sum(LOCAL_AMP * bump(cx)(P[:, 0]) * bump(cy)(P[:, 1]) for cx, cy in LOCAL_BUMPS)

    # the exact solution interpolated at the nodes carries the boundary values
    lift = make_lift_for_separable_boundary(dims, lift)
    return Problem("poisson_local_source", dims, make_poisson_operator(dims), SeparableSource(terms),
                   DirichletSpec.boundary(dims, lift=lift), SolverConfig(max_modes=max_modes),
                   exact, tuple(exact_terms), {})


# ---------------------------------------------------------------------------
# operator learning with a random conductivity field


def operator_kl(n_elem: int = 32, n_zeta_elem: int = 16, n_e: int = 5, sigma: float = 0.05,
                ell: float = 0.2, k_mu: float = 1.0, t_end: float = 0.01,
                zeta_range: tuple = (-5.0, 5.0), patch: PatchConfig | None = None,
                max_modes: int = 20):
    """du/dt - d/dx(k(x, zeta) du/dx) = 1 over (x, zeta_1..zeta_ne, t).

    k(x, zeta) = k_mu + sum_J zeta_J sqrt(lambda_J) phi_J(x) is affine in zeta, so
    every KL mode adds one separable stiffness term.  Returns (problem, expansion).
    """
    patch = patch or DEFAULT_PATCH["operator_kl"]
    xm = make_uniform_mesh(0.0, 1.0, n_elem)
    kl: KLExpansion = kl_build(sigma, ell, xm, n_e, k_mu=k_mu, patch=patch)
    zm = make_uniform_mesh(*zeta_range, n_zeta_elem)
    dims = ((DimensionSpec("x", xm, patch),)
            + tuple(DimensionSpec(f"zeta{J + 1}", zm, patch, DimKind.PARAM) for J in range(n_e))
            + (DimensionSpec("t", make_uniform_mesh(0.0, t_end, n_elem), patch, DimKind.TIME),))
    D = len(dims)
    rest = [MASS] * (D - 1)
    terms = [SeparableOperatorTerm(1.0, [MASS] * (D - 1) + [CONVECTION]),
             SeparableOperatorTerm(k_mu, [STIFFNESS] + rest)]
    for J in range(n_e):
        kinds = [weighted_stiffness(kl.mode_function(J))] + rest
        kinds[1 + J] = weighted_mass(identity_weight)
        terms.append(SeparableOperatorTerm(1.0, kinds))
    src = SeparableSource([SourceTerm([_ones] * D)])
    bc = DirichletSpec.boundary(dims, {"t": "lower"})
    prob = Problem("operator_kl", dims, SeparableOperator(terms), src, bc,
                   SolverConfig(max_modes=max_modes),
                   params={"n_e": n_e, "sigma": sigma, "ell": ell, "k_mu": k_mu, "t_end": t_end})
    return prob, kl


BUILDERS = {
    "poisson_case1": poisson_case1,
    "poisson_case2": poisson_case2,
    "helmholtz": helmholtz,
    "heat_spacetime": heat_spacetime,
    "heat_spt": heat_spt,
    "poisson_local_source": poisson_local_source,
}
