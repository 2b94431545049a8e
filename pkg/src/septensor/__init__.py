"""Separable tensor-decomposition solvers on C-HiDeNN interpolation.

Solve, train and invert parametric PDEs on box domains with fields of the
form sum_m prod_d f_d^(m)(x_d).
"""
from .basis import Kernel, Mesh1D, PatchConfig, make_graded_mesh, make_uniform_mesh
from .errors import *  # noqa: F401,F403
from .field import DimKind, DimensionSpec, SeparableField
from .solver import DirichletSpec, SolveReport, SolverConfig, solve

__version__ = "0.1.0"
