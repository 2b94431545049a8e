"""Band storage and a partial-pivoting banded LU solver."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, SingularMatrixError

PIVOT_RTOL = 1e-14


class BandedMatrix:
    """Square matrix with equal lower/upper half-bandwidth ``u``.

    Storage follows the LAPACK general-band layout: ``bands[u + i - j, j]``
    holds ``A[i, j]``.
    """

    __slots__ = ("bands", "half_bandwidth")

    def __init__(self, bands, half_bandwidth: int):
        bands = np.asarray(bands, dtype=np.float64)
        u = int(half_bandwidth)
        if bands.ndim != 2 or bands.shape[0] != 2 * u + 1:
            raise InvalidArgumentError(
                f"band array of shape {bands.shape} does not match half-bandwidth {u}"
            )
        self.bands = bands
        self.half_bandwidth = u

    @property
    def size(self) -> int:
        return self.bands.shape[1]

    @property
    def shape(self):
        return (self.size, self.size)

    @classmethod
    def zeros(cls, n: int, u: int) -> "BandedMatrix":
        return cls(np.zeros((2 * u + 1, n)), u)

    @classmethod
    def identity(cls, n: int, u: int = 0) -> "BandedMatrix":
        m = cls.zeros(n, u)
        m.bands[u] = 1.0
        return m

    @classmethod
    def from_dense(cls, A, u: int | None = None) -> "BandedMatrix":
        A = np.asarray(A, dtype=np.float64)
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidArgumentError("matrix must be square")
        if u is None:
            nz = np.argwhere(A != 0)
            u = int(np.max(np.abs(nz[:, 0] - nz[:, 1]))) if nz.size else 0
        m = cls.zeros(n, u)
        for k in range(-min(u, n - 1), min(u, n - 1) + 1):
            d = np.diagonal(A, offset=-k)
            if k >= 0:
                m.bands[u + k, : n - k] = d
            else:
                m.bands[u + k, -k:] = d
        return m

    def to_dense(self) -> np.ndarray:
        n, u = self.size, self.half_bandwidth
        A = np.zeros((n, n))
        for k in range(-min(u, n - 1), min(u, n - 1) + 1):
            if k >= 0:
                A += np.diag(self.bands[u + k, : n - k], -k)
            else:
                A += np.diag(self.bands[u + k, -k:], -k)
        return A

    def widen(self, u: int) -> "BandedMatrix":
        if u < self.half_bandwidth:
            raise InvalidArgumentError("cannot narrow a band matrix")
        if u == self.half_bandwidth:
            return self.copy()
        pad = u - self.half_bandwidth
        bands = np.zeros((2 * u + 1, self.size))
        bands[pad : pad + self.bands.shape[0]] = self.bands
        return BandedMatrix(bands, u)

    def copy(self) -> "BandedMatrix":
        return BandedMatrix(self.bands.copy(), self.half_bandwidth)

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        n, u = self.size, self.half_bandwidth
        y = np.zeros(np.broadcast_shapes(x.shape), dtype=np.float64)
        for k in range(-min(u, n - 1), min(u, n - 1) + 1):
            # entries A[j + k, j]
            if k >= 0:
                y[k:] += self.bands[u + k, : n - k] * x[: n - k]
            else:
                y[: n + k] += self.bands[u + k, -k:] * x[-k:]
        return y

    def rmatvec(self, x) -> np.ndarray:
        """``A.T @ x``."""
        x = np.asarray(x, dtype=np.float64)
        n, u = self.size, self.half_bandwidth
        y = np.zeros(n)
        for k in range(-min(u, n - 1), min(u, n - 1) + 1):
            if k >= 0:
                y[: n - k] += self.bands[u + k, : n - k] * x[k:]
            else:
                y[-k:] += self.bands[u + k, -k:] * x[: n + k]
        return y

    def matmat(self, X) -> np.ndarray:
        """``A @ X`` for a dense ``(n, m)`` block."""
        X = np.asarray(X, dtype=np.float64)
        n, u = self.size, self.half_bandwidth
        Y = np.zeros_like(X)
        for k in range(-min(u, n - 1), min(u, n - 1) + 1):
            if k >= 0:
                Y[k:] += self.bands[u + k, : n - k, None] * X[: n - k]
            else:
                Y[: n + k] += self.bands[u + k, -k:, None] * X[-k:]
        return Y

    def quad(self, a, b) -> float:
        """Bilinear form ``a.T @ A @ b``."""
        return float(np.dot(a, self.matvec(b)))

    def norm_inf(self) -> float:
        return float(np.max(np.sum(np.abs(self.to_dense()), axis=1))) if self.size else 0.0

    def __add__(self, other: "BandedMatrix") -> "BandedMatrix":
        if other.size != self.size:
            raise InvalidArgumentError("size mismatch")
        u = max(self.half_bandwidth, other.half_bandwidth)
        out = self.widen(u)
        out.bands += other.widen(u).bands
        return out

    def __mul__(self, c: float) -> "BandedMatrix":
        return BandedMatrix(self.bands * float(c), self.half_bandwidth)

    __rmul__ = __mul__

    def __repr__(self):
        return f"BandedMatrix(n={self.size}, half_bandwidth={self.half_bandwidth})"


def banded_lu_solve(A: BandedMatrix, q) -> np.ndarray:
    """Solve ``A x = q`` by banded LU with partial pivoting.

    Row interchanges stay inside the lower band, so fill-in is confined to
    ``u`` extra super-diagonals.  ``q`` may be a vector or an ``(n, m)`` block.
    """
    q = np.asarray(q, dtype=np.float64)
    n, kl = A.size, A.half_bandwidth
    if q.shape[0] != n:
        raise InvalidArgumentError(f"right-hand side has length {q.shape[0]}, expected {n}")
    if n == 0:
        return q.copy()
    ku = kl
    kv = kl + ku
    ab = np.zeros((2 * kl + ku + 1, n))
    ab[kl:, :] = A.bands
    scale = A.norm_inf()
    tiny = PIVOT_RTOL * scale if scale > 0 else 0.0
    ipiv = np.zeros(n, dtype=np.int64)
    ju = 0
    for j in range(n):
        km = min(kl, n - 1 - j)
        col = ab[kv : kv + km + 1, j]
        jp = int(np.argmax(np.abs(col)))
        ipiv[j] = j + jp
        piv = ab[kv + jp, j]
        if not abs(piv) > tiny:
            raise SingularMatrixError(f"numerically singular pivot {piv:.3e} at row {j}")
        ju = max(ju, min(j + ku + jp, n - 1))
        cs = np.arange(j, ju + 1)
        if jp:
            r0 = kv + j - cs
            r1 = kv + j + jp - cs
            tmp = ab[r0, cs].copy()
            ab[r0, cs] = ab[r1, cs]
            ab[r1, cs] = tmp
        if km:
            ab[kv + 1 : kv + km + 1, j] /= ab[kv, j]
            if ju > j:
                cs = cs[1:]
                rows = np.arange(j + 1, j + km + 1)
                mult = ab[kv + 1 : kv + km + 1, j]
                pivot_row = ab[kv + j - cs, cs]
                ab[kv + rows[:, None] - cs[None, :], cs[None, :]] -= mult[:, None] * pivot_row[None, :]

    x = q.copy()
    for j in range(n):
        km = min(kl, n - 1 - j)
        p = ipiv[j]
        if p != j:
            x[[j, p]] = x[[p, j]]
        if km:
            x[j + 1 : j + km + 1] -= np.multiply.outer(ab[kv + 1 : kv + km + 1, j], x[j]) if x.ndim > 1 else ab[kv + 1 : kv + km + 1, j] * x[j]
    for j in range(n - 1, -1, -1):
        x[j] = x[j] / ab[kv, j]
        lo = max(0, j - kv)
        if j > lo:
            ucol = ab[kv + np.arange(lo, j) - j, j]
            x[lo:j] -= np.multiply.outer(ucol, x[j]) if x.ndim > 1 else ucol * x[j]
    return x
