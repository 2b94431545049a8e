"""Rank-M separable fields: evaluation, inner products and the INNTD1 container."""
from __future__ import annotations

import enum
import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import Kernel, Mesh1D, PatchConfig, get_basis
from .errors import FormatError, InvalidArgumentError

MAGIC = b"INNTD1"
FORMAT_VERSION = 1


class DimKind(str, enum.Enum):
    SPACE = "space"
    TIME = "time"
    PARAM = "param"


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    mesh: Mesh1D
    patch: PatchConfig = field(default_factory=PatchConfig)
    kind: DimKind = DimKind.SPACE

    def __post_init__(self):
        object.__setattr__(self, "kind", DimKind(self.kind))
        if not isinstance(self.name, str) or not self.name:
            raise InvalidArgumentError("dimension name must be a non-empty string")

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def basis(self):
        return get_basis(self.mesh, self.patch)


def _check_dims(dims) -> tuple:
    dims = tuple(dims)
    if not dims:
        raise InvalidArgumentError("a field needs at least one dimension")
    names = [d.name for d in dims]
    if len(set(names)) != len(names):
        raise InvalidArgumentError(f"dimension names must be unique, got {names}")
    return dims


class SeparableField:
    """sum_m prod_d N_d(x_d) . u_d^(m); ``coeffs[d]`` has shape ``(M, n_d + 1)``."""

    __slots__ = ("dims", "coeffs")

    def __init__(self, dims: Sequence[DimensionSpec], coeffs=None):
        dims = _check_dims(dims)
        if coeffs is None:
            coeffs = [np.zeros((0, d.n_nodes)) for d in dims]
        if len(coeffs) != len(dims):
            raise InvalidArgumentError(f"expected {len(dims)} coefficient blocks, got {len(coeffs)}")
        blocks = []
        for d, c in zip(dims, coeffs):
            c = np.array(c, dtype=np.float64, copy=True)
            if c.ndim == 1:
                c = c[None, :]
            if c.ndim != 2 or c.shape[1] != d.n_nodes:
                raise InvalidArgumentError(
                    f"coefficients for {d.name!r} have shape {c.shape}, expected (M, {d.n_nodes})")
            c.setflags(write=False)
            blocks.append(c)
        if len({b.shape[0] for b in blocks}) != 1:
            raise InvalidArgumentError("all dimensions must carry the same number of modes")
        self.dims = dims
        self.coeffs = tuple(blocks)

    @classmethod
    def zeros(cls, dims) -> "SeparableField":
        return cls(dims)

    @classmethod
    def from_functions(cls, dims, funcs) -> "SeparableField":
        """Rank-1 field from nodal samples of per-dimension functions."""
        dims = _check_dims(dims)
        if len(funcs) != len(dims):
            raise InvalidArgumentError("need one function per dimension")
        return cls(dims, [np.asarray(f(d.mesh.nodes), dtype=np.float64)[None, :]
                          for d, f in zip(dims, funcs)])

    @property
    def n_modes(self) -> int:
        return self.coeffs[0].shape[0]

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @property
    def names(self):
        return [d.name for d in self.dims]

    def mode(self, m: int):
        return [c[m] for c in self.coeffs]

    def add_mode(self, vectors) -> "SeparableField":
        if len(vectors) != self.n_dims:
            raise InvalidArgumentError(f"expected {self.n_dims} vectors, got {len(vectors)}")
        new = []
        for d, c, v in zip(self.dims, self.coeffs, vectors):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (d.n_nodes,):
                raise InvalidArgumentError(f"vector for {d.name!r} has shape {v.shape}, expected ({d.n_nodes},)")
            new.append(np.vstack([c, v[None, :]]))
        return SeparableField(self.dims, new)

    def truncate(self, n_modes: int) -> "SeparableField":
        return SeparableField(self.dims, [c[:n_modes] for c in self.coeffs])

    def with_coeffs(self, coeffs) -> "SeparableField":
        return SeparableField(self.dims, coeffs)

    # -- evaluation --------------------------------------------------------

    def mode_factors(self, points) -> list:
        """Per-dim arrays of shape ``(N, M)`` holding N_d(x_d) . u_d^(m)."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.n_dims:
            raise InvalidArgumentError(f"points must have shape (N, {self.n_dims})")
        out = []
        for d, dim in enumerate(self.dims):
            # grids repeat coordinates; evaluate each distinct value once
            xs, inv = np.unique(pts[:, d], return_inverse=True)
            bb = dim.basis.evaluate(xs)
            C = self.coeffs[d]
            acc = np.zeros((xs.size, C.shape[0]))
            vals = np.where(bb.mask, bb.values, 0.0)
            for w in range(bb.width):
                acc += vals[:, w, None] * C[:, bb.idx[:, w]].T
            out.append(acc[inv.ravel()])
        return out

    def evaluate_batch(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.size == 0:
            return np.zeros(0)
        pts = pts.reshape(-1, self.n_dims)
        factors = self.mode_factors(pts)
        prod = factors[0].copy()
        for f in factors[1:]:
            prod *= f
        total = np.zeros(pts.shape[0])
        for m in range(self.n_modes):
            total += prod[:, m]
        return total

    def evaluate(self, point) -> float:
        pt = np.asarray(point, dtype=np.float64).reshape(1, -1)
        if pt.shape[1] != self.n_dims:
            raise InvalidArgumentError(f"point must have {self.n_dims} coordinates")
        return float(self.evaluate_batch(pt)[0])

    def evaluate_grid(self, axes) -> np.ndarray:
        """Tensor-grid evaluation; ``axes[d]`` are coordinates along dim d."""
        if len(axes) != self.n_dims:
            raise InvalidArgumentError("need one axis per dimension")
        mats = []
        for d, dim in enumerate(self.dims):
            a = np.asarray(axes[d], dtype=np.float64)
            mats.append(SeparableField([dim], [self.coeffs[d]]).mode_factors(a[:, None])[0])
        letters = "abcdefghijklmnopqrstuvwxyz"
        spec = ",".join(f"{letters[d]}z" for d in range(self.n_dims)) + "->" + letters[: self.n_dims]
        return np.einsum(spec, *mats, optimize=True) if self.n_modes else np.zeros([len(a) for a in axes])

    def __call__(self, points):
        return self.evaluate_batch(points)

    # -- scaling -----------------------------------------------------------

    def normalize_modes(self) -> "SeparableField":
        """Unit Euclidean norm on dims 1.., magnitude folded into dim 0."""
        new = [c.copy() for c in self.coeffs]
        for d in range(1, self.n_dims):
            nrm = np.linalg.norm(new[d], axis=1)
            safe = np.where(nrm > 0, nrm, 1.0)
            new[d] /= safe[:, None]
            new[0] *= safe[:, None]
        return SeparableField(self.dims, new)

    def __repr__(self):
        return f"SeparableField(dims={self.names}, M={self.n_modes})"

    # -- io ----------------------------------------------------------------

    def header(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "n_modes": self.n_modes,
            "dims": [
                {
                    "name": d.name,
                    "kind": d.kind.value,
                    "nodes": d.mesh.nodes.tolist(),
                    "patch": {"s": d.patch.s, "a": d.patch.a, "p": d.patch.p,
                              "kernel": d.patch.kernel.value},
                }
                for d in self.dims
            ],
        }

    def to_bytes(self) -> bytes:
        hdr = json.dumps(self.header(), separators=(",", ":")).encode()
        buf = io.BytesIO()
        buf.write(struct.pack("<Q", len(hdr)))
        buf.write(hdr)
        for m in range(self.n_modes):
            for c in self.coeffs:
                buf.write(np.ascontiguousarray(c[m], dtype="<f8").tobytes())
        payload = buf.getvalue()
        return MAGIC + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def same_dims(a: Sequence[DimensionSpec], b: Sequence[DimensionSpec]) -> bool:
    return len(a) == len(b) and all(
        x.name == y.name and x.mesh == y.mesh and x.patch == y.patch and x.kind == y.kind
        for x, y in zip(a, b))


def inner_product_l2(f: SeparableField, g: SeparableField) -> float:
    """Exact discrete L2 inner product through the 1D mass matrices."""
    from .assembly import mass_matrix

    if not same_dims(f.dims, g.dims):
        raise InvalidArgumentError("fields live on different dimension sets")
    if f.n_modes == 0 or g.n_modes == 0:
        return 0.0
    acc = np.ones((f.n_modes, g.n_modes))
    for d, dim in enumerate(f.dims):
        M = mass_matrix(dim.mesh, dim.patch)
        acc *= f.coeffs[d] @ M.matmat(g.coeffs[d].T)
    return float(acc.sum())


def l2_norm(f: SeparableField) -> float:
    return float(np.sqrt(max(inner_product_l2(f, f), 0.0)))


# -- container parsing -------------------------------------------------------


def _parse_header(data: bytes):
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise FormatError("not an INNTD1 container")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if len(data) < start + hlen:
        raise FormatError("truncated header")
    try:
        header = json.loads(data[start: start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {header.get('version')!r}")
    return header, start + hlen


def read_header(path) -> dict:
    """Read only the metadata; coefficient blocks are not touched."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 8)
        if len(head) < len(MAGIC) + 8 or head[: len(MAGIC)] != MAGIC:
            raise FormatError("not an INNTD1 container")
        (hlen,) = struct.unpack("<Q", head[len(MAGIC):])
        body = fh.read(hlen)
    header, _ = _parse_header(head + body)
    return header


def _dims_from_header(header: dict):
    try:
        dims = []
        for d in header["dims"]:
            p = d["patch"]
            dims.append(DimensionSpec(
                d["name"], Mesh1D(np.asarray(d["nodes"], dtype=np.float64)),
                PatchConfig(s=int(p["s"]), a=float(p["a"]), p=int(p["p"]), kernel=Kernel(p["kernel"])),
                DimKind(d["kind"])))
        return dims, int(header["n_modes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed header: {exc}") from None


def from_bytes(data: bytes) -> SeparableField:
    header, off = _parse_header(data)
    dims, M = _dims_from_header(header)
    sizes = [d.n_nodes for d in dims]
    need = off + 8 * M * sum(sizes) + 4
    if len(data) != need:
        raise FormatError(f"container has {len(data)} bytes, expected {need}")
    payload = data[len(MAGIC): -4]
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError("checksum mismatch")
    blocks = [np.zeros((M, n)) for n in sizes]
    pos = off
    for m in range(M):
        for d, n in enumerate(sizes):
            blocks[d][m] = np.frombuffer(data, dtype="<f8", count=n, offset=pos)
            pos += 8 * n
    return SeparableField(dims, blocks)


def load(path) -> SeparableField:
    return from_bytes(Path(path).read_bytes())


def save(f: SeparableField, path) -> None:
    f.save(path)


def evaluate(f: SeparableField, point) -> float:
    return f.evaluate(point)


def evaluate_batch(f: SeparableField, points) -> np.ndarray:
    return f.evaluate_batch(points)


def add_mode(f: SeparableField, vectors) -> SeparableField:
    return f.add_mode(vectors)
