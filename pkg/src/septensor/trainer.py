"""Data-driven fitting of a SeparableField by mean-squared error.

Two schemes: boosting (one mode at a time against the frozen residual) and
all-at-once (every mode updated together).  Both use mini-batch Adam with
early stopping on a held-out validation split.
"""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (ConfigurationError, FormatError, InvalidArgumentError, OutOfDomainError,
                     TrainingError)
from .field import DimensionSpec, SeparableField

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    names: tuple = ()
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise InvalidArgumentError(
                f"{self.inputs.shape[0]} input rows but {self.targets.shape[0]} targets")
        if self.targets.size < 1:
            raise InvalidArgumentError("dataset is empty")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise InvalidArgumentError("dataset contains non-finite values")
        self.names = tuple(self.names) or tuple(f"x{i + 1}" for i in range(self.n_dims))
        if len(self.names) != self.n_dims:
            raise InvalidArgumentError("one name per input column required")

    @property
    def size(self) -> int:
        return self.targets.size

    @property
    def n_dims(self) -> int:
        return self.inputs.shape[1]

    def check_domain(self, dims: Sequence[DimensionSpec]) -> None:
        """Reject rows outside the box spanned by ``dims``."""
        if len(dims) != self.n_dims:
            raise InvalidArgumentError(f"dataset has {self.n_dims} inputs, field has {len(dims)} dims")
        bad = np.zeros(self.size, dtype=bool)
        for d, dim in enumerate(dims):
            tol = 1e-12 * max(1.0, abs(dim.mesh.lower), abs(dim.mesh.upper))
            col = self.inputs[:, d]
            bad |= (col < dim.mesh.lower - tol) | (col > dim.mesh.upper + tol)
        if bad.any():
            rows = np.flatnonzero(bad)
            raise OutOfDomainError(f"{rows.size} rows outside the domain, first at row {rows[0]}",
                                   indices=rows)

    def split(self, seed: int = 0, val_fraction: float = 0.1):
        """(train, validation) index arrays; explicit ones win over the seeded shuffle."""
        if self.train_idx is not None:
            val = self.val_idx if self.val_idx is not None else np.zeros(0, dtype=np.int64)
            return np.asarray(self.train_idx), np.asarray(val)
        perm = np.random.default_rng(seed).permutation(self.size)
        n_val = int(round(val_fraction * self.size)) if self.size > 1 else 0
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.names)

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path, target_name: str = "u") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.names) + [target_name])
            for row, y in zip(self.inputs, self.targets):
                w.writerow([f"{v:.17g}" for v in row] + [f"{y:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise FormatError(f"{path}: need a header and at least one data row")
        header = rows[0]
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        if data.ndim != 2 or data.shape[1] != len(header) or len(header) < 2:
            raise FormatError(f"{path}: ragged rows or missing target column")
        return cls(data[:, :-1], data[:, -1], tuple(header[:-1]))


class Scheme(str, enum.Enum):
    BOOSTING = "boosting"
    ALL_AT_ONCE = "all_at_once"


@dataclass(frozen=True)
class TrainConfig:
    scheme: Scheme = Scheme.ALL_AT_ONCE
    modes: int = 1
    epochs_max: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    loss_tol: float = 0.0   # boosting stops once train MSE falls to this
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.modes < 0 or self.epochs_max < 1 or self.batch_size < 1:
            raise ConfigurationError("modes must be >= 0, epochs_max and batch_size >= 1")
        if not self.learning_rate > 0 or self.early_stop_patience < 1:
            raise ConfigurationError("learning_rate must be positive and patience >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigurationError("Adam betas must lie in [0, 1) and eps be positive")
        if not 0 <= self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    stage: list = field(default_factory=list)     # boosting stage of each epoch
    stop_reason: str = ""
    n_params: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# sparse design matrices


class _Design:
    """Per-dim CSR matrices Phi_d (K x n_d) of shape-function values at the rows."""

    def __init__(self, dims: Sequence[DimensionSpec], inputs: np.ndarray):
        self.dims = tuple(dims)
        self.phi = []
        for d, dim in enumerate(self.dims):
            xs, inv = np.unique(inputs[:, d], return_inverse=True)
            bb = dim.basis.evaluate(xs)
            vals = np.where(bb.mask, bb.values, 0.0)[inv.ravel()]
            idx = bb.idx[inv.ravel()]
            K, w = idx.shape
            m = sp.csr_matrix((vals.ravel(), idx.ravel(), np.arange(0, K * w + 1, w)),
                              shape=(K, dim.n_nodes))
            m.sum_duplicates()
            self.phi.append(m)

    def rows(self, idx) -> list:
        return [m[idx] for m in self.phi]


def _factors(phi, coeffs):
    return [np.asarray(p @ c.T) for p, c in zip(phi, coeffs)]


def _predict(factors) -> np.ndarray:
    prod = factors[0].copy()
    for f in factors[1:]:
        prod *= f
    return prod.sum(axis=1)


def _grad_from(phi, coeffs, resid, n_rows):
    """d/dC_d of mean(resid^2) given row design blocks; resid = pred - target."""
    F = _factors(phi, coeffs)
    D = len(F)
    # products over every other dim via prefix/suffix sweeps (no division)
    pre = [None] * D
    acc = np.ones_like(F[0])
    for d in range(D):
        pre[d] = acc
        acc = acc * F[d]
    grads = [None] * D
    acc = np.ones_like(F[0])
    for d in range(D - 1, -1, -1):
        others = pre[d] * acc
        grads[d] = np.asarray((phi[d].T @ (others * resid[:, None])).T) * (2.0 / n_rows)
        acc = acc * F[d]
    return grads


def loss_mse(f: SeparableField, data: Dataset) -> float:
    data.check_domain(f.dims)
    r = f.evaluate_batch(data.inputs) - data.targets
    return float(np.mean(r * r))


def grad_mse(f: SeparableField, inputs, targets) -> list:
    """Gradient of the batch MSE with respect to every coefficient block."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise InvalidArgumentError("batch is empty")
    Dataset(inputs, targets).check_domain(f.dims)
    phi = _Design(f.dims, inputs).phi
    resid = _predict(_factors(phi, f.coeffs)) - targets
    return _grad_from(phi, [np.asarray(c) for c in f.coeffs], resid, targets.size)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, shapes, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        """In-place update of ``params``."""
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# training loops


def _init_coeffs(dims, M, rng):
    # the 1/M factor goes on one dim only, so the mode sum stays bounded
    out = [rng.uniform(-0.1, 0.1, (M, d.n_nodes)) for d in dims]
    out[0] /= max(M, 1)
    return out


def _fit(design, coeffs, targets, base, tr, va, cfg, rng, report, stage):
    """Adam on ``coeffs`` against ``targets - base``; returns best-validation coeffs."""
    opt = Adam([c.shape for c in coeffs], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    goal = targets - base

    def mse(idx):
        if idx.size == 0:
            return float("nan")
        # overflow shows up as a non-finite loss, which the epoch loop reports
        with np.errstate(over="ignore", invalid="ignore"):
            r = _predict(_factors(design.rows(idx), coeffs)) - goal[idx]
            return float(np.mean(r * r))

    watch = va if va.size else tr
    best = [c.copy() for c in coeffs]
    best_val = mse(watch)
    prev_val = best_val
    rising = 0
    reason = "max_epochs"
    for epoch in range(cfg.epochs_max):
        perm = tr[rng.permutation(tr.size)]
        for start in range(0, perm.size, cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            phi = design.rows(b)
            resid = _predict(_factors(phi, coeffs)) - goal[b]
            opt.step(coeffs, _grad_from(phi, coeffs, resid, b.size))
        tr_mse, val_mse = mse(tr), mse(va)
        if not np.isfinite(tr_mse) or (va.size and not np.isfinite(val_mse)):
            raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
        report.train_mse.append(tr_mse)
        report.val_mse.append(val_mse)
        report.stage.append(stage)
        cur = val_mse if va.size else tr_mse
        if cur < best_val:
            best_val = cur
            best = [c.copy() for c in coeffs]
        rising = rising + 1 if cur > prev_val else 0
        prev_val = cur
        if rising >= cfg.early_stop_patience:
            reason = "early_stop"
            break
    return best, reason


def _prepare(dims, data: Dataset, cfg: TrainConfig):
    dims = tuple(dims)
    data.check_domain(dims)
    tr, va = data.split(cfg.seed, cfg.val_fraction)
    if tr.size == 0:
        raise InvalidArgumentError("training split is empty")
    return dims, _Design(dims, data.inputs), tr, va


def train_all_at_once(dims: Sequence[DimensionSpec], data: Dataset, cfg: TrainConfig):
    dims, design, tr, va = _prepare(dims, data, cfg)
    report = TrainReport()
    rng = np.random.default_rng(cfg.seed)
    if cfg.modes == 0:
        report.stop_reason = "no_modes"
        return SeparableField(dims), report
    coeffs = _init_coeffs(dims, cfg.modes, rng)
    best, report.stop_reason = _fit(design, coeffs, data.targets, np.zeros(data.size), tr, va,
                                    cfg, rng, report, 0)
    f = SeparableField(dims, best)
    report.n_params = int(sum(c.size for c in f.coeffs))
    return f, report


def train_boosting(dims: Sequence[DimensionSpec], data: Dataset, cfg: TrainConfig):
    dims, design, tr, va = _prepare(dims, data, cfg)
    report = TrainReport(stop_reason="no_modes" if cfg.modes == 0 else "max_modes")
    rng = np.random.default_rng(cfg.seed)
    f = SeparableField(dims)
    base = np.zeros(data.size)
    cur_train = float(np.mean(data.targets[tr] ** 2))
    for stage in range(cfg.modes):
        if cur_train <= cfg.loss_tol:
            report.stop_reason = "loss_tol"
            break
        coeffs = _init_coeffs(dims, 1, rng)
        best, _ = _fit(design, coeffs, data.targets, base, tr, va, cfg, rng, report, stage)
        contrib = _predict(_factors(design.phi, best))
        new_train = float(np.mean((base + contrib - data.targets)[tr] ** 2))
        if not new_train <= cur_train:
            # a mode that makes the frozen sum worse is not kept
            report.stop_reason = "no_improvement"
            break
        f = f.add_mode([c[0] for c in best])
        base = base + contrib
        cur_train = new_train
    report.n_params = int(sum(c.size for c in f.coeffs))
    return f, report


def train(dims: Sequence[DimensionSpec], data: Dataset, cfg: TrainConfig):
    if cfg.scheme == Scheme.BOOSTING:
        return train_boosting(dims, data, cfg)
    return train_all_at_once(dims, data, cfg)
