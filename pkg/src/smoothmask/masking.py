"""Row-stochastic masking operators and their application to datasets.

Masked outcomes/regressors are weighted averages of the originals: the
row-transform special case of matrix masking, with one shared operator
applied to the outcome and every regressor column.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .dataset import GridSpec, SpatialDataset, aggregate, coords_array
from .kernels import KernelFamily


def location_fingerprint(locs) -> str:
    """Order-sensitive hash of the source locations an operator was built on."""
    arr = np.ascontiguousarray(coords_array(locs), dtype=np.float64)
    return hashlib.sha256(arr.tobytes()).hexdigest()


@dataclass(frozen=True)
class MaskingOperator:
    """Dense n x n row-stochastic matrix derived from a kernel family at one lambda."""

    a: np.ndarray
    kernel: KernelFamily
    lam: float
    fingerprint: str

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def apply(self, data: SpatialDataset) -> "MaskedDataset":
        """Smooth the outcome and all regressor columns; count weights pass through."""
        if data.n_records != self.n:
            raise ValueError(f"operator is {self.n} x {self.n} but dataset has {data.n_records} records")
        if location_fingerprint(data.locs) != self.fingerprint:
            raise ValueError("operator was built on different locations than this dataset")
        masked = data.replace_values(x=self.a @ data.x, y=self.a @ data.y)
        return MaskedDataset(data=masked, kernel=self.kernel, lam=self.lam)


@dataclass(frozen=True)
class MaskedDataset:
    """A smoothed dataset plus the provenance of its masking."""

    data: SpatialDataset
    kernel: KernelFamily
    lam: float

    @property
    def ids(self):
        return self.data.ids

    @property
    def x(self) -> np.ndarray:
        return self.data.x

    @property
    def y(self) -> np.ndarray:
        return self.data.y


def build_operator(locs, kernel: KernelFamily, lam: float,
                   sparsify_threshold: float = 0.0) -> MaskingOperator:
    """Normalize kernel weights over the given locations into a row-stochastic matrix.

    The self-weight is included in each row's normalizing sum. With
    ``sparsify_threshold`` = eps > 0, weights below eps * (row max) are dropped
    before renormalizing; the default keeps the exact dense operator.
    """
    locs = coords_array(locs)
    w = kernel.weight_matrix(locs, lam)
    if sparsify_threshold < 0:
        raise ValueError("sparsify_threshold must be >= 0")
    if sparsify_threshold > 0:
        cut = sparsify_threshold * w.max(axis=1, keepdims=True)
        w = np.where(w < cut, 0.0, w)
    sums = w.sum(axis=1)
    dead = ~(sums > 0)
    if dead.any():
        raise ValueError(f"row {int(np.argmax(dead))} has all-zero weights; cannot normalize")
    return MaskingOperator(
        a=w / sums[:, None],
        kernel=kernel,
        lam=float(lam),
        fingerprint=location_fingerprint(locs),
    )


def mask_dataset(data: SpatialDataset, kernel: KernelFamily, lam: float,
                 sparsify_threshold: float = 0.0) -> MaskedDataset:
    """Build the operator on the dataset's own locations and apply it."""
    return build_operator(data.locs, kernel, lam, sparsify_threshold).apply(data)


def compose_two_step(data: SpatialDataset, grid: GridSpec, kernel: KernelFamily,
                     lam: float) -> MaskedDataset:
    """Aggregate to grid cells, then smooth the cell-level data over cell centroids.

    The cell outcome is smoothed as a rate (y_plus / n), then rescaled back to
    a count by the unsmoothed cell size; counts themselves are never smoothed.
    """
    agg = aggregate(data, grid)
    cells = agg.as_dataset()
    op = build_operator(cells.locs, kernel, lam)
    rates = agg.y_plus / agg.n
    smoothed_rates = op.a @ rates
    smoothed = cells.replace_values(x=op.a @ cells.x, y=smoothed_rates * agg.n)
    return MaskedDataset(data=smoothed, kernel=kernel, lam=float(lam))


def operator_to_csv(op: MaskingOperator, path) -> None:
    """Audit export of the full matrix. Releasing the weights together with the
    smoothness value enables reconstruction of the originals whenever the
    matrix is invertible, so exported operators must be handled as confidential."""
    header = ",".join(f"a_{j}" for j in range(op.n))
    rows = [",".join(repr(float(v)) for v in op.a[i]) for i in range(op.n)]
    text = header + "\n" + "\n".join(rows) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
