"""Per-test prior probabilities that a hypothesis is non-null.

Priors normally come from an external two-group estimator and are read from
a ``test_id,p_nonnull`` file.  Two built-in fallbacks exist: a constant prior
from the Storey null-proportion estimate, and a local version of the same
estimate obtained by Gaussian-kernel smoothing over the test grid.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import HypothesisGrid, storey_pi0
from .errors import DimensionError, DomainError, IngestionError

logger = logging.getLogger(__name__)

PRIOR_SOURCES = ("external-file", "constant", "spatial-kernel")
PRIOR_HEADER = ("test_id", "p_nonnull")
DEFAULT_BANDWIDTH = 4.5
DEFAULT_SCREEN = 0.9


@dataclass
class PriorField:
    p: np.ndarray
    source: str
    meta: str = ""

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.ndim != 1 or self.p.size == 0:
            raise DimensionError("prior must be a non-empty 1-D array")
        if np.any(np.isnan(self.p)) or np.any((self.p < 0) | (self.p > 1)):
            raise DomainError("prior probabilities must lie in [0, 1]")
        if self.source not in PRIOR_SOURCES:
            raise DomainError(f"unknown prior source {self.source!r}")

    def __len__(self):
        return self.p.size


def export_prior(prior: PriorField, path, test_ids) -> None:
    test_ids = np.asarray(test_ids)
    if test_ids.size != prior.p.size:
        raise DimensionError("need one test id per prior value")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRIOR_HEADER)
        for tid, value in zip(test_ids, prior.p):
            writer.writerow([int(tid), repr(float(value))])


def ingest_prior(path, test_ids) -> PriorField:
    """Read a prior file and align it to ``test_ids``.

    ``test_ids`` may be a :class:`HypothesisGrid`, in which case its candidate
    ids are used.  Every requested id must be present exactly once; extra rows
    are ignored.

    Raises
    ------
    IngestionError
        On a bad header, non-numeric or out-of-range values, duplicate or
        missing test ids.  Messages name the offending row or id.
    """
    if isinstance(test_ids, HypothesisGrid):
        test_ids = test_ids.candidate_ids
    test_ids = np.asarray(test_ids, dtype=np.int64)
    path = Path(path)
    values = {}
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PRIOR_HEADER:
            raise IngestionError(f"{path}: header must be {','.join(PRIOR_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise IngestionError(f"{path}, row {lineno}: expected 2 fields, got {len(row)}")
            try:
                tid = int(row[0])
                value = float(row[1])
            except ValueError:
                raise IngestionError(f"{path}, row {lineno}: non-numeric entry {row}") from None
            if not 0.0 <= value <= 1.0:
                raise IngestionError(f"{path}, row {lineno}: p_nonnull={value} outside [0, 1]")
            if tid in values:
                raise IngestionError(f"{path}, row {lineno}: duplicate test_id {tid}")
            values[tid] = value
    missing = [int(t) for t in test_ids if int(t) not in values]
    if missing:
        shown = ", ".join(str(t) for t in missing[:10])
        more = f" (and {len(missing) - 10} more)" if len(missing) > 10 else ""
        raise IngestionError(f"{path}: missing test_id {shown}{more}")
    p = np.array([values[int(t)] for t in test_ids])
    return PriorField(p, "external-file", meta=str(path))


def constant_prior(pvalues, kappa: float = 0.5) -> PriorField:
    """Every test gets ``1 - pi0_hat`` from the Storey estimate at ``kappa``."""
    pvalues = np.asarray(pvalues, dtype=float)
    pi0 = storey_pi0(pvalues, kappa)
    return PriorField(np.full(pvalues.size, 1.0 - pi0), "constant", meta=f"storey kappa={kappa}")


def gaussian_kernel(bandwidth: float, dims: int, extent=None) -> np.ndarray:
    """Gaussian stencil ``exp(-|d|^2 / (2 h^2))`` truncated at radius ``4 h``.

    ``extent`` (one length per axis) caps the stencil at what a grid of that
    size can reach, so very large bandwidths stay cheap.
    """
    radius = int(np.floor(4.0 * bandwidth))
    extent = [radius + 1] * dims if extent is None else extent
    axes = [np.arange(-min(radius, n - 1), min(radius, n - 1) + 1, dtype=float) for n in extent]
    mesh = np.meshgrid(*axes, indexing="ij")
    d2 = sum(m * m for m in mesh)
    kernel = np.exp(-d2 / (2.0 * bandwidth * bandwidth))
    kernel[d2 > (4.0 * bandwidth) ** 2] = 0.0
    return kernel


def spatial_kernel_prior(
    pvalues,
    grid: HypothesisGrid,
    bandwidth: float = DEFAULT_BANDWIDTH,
    threshold: float = DEFAULT_SCREEN,
) -> PriorField:
    """Local non-null probability from kernel-weighted screening counts.

    For each candidate,

        p_m = 1 - min(1, sum_k K(z_m, z_k) I(P_k > threshold)
                         / ((1 - threshold) sum_k K(z_m, z_k)))

    summing over candidates ``k`` (the test itself included).

    Parameters
    ----------
    pvalues : array_like
        One p-value per candidate of ``grid``, in test-id order.
    grid : HypothesisGrid
    bandwidth : float
        Kernel standard deviation in grid units.
    threshold : float
        Screening level; p-values above it are treated as nulls.
    """
    pvalues = np.asarray(pvalues, dtype=float)
    ids = grid.candidate_ids
    if pvalues.shape != ids.shape:
        raise DimensionError(f"{pvalues.size} p-values for {ids.size} candidate tests")
    if not bandwidth > 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth}")
    if not 0 < threshold < 1:
        raise DomainError(f"screening threshold must be in (0, 1), got {threshold}")

    present = np.zeros(grid.M)
    present[ids] = 1.0
    screened = np.zeros(grid.M)
    screened[ids] = (pvalues > threshold).astype(float)
    kernel = gaussian_kernel(bandwidth, grid.dims, grid.shape)
    num = ndimage.correlate(screened.reshape(grid.shape), kernel, mode="constant", cval=0.0)
    den = ndimage.correlate(present.reshape(grid.shape), kernel, mode="constant", cval=0.0)
    ratio = num.ravel()[ids] / ((1.0 - threshold) * den.ravel()[ids])
    p = 1.0 - np.minimum(1.0, ratio)
    p = np.clip(p, 0.0, 1.0)
    return PriorField(p, "spatial-kernel", meta=f"bandwidth={bandwidth} threshold={threshold}")

