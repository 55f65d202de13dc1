"""Domain types and the step-up testing procedures.

Every procedure here operates on the candidate tests only: arrays are
1-D with one entry per candidate, in test-id order.  Mapping results back
onto a full grid is the caller's job (see :mod:`wabh.pipeline`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import DimensionError, DomainError, InputError

logger = logging.getLogger(__name__)

PI0_FLOOR = 1e-6
INCONCLUSIVE_CUTOFF = 0.1

WEIGHT_SOURCES = ("optimal-fixed-eta", "mmw", "ten-percent-rule", "unit")


@dataclass
class HypothesisGrid:
    """Regular 2-D or 3-D lattice of tests with a candidate mask.

    Test ids are the row-major linear index into ``shape``.
    """

    shape: Tuple[int, ...]
    candidate_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.shape) not in (2, 3) or min(self.shape) < 1:
            raise DimensionError(f"grid must be 2-D or 3-D, got shape {self.shape}")
        if self.candidate_mask is None:
            self.candidate_mask = np.ones(self.M, dtype=bool)
        else:
            self.candidate_mask = np.asarray(self.candidate_mask, dtype=bool).ravel()
            if self.candidate_mask.size != self.M:
                raise DimensionError(
                    f"candidate mask has {self.candidate_mask.size} entries, grid has {self.M}"
                )
        if not self.candidate_mask.any():
            raise DimensionError("grid has no candidate tests")

    @property
    def M(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dims(self) -> int:
        return len(self.shape)

    @property
    def coords(self) -> np.ndarray:
        """(M, dims) integer coordinates of every test."""
        return np.stack(np.unravel_index(np.arange(self.M), self.shape), axis=1)

    @property
    def candidate_ids(self) -> np.ndarray:
        return np.flatnonzero(self.candidate_mask)

    @classmethod
    def from_coords(cls, coords, shape=None) -> "HypothesisGrid":
        """Build a grid whose candidates are the listed integer coordinates."""
        coords = np.asarray(coords)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise DimensionError("coordinates must be an (M, 2) or (M, 3) array")
        if not np.issubdtype(coords.dtype, np.integer):
            if not np.all(coords == np.round(coords)):
                raise InputError("grid coordinates must be integers")
            coords = coords.astype(np.int64)
        if coords.min() < 0:
            raise InputError("grid coordinates must be non-negative")
        if shape is None:
            shape = tuple(int(c) + 1 for c in coords.max(axis=0))
        elif np.any(coords.max(axis=0) >= np.asarray(shape)):
            raise InputError(f"coordinates fall outside grid shape {tuple(shape)}")
        mask = np.zeros(int(np.prod(shape)), dtype=bool)
        mask[np.ravel_multi_index(tuple(coords.T), shape)] = True
        return cls(shape, mask)

    def subset(self, keep) -> "HypothesisGrid":
        """Restrict candidacy to ``keep`` (boolean over current candidates)."""
        keep = np.asarray(keep, dtype=bool)
        ids = self.candidate_ids
        if keep.size != ids.size:
            raise DimensionError("keep mask must cover the current candidates")
        mask = np.zeros(self.M, dtype=bool)
        mask[ids[keep]] = True
        return HypothesisGrid(self.shape, mask)


@dataclass
class WeightScheme:
    """Normalized p-value weights and the parameters that produced them."""

    weights: np.ndarray
    source: str = "unit"
    eta: Optional[float] = None
    lambda_hat: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise DimensionError("weights must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise DomainError("weights must be finite and non-negative")
        if self.source not in WEIGHT_SOURCES:
            raise DomainError(f"unknown weight source {self.source!r}")
        mean = self.weights.mean()
        if abs(mean - 1.0) > 1e-10:
            raise DomainError(f"weights must average to 1, got mean {mean!r}")

    @classmethod
    def unit(cls, M: int) -> "WeightScheme":
        return cls(np.ones(M), source="unit")

    @classmethod
    def normalized(cls, raw, **kwargs) -> "WeightScheme":
        """Rescale non-negative ``raw`` to mean one."""
        raw = np.asarray(raw, dtype=float)
        total = raw.sum()
        if not total > 0:
            raise DomainError("cannot normalize an all-zero weight vector")
        return cls(raw / (total / raw.size), **kwargs)

    def __len__(self):
        return self.weights.size


@dataclass
class WeightImpact:
    frac_upweighted: float
    frac_inconclusive: float
    max_weight: float

    @classmethod
    def from_weights(cls, weights, cutoff=INCONCLUSIVE_CUTOFF) -> "WeightImpact":
        w = np.asarray(weights, dtype=float)
        return cls(
            frac_upweighted=float(np.mean(w >= 1.0)),
            frac_inconclusive=float(np.mean(w < cutoff)),
            max_weight=float(w.max()),
        )


@dataclass
class DecisionSet:
    """Outcome of a step-up procedure on (possibly weighted) p-values."""

    q_values: np.ndarray
    threshold: float
    decisions: np.ndarray
    pi0_hat: float
    alpha: float
    impact: WeightImpact = field(default_factory=lambda: WeightImpact(1.0, 0.0, 1.0))

    @property
    def n_rejected(self) -> int:
        return int(self.decisions.sum())


def _as_statistics(q, name="q") -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise DimensionError(f"{name} must be 1-D")
    if q.size == 0:
        raise DimensionError(f"{name} is empty")
    if np.any(np.isnan(q)):
        raise InputError(f"{name} contains NaN")
    return q


def _check_pvalues(p) -> np.ndarray:
    p = _as_statistics(p, "p-values")
    if np.any((p < 0) | (p > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    return p


def weighted_pvalues(p, w) -> np.ndarray:
    """Return Q = P / w, with Q = inf wherever w = 0."""
    p = _check_pvalues(p)
    w = np.asarray(getattr(w, "weights", w), dtype=float)
    if w.shape != p.shape:
        raise DimensionError(f"{p.size} p-values but {w.size} weights")
    if np.any(w < 0):
        raise DomainError("weights must be non-negative")
    q = np.full_like(p, np.inf)
    pos = w > 0
    q[pos] = p[pos] / w[pos]
    return q


def stepup_cutoffs(M: int, alpha: float, pi0: float = 1.0) -> np.ndarray:
    """Critical values m * alpha / (pi0 * M) for m = 1..M."""
    m = np.arange(1, M + 1, dtype=float)
    return (m * alpha) / (pi0 * M)


def bh_stepup(q, alpha: float = 0.05, pi0: float = 1.0) -> DecisionSet:
    """Benjamini-Hochberg step-up at level ``alpha / pi0``, threshold capped at alpha.

    With ``k = max{m : q_(m) <= m alpha / (pi0 M)}`` the rejection threshold is
    ``min(alpha, k alpha / (pi0 M))``; ``k = 0`` rejects nothing.  ``pi0 = 1`` is
    plain BH.
    """
    q = _as_statistics(q)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    if not 0 < pi0 <= 1:
        raise DomainError(f"pi0 must be in (0, 1], got {pi0}")
    M = q.size
    q_sorted = np.sort(q, kind="stable")
    passing = np.flatnonzero(q_sorted <= stepup_cutoffs(M, alpha, pi0))
    if passing.size == 0:
        threshold = 0.0
        decisions = np.zeros(M, dtype=bool)
    else:
        k = passing[-1] + 1
        threshold = min(alpha, (k * alpha) / (pi0 * M))
        decisions = q <= threshold
    return DecisionSet(q, float(threshold), decisions, float(pi0), float(alpha))


def storey_pi0(q, kappa: float = 0.5, floor: float = PI0_FLOOR) -> float:
    """Storey-type null proportion ``(#{q >= kappa} + 1) / (M (1 - kappa))``.

    Clipped to ``[floor, 1]``.
    """
    q = _as_statistics(q)
    if not 0 < kappa < 1:
        raise DomainError(f"kappa must be in (0, 1), got {kappa}")
    raw = (np.count_nonzero(q >= kappa) + 1) / (q.size * (1.0 - kappa))
    return float(min(1.0, max(floor, raw)))


def prior_pi0(prior, floor: float = PI0_FLOOR) -> float:
    """Mean prior null probability, ``mean(1 - p_m)``, clamped below at ``floor``."""
    p = np.asarray(getattr(prior, "p", prior), dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DimensionError("prior must be a non-empty 1-D array")
    if np.any((p < 0) | (p > 1)):
        raise DomainError("prior probabilities must lie in [0, 1]")
    return float(max(floor, np.mean(1.0 - p)))


Pi0Mode = Union[str, float]


def parse_pi0_mode(mode: Pi0Mode) -> Tuple[str, Optional[float]]:
    """Normalize ``"prior"``, ``"storey"``, ``"storey:0.05"`` or a fixed float."""
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        if not 0 < mode <= 1:
            raise DomainError(f"fixed pi0 must be in (0, 1], got {mode}")
        return "fixed", float(mode)
    text = str(mode).strip().lower()
    if text == "prior":
        return "prior", None
    if text == "storey":
        return "storey", 0.5
    if text.startswith("storey:"):
        try:
            kappa = float(text.split(":", 1)[1])
        except ValueError:
            raise DomainError(f"bad storey threshold in {mode!r}") from None
        if not 0 < kappa < 1:
            raise DomainError(f"kappa must be in (0, 1), got {kappa}")
        return "storey", kappa
    raise DomainError(f"unknown pi0 mode {mode!r}")


def wabh(
    p,
    w,
    alpha: float = 0.05,
    pi0_mode: Pi0Mode = "prior",
    prior=None,
    inconclusive_cutoff: float = INCONCLUSIVE_CUTOFF,
) -> DecisionSet:
    """Weighted adaptive BH.

    Parameters
    ----------
    p : array_like
        Unweighted p-values of the candidate tests.
    w : WeightScheme or array_like
        Weights with mean one over the same tests.
    alpha : float
        Target FDR level.
    pi0_mode : {"prior", "storey", "storey:<kappa>"} or float
        ``"prior"`` uses ``mean(1 - p_m)`` of ``prior``; ``"storey"`` applies the
        threshold estimator to the weighted p-values; a float fixes pi0.
    prior : PriorField or array_like, optional
        Required when ``pi0_mode == "prior"``.
    inconclusive_cutoff : float
        Weights below this count as inconclusive in the impact summary.

    Returns
    -------
    DecisionSet
    """
    weights = np.asarray(getattr(w, "weights", w), dtype=float)
    q = weighted_pvalues(p, weights)
    kind, value = parse_pi0_mode(pi0_mode)
    if kind == "prior":
        if prior is None:
            raise DomainError("pi0_mode='prior' needs prior probabilities")
        prior_p = np.asarray(getattr(prior, "p", prior), dtype=float)
        if prior_p.shape != q.shape:
            raise DimensionError(f"{q.size} tests but {prior_p.size} prior values")
        pi0 = prior_pi0(prior_p)
    elif kind == "storey":
        pi0 = storey_pi0(q, value)
    else:
        pi0 = value
    result = bh_stepup(q, alpha, pi0)
    result.impact = WeightImpact.from_weights(weights, inconclusive_cutoff)
    logger.debug("wabh: pi0=%.4g threshold=%.4g R=%d", pi0, result.threshold, result.n_rejected)
    return result


def bh(p, alpha: float = 0.05) -> DecisionSet:
    return bh_stepup(_check_pvalues(p), alpha, 1.0)


def adaptive_bh(p, alpha: float = 0.05, kappa: float = 0.5) -> DecisionSet:
    p = _check_pvalues(p)
    return bh_stepup(p, alpha, storey_pi0(p, kappa))


def weighted_bh(p, w, alpha: float = 0.05, inconclusive_cutoff=INCONCLUSIVE_CUTOFF) -> DecisionSet:
    return wabh(p, w, alpha, pi0_mode=1.0, inconclusive_cutoff=inconclusive_cutoff)
