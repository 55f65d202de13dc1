"""Stationary Gaussian random fields on regular lattices.

Covariance ``v * exp(-(|z - z'| / s)^2)`` (squared exponential).  Sampling uses
circulant embedding: the covariance is wrapped onto a periodic lattice at
least twice the field size, its eigenvalues come from one FFT, and a complex
white-noise draw shaped by them gives an exact sample.  The squared
exponential is notoriously close to singular, so when no embedding up to
``MAX_EMBED_FACTOR`` times the field is non-negative definite we fall back to
a Cholesky factor.  The covariance is a Kronecker product of 1-D factors, so
the Cholesky is taken per axis (with diagonal jitter) instead of on the full
M x M matrix.
"""

from __future__ import annotations

import functools
import logging

import numpy as np

from .errors import DomainError, GenerationError

logger = logging.getLogger(__name__)

JITTER = 1e-8
EIGEN_TOL = 1e-10
MAX_EMBED_FACTOR = 8


def squared_exponential(d, scale):
    d = np.asarray(d, dtype=float)
    return np.exp(-((d / scale) ** 2))


@functools.lru_cache(maxsize=32)
def _embedding_sqrt_eigs(shape, scale):
    """sqrt of circulant eigenvalues / size, or None if no embedding is valid."""
    factor = 2
    while factor <= MAX_EMBED_FACTOR:
        ext = tuple(max(factor * n, 2) for n in shape)
        axes = []
        for m in ext:
            k = np.arange(m)
            axes.append(np.minimum(k, m - k).astype(float))
        mesh = np.meshgrid(*axes, indexing="ij")
        d = np.sqrt(sum(a * a for a in mesh))
        eig = np.real(np.fft.fftn(squared_exponential(d, scale)))
        if eig.min() >= -EIGEN_TOL * eig.max():
            root = np.sqrt(np.clip(eig, 0.0, None) / eig.size)
            root.setflags(write=False)
            return root
        factor *= 2
    return None


@functools.lru_cache(maxsize=32)
def _axis_cholesky(n, scale):
    k = np.arange(n, dtype=float)
    cov = squared_exponential(np.abs(k[:, None] - k[None, :]), scale)
    try:
        L = np.linalg.cholesky(cov + JITTER * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise GenerationError(f"covariance (n={n}, s={scale}) not positive definite after jitter") from exc
    L.setflags(write=False)
    return L


def embedding_available(shape, scale) -> bool:
    return _embedding_sqrt_eigs(tuple(int(n) for n in shape), float(scale)) is not None


def grf_sample(shape, scale: float, variance: float = 1.0, rng=None, method: str = "auto") -> np.ndarray:
    """Draw one zero-mean field of the given lattice ``shape``.

    Parameters
    ----------
    shape : tuple of int
        Lattice dimensions; unit spacing.
    scale : float
        Correlation length ``s`` of the squared-exponential covariance.
    variance : float
        Marginal variance ``v``; zero returns a zero field.
    rng : numpy.random.Generator or int, optional
    method : {"auto", "circulant", "cholesky"}

    Returns
    -------
    ndarray of ``shape``
    """
    shape = tuple(int(n) for n in shape)
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    if not variance >= 0:
        raise DomainError(f"variance must be non-negative, got {variance}")
    rng = np.random.default_rng(rng)
    if method not in ("auto", "circulant", "cholesky"):
        raise DomainError(f"unknown method {method!r}")

    root = None
    if method in ("auto", "circulant"):
        root = _embedding_sqrt_eigs(shape, float(scale))
        if root is None and method == "circulant":
            raise GenerationError(f"no non-negative definite embedding for shape={shape}, s={scale}")
    if root is not None:
        noise = rng.standard_normal(root.shape) + 1j * rng.standard_normal(root.shape)
        field = np.real(np.fft.fftn(root * noise))
        field = field[tuple(slice(0, n) for n in shape)]
    else:
        logger.debug("circulant embedding failed for shape=%s s=%s; using Cholesky", shape, scale)
        field = rng.standard_normal(shape)
        for axis, n in enumerate(shape):
            L = _axis_cholesky(n, float(scale))
            field = np.moveaxis(np.tensordot(L, field, axes=([1], [axis])), 0, axis)
    if variance == 0:
        return np.zeros(shape)
    return np.sqrt(variance) * field
