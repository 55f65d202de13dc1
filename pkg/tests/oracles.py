"""Independent reference implementations used by the tests.

These are deliberately naive: loops and direct enumeration, sharing no code
with the package.
"""

import math

import numpy as np


def stepup_oracle(q, alpha, pi0):
    """Try every candidate threshold m alpha / (pi0 M) and keep the largest valid one."""
    q = list(q)
    M = len(q)
    best = 0
    for m in range(1, M + 1):
        cut = m * alpha / (pi0 * M)
        if sum(1 for v in q if v <= cut) >= m:
            best = m
    if best == 0:
        return [False] * M, 0.0
    threshold = min(alpha, best * alpha / (pi0 * M))
    return [v <= threshold for v in q], threshold


def storey_oracle(q, kappa):
    count = sum(1 for v in q if v >= kappa)
    return min(1.0, max(1e-6, (count + 1) / (len(q) * (1 - kappa))))


def normal_sf(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def two_by_two(y, x):
    """Log odds ratio and its standard error for binary outcome x on binary y."""
    a = sum(1 for yi, xi in zip(y, x) if yi == 1 and xi == 1)
    b = sum(1 for yi, xi in zip(y, x) if yi == 1 and xi == 0)
    c = sum(1 for yi, xi in zip(y, x) if yi == 0 and xi == 1)
    d = sum(1 for yi, xi in zip(y, x) if yi == 0 and xi == 0)
    beta = math.log(a * d / (b * c))
    se = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    return beta, se, normal_sf(beta / se)


def lambda_grid_oracle(g, p, alpha, points=10**6, lo=1e-8, hi=1e8):
    """Minimize |G| over a geometric grid; returns (lam, grid ratio)."""
    from scipy.special import ndtr

    lams = np.geomspace(lo, hi, points)
    best, best_val = None, np.inf
    for chunk in np.array_split(lams, 200):
        lc = (np.log(chunk)[:, None] + np.log1p(-p) + np.log1p(-alpha)
              - np.log(p) - np.log1p(chunk[:, None] * alpha))
        shift = lc / g
        t = ndtr(-(0.5 * g + shift))
        F = ndtr(-(shift - 0.5 * g))
        G = (1 - alpha) * ((1 - p) * t).sum(axis=1) - alpha * (p * F).sum(axis=1)
        j = np.argmin(np.abs(G))
        if abs(G[j]) < best_val:
            best, best_val = chunk[j], abs(G[j])
    return best, lams[1] / lams[0]


def lambda_grid_bracket(g, p, alpha, points=10**6, lo=1e-8, hi=1e8):
    """Adjacent points of the geometric grid between which G changes sign.

    G is non-increasing in lambda, so bisection over grid indices visits the
    same grid as an exhaustive scan at a fraction of the cost.
    """
    from scipy.special import ndtr

    g, p = np.asarray(g, float), np.asarray(p, float)
    log_lo, step = math.log(lo), (math.log(hi) - math.log(lo)) / (points - 1)

    def G(k):
        lc = (log_lo + k * step) + np.log1p(-p) + math.log1p(-alpha) - np.log(p) - math.log1p(math.exp(log_lo + k * step) * alpha)
        t = ndtr(-(0.5 * g + lc / g))
        F = ndtr(-(lc / g - 0.5 * g))
        return (1 - alpha) * np.sum((1 - p) * t) - alpha * np.sum(p * F)

    a, b = 0, points - 1
    if not G(a) > 0 > G(b):
        raise ValueError("no sign change on the grid")
    while b - a > 1:
        mid = (a + b) // 2
        if G(mid) > 0:
            a = mid
        else:
            b = mid
    return math.exp(log_lo + a * step), math.exp(log_lo + b * step)
