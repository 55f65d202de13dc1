"""End-to-end testing: p-values, standard errors and priors in, decisions out.

``run_procedure`` covers the five procedures exposed by the CLI and the
simulation harness:

``bh``        plain Benjamini-Hochberg
``abh``       adaptive BH with the Storey null-proportion estimate
``wbh``       weighted BH (optimal weights, pi0 fixed at 1)
``wabh``      weighted adaptive BH (optimal weights, adaptive pi0)
``ten-rule``  weighted BH with weights from the 10% lesion-frequency rule
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import INCONCLUSIVE_CUTOFF, DecisionSet, WeightImpact, WeightScheme, bh_stepup, storey_pi0, wabh
from .errors import DomainError
from .weights import fixed_eta_weights, mmw_weights, ten_percent_rule

logger = logging.getLogger(__name__)

PROCEDURES = ("wabh", "bh", "abh", "wbh", "ten-rule")


@dataclass
class ProcedureResult:
    procedure: str
    weights: WeightScheme
    decisions: DecisionSet


def build_weights(s, prior, *, alpha: float, tau: Optional[float] = None, eta: Optional[float] = None) -> WeightScheme:
    """MMW weights when ``tau`` is given, fixed-effect optimal weights for ``eta``."""
    if (tau is None) == (eta is None):
        raise DomainError("give exactly one of tau and eta")
    if s is None:
        raise DomainError("weighted procedures need predicted standard errors")
    s = np.asarray(s, dtype=float)
    p = np.asarray(getattr(prior, "p", prior), dtype=float)
    if tau is not None:
        return mmw_weights(s, p, tau, alpha)
    return fixed_eta_weights(s, p, eta, alpha)


def run_procedure(
    procedure: str,
    pvalues,
    *,
    alpha: float = 0.05,
    s=None,
    xbar=None,
    prior=None,
    tau: Optional[float] = None,
    eta: Optional[float] = None,
    pi0_mode="prior",
    kappa: float = 0.5,
    inconclusive_cutoff: float = INCONCLUSIVE_CUTOFF,
    weights: Optional[WeightScheme] = None,
) -> ProcedureResult:
    """Run one procedure on the candidate tests.

    ``weights`` short-circuits the weight computation for ``wabh``/``wbh``.
    ``kappa`` is the Storey threshold used by ``abh``.
    """
    pvalues = np.asarray(pvalues, dtype=float)
    M = pvalues.size
    if procedure not in PROCEDURES:
        raise DomainError(f"unknown procedure {procedure!r}; choose from {', '.join(PROCEDURES)}")

    if procedure in ("bh", "abh"):
        scheme = WeightScheme.unit(M)
        pi0 = 1.0 if procedure == "bh" else storey_pi0(pvalues, kappa)
        decisions = bh_stepup(pvalues, alpha, pi0)
        decisions.impact = WeightImpact.from_weights(scheme.weights, inconclusive_cutoff)
        return ProcedureResult(procedure, scheme, decisions)

    if procedure == "ten-rule":
        if xbar is None:
            raise DomainError("the 10% rule needs lesion frequencies")
        scheme = ten_percent_rule(xbar)
        return ProcedureResult(procedure, scheme, wabh(pvalues, scheme, alpha, 1.0, None, inconclusive_cutoff))

    if weights is None:
        if prior is None:
            raise DomainError(f"{procedure} needs prior non-null probabilities")
        weights = build_weights(s, prior, alpha=alpha, tau=tau, eta=eta)
    if procedure == "wbh":
        return ProcedureResult(procedure, weights, wabh(pvalues, weights, alpha, 1.0, None, inconclusive_cutoff))
    return ProcedureResult(procedure, weights, wabh(pvalues, weights, alpha, pi0_mode, prior, inconclusive_cutoff))
