"""Closed-form first-order bias of masked-data GLM coefficients at zero smoothing.

The derivative of the estimand with respect to the smoothness parameter at
zero is assembled from the derivative of the normalized weight matrix and the
link function. For the built-in exponential-decay weight families that
derivative vanishes identically, so the approximation reports zero there even
though masked-data estimates are generally biased at positive smoothness; the
report carries this caveat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dataset import SpatialDataset, coords_array
from .glm import FAMILIES
from .kernels import ExponentialDecayKernel, KernelFamily
from .masking import build_operator

CAVEAT = (
    "first-order approximation at zero smoothing only: for the built-in "
    "exponential-decay weight families the normalized-weight derivative is "
    "identically zero, so the reported value is zero even though estimates "
    "from data masked at positive smoothness are generally biased; the "
    "approximation captures the instant rate of change, not the total bias"
)


def _link_functions(family: str):
    if family == "poisson-log":
        return np.exp, np.exp
    if family == "binomial-logit":
        return expit, lambda eta: expit(eta) * (1.0 - expit(eta))
    if family == "gaussian-identity":
        return (lambda eta: eta), (lambda eta: np.ones_like(eta))
    raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")


def _location_scale_sq(locs: np.ndarray) -> float:
    span = locs.max(axis=0) - locs.min(axis=0)
    scale = float(span[0] ** 2 + span[1] ** 2)
    return scale if scale > 0 else 1.0


def r0_matrix(kernel: KernelFamily, locs, h_step: float | None = None) -> np.ndarray:
    """Derivative of the normalized weight matrix at zero smoothness.

    Exponential-decay families take the analytic shortcut (exact zero matrix);
    any other family is differenced forward from zero. Rows of the operator
    sum to one at every smoothness, so the derivative's rows sum to zero; the
    finite difference is re-centered to enforce that.
    """
    locs = coords_array(locs)
    n = len(locs)
    if isinstance(kernel, ExponentialDecayKernel) or n == 1:
        return np.zeros((n, n))
    if h_step is None:
        h_step = 1e-6 * _location_scale_sq(locs)
    if not (h_step > 0 and math.isfinite(h_step)):
        raise ValueError("h_step must be positive and finite")
    a0 = build_operator(locs, kernel, 0.0).a
    ah = build_operator(locs, kernel, h_step).a
    r = (ah - a0) / h_step
    return r - r.mean(axis=1, keepdims=True)


@dataclass(frozen=True)
class BiasReport:
    """Instant bias of the coefficients when moving away from zero masking."""

    beta_prime0: np.ndarray
    s1bar: np.ndarray
    s2bar: np.ndarray
    r0_max_abs: float
    family: str
    caveat: str = CAVEAT

    def approx(self, lam: float, higher_order: Sequence[np.ndarray] | None = None) -> np.ndarray:
        """Coefficient bias approximation beta(lam) - beta.

        ``higher_order`` optionally supplies externally computed derivatives
        (second and up) to extend the expansion; the remainder is not bounded
        here, see the caveat.
        """
        out = self.beta_prime0 * lam
        if higher_order:
            for k, deriv in enumerate(higher_order, start=2):
                out = out + np.asarray(deriv, dtype=float) * lam ** k / math.factorial(k)
        return out


def first_order_bias(data: SpatialDataset, beta, kernel: KernelFamily, family: str,
                     *, intercept: bool = True, h_step: float | None = None) -> BiasReport:
    """Derivative of the masked-data estimand at zero smoothness.

    ``beta`` is the coefficient vector of the unmasked model (intercept first
    when present); the output is conditional on it. Available-data sums stand
    in for the integrals over the location process.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    X = np.hstack([np.ones((data.n_records, 1)), data.x]) if intercept else np.asarray(data.x)
    if X.shape[1] != beta.size:
        raise ValueError(f"beta has {beta.size} entries for a {X.shape[1]}-column design")
    h, h_prime = _link_functions(family)
    eta = X @ beta
    heta = h(eta)
    hpe = h_prime(eta)
    r0 = r0_matrix(kernel, data.locs, h_step)
    # centered integrand: rows of r0 sum to zero, so subtracting the target's
    # own value leaves the sum unchanged while cancelling exactly when the
    # exposure (or the link curvature) is constant
    c = (heta[None, :] - heta[:, None]) - hpe[:, None] * (eta[None, :] - eta[:, None])
    w = (c * r0).sum(axis=1)
    s1 = X.T @ w
    s2 = -(X * hpe[:, None]).T @ X
    s2 = 0.5 * (s2 + s2.T)
    if not s1.any():
        beta_prime = np.zeros_like(s1)
    else:
        try:
            beta_prime = -np.linalg.solve(s2, s1)
        except np.linalg.LinAlgError as err:
            raise ValueError("expected-score curvature matrix is singular") from err
    return BiasReport(
        beta_prime0=beta_prime,
        s1bar=s1,
        s2bar=s2,
        r0_max_abs=float(np.abs(r0).max()),
        family=family,
    )


def function_bias(beta_prime0, grad_f, lam: float) -> float:
    """First-order bias of a scalar function of the coefficients: grad . beta'(0) * lam."""
    beta_prime0 = np.asarray(beta_prime0, dtype=float).ravel()
    grad_f = np.asarray(grad_f, dtype=float).ravel()
    if beta_prime0.shape != grad_f.shape:
        raise ValueError("gradient length must match the coefficient derivative")
    return float(grad_f @ beta_prime0 * lam)
