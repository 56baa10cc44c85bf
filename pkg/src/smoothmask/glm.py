"""Exponential-family GLM fitting by iteratively reweighted least squares.

Supports the three families used in the masking analyses (Poisson/log,
binomial/logit, gaussian/identity), quasi-likelihood estimation for the
non-integer outcomes produced by masking, naive Wald inference, the
population-level odds ratio with delta-method standard errors, and
nonparametric bootstrap confidence intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit
from scipy.stats import norm

FAMILIES = ("poisson-log", "binomial-logit", "gaussian-identity")

_MAX_ITER = 100
_DEVIANCE_RTOL = 1e-10
_SCORE_TOL = 1e-6
_MAX_HALVINGS = 20


@dataclass(frozen=True)
class ModelSpec:
    """Family, regressor names (design order) and intercept flag."""

    family: str
    regressors: tuple[str, ...] = ()
    intercept: bool = True

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        object.__setattr__(self, "regressors", tuple(self.regressors))

    @property
    def coef_names(self) -> tuple[str, ...]:
        return (("intercept",) if self.intercept else ()) + self.regressors


@dataclass(frozen=True)
class FitResult:
    """Maximum (quasi-)likelihood estimates with naive covariance.

    ``cov`` is the inverse observed information at the optimum, which for
    these canonical links equals the inverse expected information; it ignores
    any correlation induced by masking, hence "naive".
    """

    model: ModelSpec
    beta: np.ndarray
    cov: np.ndarray
    information: np.ndarray
    deviance: float
    iterations: int
    converged: bool
    n_obs: int
    max_abs_score: float

    @property
    def coef_names(self) -> tuple[str, ...]:
        return self.model.coef_names

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def predict_linear(self, x: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
        eta = design_matrix(self.model, x) @ self.beta
        return eta if offset is None else eta + offset


def design_matrix(model: ModelSpec, x: np.ndarray | None, n_rows: int | None = None) -> np.ndarray:
    if x is None:
        x = np.empty((n_rows or 0, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != len(model.regressors):
        raise ValueError(
            f"got {x.shape[1]} regressor columns for {len(model.regressors)} named regressors"
        )
    if model.intercept:
        return np.hstack([np.ones((x.shape[0], 1)), x])
    if x.shape[1] == 0:
        raise ValueError("model has neither intercept nor regressors")
    return x


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    r, piv = scipy.linalg.qr(X, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        raise ValueError(f"design matrix is identically zero; columns: {list(names)}")
    tol = diag[0] * max(X.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < X.shape[1]:
        bad = [names[j] for j in piv[rank:]]
        raise ValueError(f"design matrix is rank deficient; collinear column(s): {bad}")


def _poisson_mu(eta: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(eta, -500.0, 500.0))


def _deviance(family: str, y: np.ndarray, mu: np.ndarray, trials: np.ndarray | None) -> float:
    if family == "poisson-log":
        term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        return float(2.0 * np.sum(term - (y - mu)))
    if family == "binomial-logit":
        n = trials
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(y > 0, y * np.log(y / mu), 0.0)
            t2 = np.where(n - y > 0, (n - y) * np.log((n - y) / (n - mu)), 0.0)
        return float(2.0 * np.sum(t1 + t2))
    return float(np.sum((y - mu) ** 2))


def _wls(X: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
    return beta


def fit(model: ModelSpec, x: np.ndarray | None, y: np.ndarray, *,
        trials: np.ndarray | None = None,
        offset: np.ndarray | None = None) -> FitResult:
    """Fit the GLM by IRLS with step-halving.

    Non-integer outcomes are accepted for the count families (quasi-likelihood:
    the estimating equations are unchanged). Convergence requires the relative
    deviance change to fall below 1e-10 and the score to vanish (max component
    <= 1e-6) within 100 iterations; otherwise the result is flagged.
    """
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    X = design_matrix(model, x, n_rows=N)
    if X.shape[0] != N:
        raise ValueError("regressor rows do not match outcome length")
    if offset is None:
        offset = np.zeros(N)
    else:
        offset = np.asarray(offset, dtype=float).ravel()
        if not np.isfinite(offset).all():
            raise ValueError("offset must be finite")
    family = model.family
    if family == "poisson-log":
        if (y < 0).any():
            raise ValueError("poisson outcomes must be nonnegative")
    elif family == "binomial-logit":
        if trials is None:
            raise ValueError("binomial-logit requires per-row trial counts")
        trials = np.asarray(trials, dtype=float).ravel()
        if (trials <= 0).any():
            raise ValueError("trial counts must be positive")
        if ((y < 0) | (y > trials)).any():
            raise ValueError("binomial outcomes must satisfy 0 <= y <= trials")
    _check_rank(X, model.coef_names)

    # family-specific initialization (robust standard starts)
    if family == "poisson-log":
        beta, *_ = np.linalg.lstsq(X, np.log(y + 0.5) - offset, rcond=None)
    elif family == "binomial-logit":
        frac = (y + 0.5) / (trials + 1.0)
        beta, *_ = np.linalg.lstsq(X, np.log(frac / (1.0 - frac)) - offset, rcond=None)
    else:
        beta, *_ = np.linalg.lstsq(X, y - offset, rcond=None)

    def state(beta_vec):
        eta = X @ beta_vec + offset
        if family == "poisson-log":
            mu = _poisson_mu(eta)
            w = np.maximum(mu, 1e-290)
            z = eta - offset + (y - mu) / w
            score = X.T @ (y - mu)
        elif family == "binomial-logit":
            p = np.clip(expit(eta), 1e-12, 1.0 - 1e-12)
            mu = trials * p
            w = trials * p * (1.0 - p)
            z = eta - offset + (y - mu) / w
            score = X.T @ (y - mu)
        else:
            mu = eta
            w = np.ones(N)
            z = y - offset
            score = X.T @ (y - mu)
        return mu, w, z, score

    mu, w, z, score = state(beta)
    dev = _deviance(family, y, mu, trials)
    converged = False
    it = 0
    for it in range(1, _MAX_ITER + 1):
        beta_new = _wls(X, z, w)
        mu_new, w_new, z_new, score_new = state(beta_new)
        dev_new = _deviance(family, y, mu_new, trials)
        halvings = 0
        while (not math.isfinite(dev_new) or dev_new > dev * (1.0 + 1e-12) + 1e-12) \
                and halvings < _MAX_HALVINGS:
            beta_new = 0.5 * (beta_new + beta)
            mu_new, w_new, z_new, score_new = state(beta_new)
            dev_new = _deviance(family, y, mu_new, trials)
            halvings += 1
        # the 0.1 guard keeps the criterion meaningful when deviance ~ 0
        # (near-perfect fits), where its floating-point noise would otherwise
        # dominate the relative change forever
        rel = abs(dev - dev_new) / (abs(dev_new) + 0.1)
        beta, mu, w, z, score, dev = beta_new, mu_new, w_new, z_new, score_new, dev_new
        if rel <= _DEVIANCE_RTOL and np.max(np.abs(score)) <= _SCORE_TOL:
            converged = True
            break

    info = (X * w[:, None]).T @ X
    if family == "gaussian-identity":
        dof = max(N - X.shape[1], 1)
        sigma2 = dev / dof
        xtx_inv = np.linalg.inv(X.T @ X)
        cov = sigma2 * xtx_inv
        info = (X.T @ X) / sigma2 if sigma2 > 0 else np.inf * (X.T @ X)
    else:
        cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    return FitResult(
        model=model,
        beta=beta,
        cov=cov,
        information=info,
        deviance=dev,
        iterations=it,
        converged=converged,
        n_obs=N,
        max_abs_score=float(np.max(np.abs(score))),
    )


def naive_ci(result: FitResult, level: float = 0.95) -> np.ndarray:
    """Per-coefficient Wald intervals beta_k +/- z * se_k; (q, 2) array."""
    if not result.converged:
        raise ValueError("confidence intervals require a converged fit")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    z = norm.ppf(0.5 * (1.0 + level))
    se = result.se
    return np.column_stack([result.beta - z * se, result.beta + z * se])


@dataclass(frozen=True)
class OddsRatioResult:
    """Population-level odds ratio with delta-method uncertainty on the log scale."""

    or_value: float
    log_or: float
    log_or_se_naive: float
    ci: tuple[float, float]
    level: float
    p_exposed: float
    p_unexposed: float


def population_odds_ratio(result: FitResult, x: np.ndarray, trials: np.ndarray,
                          group: str, level: float = 0.95) -> OddsRatioResult:
    """Odds ratio from size-weighted average predicted probabilities.

    The designated group regressor (a fraction in [0, 1]) is forced to 1 and
    to 0 with all other regressors untouched; predictions are averaged with
    the trial counts as weights. Invariant to centering/scaling of the other
    regressors because it is a function of predicted values only.
    """
    if result.model.family != "binomial-logit":
        raise ValueError("population odds ratio is defined for binomial-logit fits")
    if group not in result.model.regressors:
        raise ValueError(f"group column {group!r} is not a model regressor")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    j = result.model.regressors.index(group)
    if ((x[:, j] < -1e-9) | (x[:, j] > 1.0 + 1e-9)).any():
        raise ValueError("group regressor must be a fraction in [0, 1]")
    trials = np.asarray(trials, dtype=float).ravel()
    wsum = trials.sum()

    def summary(value: float):
        xv = x.copy()
        xv[:, j] = value
        Xd = design_matrix(result.model, xv)
        p = expit(Xd @ result.beta)
        P = float((trials * p).sum() / wsum)
        grad = (trials * p * (1.0 - p)) @ Xd / wsum
        return P, grad

    p_b, grad_b = summary(1.0)
    p_w, grad_w = summary(0.0)
    for name, val in (("exposed", p_b), ("unexposed", p_w)):
        if val <= 0.0 or val >= 1.0:
            raise ValueError(f"{name} summary probability is {val}; odds ratio undefined")
    log_or = (math.log(p_b) - math.log1p(-p_b)) - (math.log(p_w) - math.log1p(-p_w))
    grad = grad_b / (p_b * (1.0 - p_b)) - grad_w / (p_w * (1.0 - p_w))
    se = float(math.sqrt(grad @ result.cov @ grad))
    z = norm.ppf(0.5 * (1.0 + level))
    return OddsRatioResult(
        or_value=math.exp(log_or),
        log_or=log_or,
        log_or_se_naive=se,
        ci=(math.exp(log_or - z * se), math.exp(log_or + z * se)),
        level=level,
        p_exposed=p_b,
        p_unexposed=p_w,
    )


def log_or_gradient(result: FitResult, x: np.ndarray, trials: np.ndarray,
                    group: str) -> np.ndarray:
    """Analytic gradient of the population log odds ratio w.r.t. the coefficients."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    j = result.model.regressors.index(group)
    trials = np.asarray(trials, dtype=float).ravel()
    wsum = trials.sum()
    grads = []
    for value in (1.0, 0.0):
        xv = x.copy()
        xv[:, j] = value
        Xd = design_matrix(result.model, xv)
        p = expit(Xd @ result.beta)
        P = float((trials * p).sum() / wsum)
        dP = (trials * p * (1.0 - p)) @ Xd / wsum
        grads.append(dP / (P * (1.0 - P)))
    return grads[0] - grads[1]


def _log_or_at(model: ModelSpec, beta: np.ndarray, x: np.ndarray, trials: np.ndarray,
               group: str) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    j = model.regressors.index(group)
    trials = np.asarray(trials, dtype=float).ravel()
    wsum = trials.sum()
    ps = []
    for value in (1.0, 0.0):
        xv = x.copy()
        xv[:, j] = value
        p = expit(design_matrix(model, xv) @ beta)
        ps.append(float((trials * p).sum() / wsum))
    return (math.log(ps[0]) - math.log1p(-ps[0])) - (math.log(ps[1]) - math.log1p(-ps[1]))


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    lower: float
    upper: float
    n_failed: int
    n_replicates: int


def bootstrap_ci(model: ModelSpec, x: np.ndarray, y: np.ndarray, *,
                 statistic, b: int, seed: int, level: float = 0.95,
                 trials: np.ndarray | None = None,
                 offset: np.ndarray | None = None,
                 locs: np.ndarray | None = None,
                 remask: tuple | None = None,
                 group: str | None = None) -> BootstrapResult:
    """Nonparametric bootstrap over rows, resampled with replacement.

    ``statistic`` is a coefficient index into the design (intercept first) or
    the string "log_or" (requires binomial trials and ``group``). The default
    resamples the given (typically masked) rows directly; passing
    ``remask=(kernel, lam)`` together with ``locs`` instead resamples the
    original rows and rebuilds the masking operator on each resample before
    fitting. Replicate draws are seeded by (seed, replicate index), so results
    do not depend on execution order.
    """
    if b < 2:
        raise ValueError("bootstrap needs at least 2 replicates")
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N = y.size
    if remask is not None:
        if locs is None:
            raise ValueError("remasking strategy requires the record locations")
        from .masking import build_operator  # local import avoids a cycle
        kernel, lam = remask
        locs = np.asarray(locs, dtype=float)
    values = []
    failed = 0
    for i in range(b):
        rng = np.random.default_rng([seed, i])
        idx = rng.integers(0, N, size=N)
        xi, yi = x[idx], y[idx]
        ti = None if trials is None else np.asarray(trials, dtype=float).ravel()[idx]
        oi = None if offset is None else np.asarray(offset, dtype=float).ravel()[idx]
        if remask is not None:
            op = build_operator(locs[idx], kernel, lam)
            xi, yi = op.a @ xi, op.a @ yi
        try:
            fr = fit(model, xi, yi, trials=ti, offset=oi)
        except (ValueError, np.linalg.LinAlgError):
            failed += 1
            continue
        if not fr.converged:
            failed += 1
            continue
        if statistic == "log_or":
            if group is None or ti is None:
                raise ValueError("log_or statistic requires binomial trials and a group column")
            try:
                values.append(_log_or_at(model, fr.beta, xi, ti, group))
            except ValueError:
                failed += 1
        else:
            values.append(float(fr.beta[int(statistic)]))
    if failed > 0.1 * b:
        raise RuntimeError(f"{failed} of {b} bootstrap refits failed to converge")
    arr = np.asarray(values)
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.percentile(arr, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return BootstrapResult(
        se=float(arr.std(ddof=1)),
        lower=float(lo),
        upper=float(hi),
        n_failed=failed,
        n_replicates=b,
    )
