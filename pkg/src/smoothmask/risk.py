"""Identification disclosure risk of a released masked dataset.

An intruder holding the true values of the "available" columns for every
individual matches each of their records against the release. Per-record
matching probabilities combine, via Bayes' rule with a uniform prior:
a distance-based probability on the available columns, a Monte Carlo
integral over the unobserved true values for the sought columns, and a
cross-record term fixed at its upper bound of 1. The dataset-level risk is
the expected percentage of correct matches under argmax matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SpatialDataset
from .masking import MaskedDataset

_TIE_RTOL = 1e-9

UPPER_BOUND_NOTE = (
    "cross-record component fixed at 1; reported probabilities and the "
    "correct-match rate are conservative upper bounds"
)


@dataclass(frozen=True)
class IntruderScenario:
    """What the intruder knows (ap_columns) and seeks (u_columns).

    Column names refer to the released regressor names plus "y" for the
    outcome; together the two groups must cover all released columns.
    Distances are measured on columns standardized by the released data's
    standard deviations unless ``standardize`` is off.
    """

    ap_columns: tuple[str, ...]
    u_columns: tuple[str, ...] = ()
    mc_draws: int = 100
    seed: int = 0
    standardize: bool = True
    target_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ap_columns", tuple(self.ap_columns))
        object.__setattr__(self, "u_columns", tuple(self.u_columns))
        if set(self.ap_columns) & set(self.u_columns):
            raise ValueError("available and sought columns must be disjoint")
        if not self.ap_columns:
            raise ValueError("the intruder must know at least one column")
        if self.mc_draws < 1:
            raise ValueError("mc_draws must be >= 1")
        if self.target_ids is not None:
            object.__setattr__(self, "target_ids", tuple(self.target_ids))


@dataclass(frozen=True)
class TargetMatch:
    """Matching outcome for one intruder record."""

    target_id: str
    probabilities: np.ndarray    # over released records, sums to 1
    m: int                       # size of the argmax set (ties within 1e-9 relative)
    correct_in_argmax: bool
    prob_correct: float


@dataclass(frozen=True)
class RiskReport:
    targets: tuple[TargetMatch, ...]
    expected_correct_rate: float
    note: str = UPPER_BOUND_NOTE


def _as_dataset(masked) -> SpatialDataset:
    return masked.data if isinstance(masked, MaskedDataset) else masked


def _column_block(ds: SpatialDataset, names: tuple[str, ...]) -> np.ndarray:
    if not names:
        return np.empty((ds.n_records, 0))
    return np.column_stack([ds.column(name) for name in names])


def _validate_columns(ds: SpatialDataset, scenario: IntruderScenario) -> None:
    released = set(ds.x_names) | {"y"}
    declared = set(scenario.ap_columns) | set(scenario.u_columns)
    if declared != released:
        raise ValueError(
            f"scenario columns {sorted(declared)} must cover exactly the released "
            f"columns {sorted(released)}"
        )


def ap_components(masked_ap: np.ndarray, t_ap: np.ndarray) -> tuple[np.ndarray, bool]:
    """Distance-based probability of each released record's available columns.

    Returns (components, degenerate). Component j is 1 - d_j / max_k d_k with
    Euclidean d; when every distance is zero the components are all ones and
    the degenerate flag is set (the caller treats the factor as uniform).
    """
    diff = masked_ap - t_ap[None, :]
    d = np.sqrt((diff ** 2).sum(axis=1))
    dmax = d.max()
    if dmax == 0.0:
        return np.ones(len(d)), True
    return 1.0 - d / dmax, False


def u_components(masked_u: np.ndarray, preds: np.ndarray, resid_sd: np.ndarray,
                 mc_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo integral of the sought-column match probability per record.

    For record j the unobserved true values are drawn around the regression
    prediction at its released available columns; each draw is scored by
    1 - ||masked_u_j - draw|| / max_k ||masked_u_k - draw||, and draws are
    averaged. Zero residual variance collapses to a point mass at the
    prediction.
    """
    n, u_dim = masked_u.shape
    if u_dim == 0:
        return np.ones(n)
    if np.all(resid_sd == 0.0):
        mc_draws = 1  # all draws identical
    draws = preds[:, None, :] + rng.standard_normal((n, mc_draws, u_dim)) * resid_sd
    if u_dim == 1:
        z = draws[:, :, 0]
        lo, hi = masked_u[:, 0].min(), masked_u[:, 0].max()
        # farthest released value from any point is one of the two extremes
        dmax = np.maximum(np.abs(z - lo), np.abs(z - hi))
        num = np.abs(z - masked_u[:, 0][:, None])
    else:
        num = np.sqrt(((draws - masked_u[:, None, :]) ** 2).sum(axis=2))
        dmax = np.empty((n, mc_draws))
        for j in range(n):
            diff = draws[j][:, None, :] - masked_u[None, :, :]
            dmax[j] = np.sqrt((diff ** 2).sum(axis=2)).max(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(dmax > 0.0, num / np.where(dmax > 0.0, dmax, 1.0), 0.0)
    return np.clip(1.0 - ratio, 0.0, 1.0).mean(axis=1)


def _regression(masked_ap: np.ndarray, truth_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """OLS of the true sought columns on the released available columns.

    Returns (predictions at every released record, residual sd per column).
    lstsq tolerates collinear available columns (minimum-norm solution).
    """
    A = np.hstack([np.ones((masked_ap.shape[0], 1)), masked_ap])
    coef, *_ = np.linalg.lstsq(A, truth_u, rcond=None)
    preds = A @ coef
    resid = truth_u - preds
    dof = max(A.shape[0] - A.shape[1], 1)
    var = (resid ** 2).sum(axis=0) / dof
    scale = 1.0 + (truth_u ** 2).mean(axis=0)
    var = np.where(var < 1e-12 * scale, 0.0, var)
    return preds, np.sqrt(var)


@dataclass(frozen=True)
class _Context:
    ds: SpatialDataset
    truth_rows: np.ndarray       # truth values aligned to released record order
    masked_ap: np.ndarray
    u_comp: np.ndarray           # shared across targets: depends only on record j
    target_indices: tuple[int, ...]


def _build_context(masked, truth: SpatialDataset, scenario: IntruderScenario) -> _Context:
    ds = _as_dataset(masked)
    _validate_columns(ds, scenario)
    truth_pos = {rid: i for i, rid in enumerate(truth.ids)}
    missing = [rid for rid in ds.ids if rid not in truth_pos]
    if missing:
        raise ValueError(f"truth dataset lacks released record ids, e.g. {missing[:3]}")
    order = [truth_pos[rid] for rid in ds.ids]

    masked_ap = _column_block(ds, scenario.ap_columns)
    masked_u = _column_block(ds, scenario.u_columns)
    truth_ap = _column_block(truth, scenario.ap_columns)[order]
    truth_u = _column_block(truth, scenario.u_columns)[order]

    if scenario.standardize:
        def sds(block: np.ndarray) -> np.ndarray:
            s = block.std(axis=0)
            return np.where(s > 0.0, s, 1.0)

        ap_sd = sds(masked_ap)
        masked_ap = masked_ap / ap_sd
        truth_ap = truth_ap / ap_sd
        if masked_u.shape[1]:
            u_sd = sds(masked_u)
            masked_u = masked_u / u_sd
            truth_u = truth_u / u_sd

    if scenario.u_columns:
        preds, resid_sd = _regression(masked_ap, truth_u)
        rng = np.random.default_rng([scenario.seed])
        u_comp = u_components(masked_u, preds, resid_sd, scenario.mc_draws, rng)
    else:
        u_comp = np.ones(ds.n_records)

    if scenario.target_ids is None:
        target_indices = tuple(range(ds.n_records))
    else:
        pos = {rid: i for i, rid in enumerate(ds.ids)}
        unknown = [t for t in scenario.target_ids if t not in pos]
        if unknown:
            raise ValueError(f"target ids not present in the released data: {unknown[:3]}")
        target_indices = tuple(pos[t] for t in scenario.target_ids)
    return _Context(ds=ds, truth_rows=truth_ap, masked_ap=masked_ap,
                    u_comp=u_comp, target_indices=target_indices)


def _target_probabilities(ctx: _Context, target_index: int) -> np.ndarray:
    n = ctx.ds.n_records
    ap, _degenerate = ap_components(ctx.masked_ap, ctx.truth_rows[target_index])
    # uniform prior 1/N and cross-record component 1 (upper bound)
    prod = ap * ctx.u_comp / n
    total = prod.sum()
    if total == 0.0:
        return np.full(n, 1.0 / n)
    return prod / total


def match_probabilities(masked, truth: SpatialDataset, target_id: str,
                        scenario: IntruderScenario) -> np.ndarray:
    """Posterior matching probabilities of one intruder record over all released records."""
    ctx = _build_context(masked, truth, scenario)
    ds = _as_dataset(masked)
    if target_id not in ds.ids:
        raise ValueError(f"target id {target_id!r} is not a released record")
    return _target_probabilities(ctx, ds.ids.index(target_id))


def risk_report(masked, truth: SpatialDataset, scenario: IntruderScenario) -> RiskReport:
    """Match every intruder record and summarize the expected correct-match rate.

    A record is matched to the argmax probability set (ties within 1e-9
    relative); a tie of size m containing the correct record contributes 1/m.
    """
    ctx = _build_context(masked, truth, scenario)
    targets = []
    total = 0.0
    for tidx in ctx.target_indices:
        p = _target_probabilities(ctx, tidx)
        pmax = p.max()
        sel = p >= pmax * (1.0 - _TIE_RTOL)
        m = int(sel.sum())
        correct = bool(sel[tidx])
        if correct:
            total += 1.0 / m
        p_read = p.copy()
        p_read.setflags(write=False)
        targets.append(TargetMatch(
            target_id=ctx.ds.ids[tidx],
            probabilities=p_read,
            m=m,
            correct_in_argmax=correct,
            prob_correct=float(p[tidx]),
        ))
    rate = total / len(ctx.target_indices)
    return RiskReport(targets=tuple(targets), expected_correct_rate=rate)


def expected_correct_rate(masked, truth: SpatialDataset,
                          scenario: IntruderScenario) -> float:
    """Dataset-level identification disclosure risk in [0, 1]."""
    return risk_report(masked, truth, scenario).expected_correct_rate
