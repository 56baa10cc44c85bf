"""Replicated masking study: exposure fields, outcome simulation, and the
risk-utility summaries per kernel family and smoothness value."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .dataset import GridSpec, Location, SpatialDataset
from .kernels import (
    BlockRegion,
    KernelFamily,
    PointSource,
    _direction_cosines,
    _radius_sq,
    _unblocked_mask,
    kernel_from_json,
    kernel_to_json,
)
from .masking import build_operator
from .glm import ModelSpec, fit
from .risk import IntruderScenario, expected_correct_rate

UNMASKED = "unmasked"
AGGREGATED = "aggregated"


# ---------------------------------------------------------------------------
# Exposure fields

@dataclass(frozen=True)
class RadialExposure:
    """Exposure decaying symmetrically with squared distance from a point source."""

    source: PointSource = PointSource()
    amplitude: float = 7.0
    scale: float = 2.5

    def values(self, locs: np.ndarray) -> np.ndarray:
        return self.amplitude * np.exp(-_radius_sq(locs, self.source) / self.scale)


@dataclass(frozen=True)
class DirectionalExposure:
    """Exposure from a point source skewed toward the source's direction."""

    source: PointSource = PointSource()
    amplitude: float = 7.0
    radial_scale: float = 6.0
    direction_scale: float = 3.0

    def values(self, locs: np.ndarray) -> np.ndarray:
        r = _radius_sq(locs, self.source)
        c = _direction_cosines(locs, self.source)
        return self.amplitude * np.exp(-r / self.radial_scale - c / self.direction_scale)


@dataclass(frozen=True)
class BlockedExposure:
    """Radial exposure zeroed outside the unblocked area (e.g. behind a mountain)."""

    region: BlockRegion = BlockRegion()
    amplitude: float = 7.0
    scale: float = 2.5

    def values(self, locs: np.ndarray) -> np.ndarray:
        base = self.amplitude * np.exp(-_radius_sq(locs, self.region.source) / self.scale)
        return base * _unblocked_mask(locs, self.region)


ExposureField = RadialExposure | DirectionalExposure | BlockedExposure


def exposure(field_def: ExposureField, s: Location) -> float:
    """Exposure value at a single location."""
    return float(field_def.values(np.array([[s.s1, s.s2]]))[0])


def field_to_json(field_def: ExposureField) -> dict:
    if isinstance(field_def, RadialExposure):
        return {"type": "radial", "source": _src_json(field_def.source),
                "amplitude": field_def.amplitude, "scale": field_def.scale}
    if isinstance(field_def, DirectionalExposure):
        return {"type": "directional", "source": _src_json(field_def.source),
                "amplitude": field_def.amplitude,
                "radial_scale": field_def.radial_scale,
                "direction_scale": field_def.direction_scale}
    if isinstance(field_def, BlockedExposure):
        return {"type": "blocked", "amplitude": field_def.amplitude, "scale": field_def.scale,
                "region": {"threshold_x": field_def.region.threshold_x,
                           "threshold_cos": field_def.region.threshold_cos,
                           "source": _src_json(field_def.region.source)}}
    raise ValueError(f"field {type(field_def).__name__} has no JSON form")


def _src_json(src: PointSource) -> dict:
    return {"loc": [src.loc.s1, src.loc.s2], "direction": list(src.direction)}


def _src_from_json(obj: dict | None) -> PointSource:
    if obj is None:
        return PointSource()
    loc = obj.get("loc", [0.0, 0.0])
    direction = obj.get("direction", [1.0, 0.0])
    return PointSource(loc=Location(float(loc[0]), float(loc[1])),
                       direction=(float(direction[0]), float(direction[1])))


def field_from_json(obj: dict) -> ExposureField:
    kind = obj.get("type")
    if kind == "radial":
        return RadialExposure(source=_src_from_json(obj.get("source")),
                              amplitude=float(obj.get("amplitude", 7.0)),
                              scale=float(obj.get("scale", 2.5)))
    if kind == "directional":
        return DirectionalExposure(source=_src_from_json(obj.get("source")),
                                   amplitude=float(obj.get("amplitude", 7.0)),
                                   radial_scale=float(obj.get("radial_scale", 6.0)),
                                   direction_scale=float(obj.get("direction_scale", 3.0)))
    if kind == "blocked":
        region = obj.get("region") or {}
        return BlockedExposure(
            region=BlockRegion(threshold_x=float(region.get("threshold_x", 0.4)),
                               threshold_cos=float(region.get("threshold_cos", 0.625)),
                               source=_src_from_json(region.get("source"))),
            amplitude=float(obj.get("amplitude", 7.0)),
            scale=float(obj.get("scale", 2.5)))
    raise ValueError(f"unknown exposure field type {kind!r}")


# ---------------------------------------------------------------------------
# Data generation

def sample_locations(n: int, seed, bounds: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)) -> np.ndarray:
    """n i.i.d. uniform locations on the study rectangle; deterministic given seed."""
    if n < 1:
        raise ValueError("need at least one location")
    xmin, xmax, ymin, ymax = bounds
    rng = np.random.default_rng(seed)
    out = np.empty((n, 2))
    out[:, 0] = rng.uniform(xmin, xmax, size=n)
    out[:, 1] = rng.uniform(ymin, ymax, size=n)
    return out


def simulate_outcomes(x: np.ndarray, mu: float, beta: float, seed) -> np.ndarray:
    """Independent Poisson outcomes with mean exp(mu + beta * x_i)."""
    x = np.asarray(x, dtype=float).ravel()
    log_mean = mu + beta * x
    bad = ~(log_mean < 30.0)  # poisson means beyond ~1e13 are a configuration error
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"outcome mean overflows at record {i} (x = {x[i]}, log-mean = {log_mean[i]})"
        )
    rng = np.random.default_rng(seed)
    return rng.poisson(np.exp(log_mean)).astype(float)


def default_lambda_grid() -> tuple[float, ...]:
    """20 smoothness values on [0.01, 1]: a geometric grid with 0.5 inserted."""
    grid = sorted(set(np.geomspace(0.01, 1.0, 19)) | {0.5})
    return tuple(float(v) for v in grid)


# ---------------------------------------------------------------------------
# Study configuration and results

@dataclass(frozen=True)
class SimConfig:
    """Full specification of one replicated masking study."""

    field: ExposureField
    kernels: tuple[tuple[str, KernelFamily], ...]
    mu: float
    beta: float
    n_locations: int = 1000
    replicates: int = 500
    lambdas: tuple[float, ...] = dataclass_field(default_factory=default_lambda_grid)
    bounds: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
    grid_nx: int = 7
    grid_ny: int = 7
    seed: int = 0
    scenario: IntruderScenario | None = None
    ci_level: float = 0.95

    def __post_init__(self) -> None:
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "kernels", tuple((str(k), v) for k, v in self.kernels))
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.n_locations < 1:
            raise ValueError("need at least one location")
        if any(lam <= 0 for lam in self.lambdas):
            raise ValueError("grid smoothness values must be positive; "
                             "the zero baseline is always included")
        if not self.kernels:
            raise ValueError("need at least one kernel to compare")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        names = [k for k, _ in self.kernels]
        if len(set(names)) != len(names):
            raise ValueError("kernel names must be unique")
        if UNMASKED in names or AGGREGATED in names:
            raise ValueError(f"kernel names {UNMASKED!r}/{AGGREGATED!r} are reserved")

    def grid(self) -> GridSpec:
        xmin, xmax, ymin, ymax = self.bounds
        return GridSpec(xmin, xmax, ymin, ymax, self.grid_nx, self.grid_ny)


@dataclass(frozen=True)
class StudyRow:
    """Summaries for one (kernel, lambda) cell or a baseline row."""

    kernel: str
    lam: float | None
    mean_estimate: float
    empirical_sd: float
    mean_naive_se: float
    mean_naive_var: float
    bias: float
    mse: float
    pct_lo: float
    pct_hi: float
    width_ratio: float
    risk: float | None
    n_failed: int
    valid: bool


@dataclass(frozen=True)
class ProfileRow:
    kernel: str
    lam: float
    mse: float
    risk: float | None


@dataclass(frozen=True)
class StudyResult:
    rows: tuple[StudyRow, ...]
    metadata: dict

    def row(self, kernel: str, lam: float | None = None) -> StudyRow:
        for r in self.rows:
            if r.kernel == kernel and (lam is None or r.lam == lam):
                return r
        raise KeyError(f"no study row for kernel={kernel!r}, lam={lam!r}")

    def kernel_rows(self, kernel: str) -> tuple[StudyRow, ...]:
        return tuple(r for r in self.rows if r.kernel == kernel)


STUDY_COLUMNS = ("kernel", "lam", "mean_estimate", "empirical_sd", "mean_naive_se",
                 "mean_naive_var", "bias", "mse", "pct_lo", "pct_hi", "width_ratio",
                 "risk", "n_failed", "valid")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def study_csv_text(result: StudyResult) -> str:
    lines = ["# study " + json.dumps(result.metadata["model"], sort_keys=True)]
    lines.append(",".join(STUDY_COLUMNS))
    for r in result.rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in STUDY_COLUMNS))
    return "\n".join(lines) + "\n"


def write_study_csv(result: StudyResult, path) -> None:
    Path(path).write_text(study_csv_text(result), encoding="utf-8")


def risk_utility_profile(result: StudyResult) -> tuple[ProfileRow, ...]:
    """The (mse, risk) pairs traced by the kernel/lambda grid."""
    return tuple(
        ProfileRow(kernel=r.kernel, lam=r.lam, mse=r.mse, risk=r.risk)
        for r in result.rows
        if r.kernel not in (UNMASKED, AGGREGATED)
    )


def profile_csv_text(rows: Sequence[ProfileRow]) -> str:
    lines = ["kernel,lam,mse,risk"]
    for r in rows:
        lines.append(",".join([r.kernel, _fmt(r.lam), _fmt(r.mse), _fmt(r.risk)]))
    return "\n".join(lines) + "\n"


def write_profile_csv(rows: Sequence[ProfileRow], path) -> None:
    Path(path).write_text(profile_csv_text(rows), encoding="utf-8")


# ---------------------------------------------------------------------------
# The study itself

def _summaries(estimates: list[float], ses: list[float], true_beta: float,
               z: float, alpha: float, n_failed: int, replicates: int):
    est = np.asarray(estimates)
    se = np.asarray(ses)
    if est.size == 0:
        nan = math.nan
        return dict(mean_estimate=nan, empirical_sd=nan, mean_naive_se=nan,
                    mean_naive_var=nan, bias=nan, mse=nan, pct_lo=nan, pct_hi=nan,
                    width_ratio=nan, n_failed=n_failed, valid=False)
    mean_est = float(est.mean())
    emp_sd = float(est.std(ddof=1)) if est.size > 1 else 0.0
    mean_se = float(se.mean())
    mean_var = float((se ** 2).mean())
    bias = mean_est - true_beta
    mse = bias ** 2 + mean_var
    lo, hi = (np.percentile(est, [100 * alpha, 100 * (1 - alpha)])
              if est.size > 1 else (mean_est, mean_est))
    naive_width = 2.0 * z * mean_se
    pct_width = float(hi - lo)
    width_ratio = naive_width / pct_width if pct_width > 0 else math.nan
    return dict(
        mean_estimate=mean_est, empirical_sd=emp_sd, mean_naive_se=mean_se,
        mean_naive_var=mean_var, bias=bias, mse=mse, pct_lo=float(lo), pct_hi=float(hi),
        width_ratio=width_ratio, n_failed=n_failed,
        valid=n_failed <= 0.1 * replicates,
    )


def run_study(cfg: SimConfig) -> StudyResult:
    """Run the full replicated study; a pure function of its configuration.

    Per replicate: simulate outcomes, fit the individual-level model, fit the
    aggregated model, and fit the masked-data model for every kernel/lambda
    cell (operators are fixed by the locations, so they are built once).
    Disclosure risk is evaluated on the first replicate's masked data: the
    regressor masking is deterministic given the locations and dominates the
    intruder's matching, so replicating risk over outcome draws adds cost
    without moving the summaries (recorded in the metadata).
    """
    locs = sample_locations(cfg.n_locations, [cfg.seed, 0], cfg.bounds)
    x = cfg.field.values(locs)
    if not np.isfinite(x).all():
        raise ValueError("exposure field produced non-finite values")
    ids = tuple(f"p{i:06d}" for i in range(cfg.n_locations))
    grid = cfg.grid()
    cell_idx = grid.cell_indices(locs)
    occupied = np.unique(cell_idx)
    counts = np.bincount(cell_idx, minlength=grid.n_cells).astype(float)[occupied]
    x_bar = (np.bincount(cell_idx, weights=x, minlength=grid.n_cells)[occupied]
             / counts)
    log_counts = np.log(counts)

    model = ModelSpec(family="poisson-log", regressors=("x",), intercept=True)
    z = float(norm.ppf(0.5 * (1.0 + cfg.ci_level)))
    alpha = 0.5 * (1.0 - cfg.ci_level)

    cells = [(name, lam) for name, _ in cfg.kernels for lam in sorted(cfg.lambdas)]
    kernel_by_name = dict(cfg.kernels)
    operators = {}
    masked_x = {}
    for name, lam in cells:
        op = build_operator(locs, kernel_by_name[name], lam)
        operators[(name, lam)] = op
        masked_x[(name, lam)] = op.a @ x

    raw_est, raw_se = [], []
    agg_est, agg_se = [], []
    cell_est = {c: [] for c in cells}
    cell_se = {c: [] for c in cells}
    raw_failed = agg_failed = 0
    cell_failed = {c: 0 for c in cells}
    y_first: np.ndarray | None = None

    for r in range(cfg.replicates):
        y = simulate_outcomes(x, cfg.mu, cfg.beta, seed=[cfg.seed, 1, r])
        if r == 0:
            y_first = y
        fr = fit(model, x, y)
        if fr.converged:
            raw_est.append(float(fr.beta[1]))
            raw_se.append(float(fr.se[1]))
        else:
            raw_failed += 1
        y_plus = np.bincount(cell_idx, weights=y, minlength=grid.n_cells)[occupied]
        fa = fit(model, x_bar, y_plus, offset=log_counts)
        if fa.converged:
            agg_est.append(float(fa.beta[1]))
            agg_se.append(float(fa.se[1]))
        else:
            agg_failed += 1
        for c in cells:
            fm = fit(model, masked_x[c], operators[c].a @ y)
            if fm.converged:
                cell_est[c].append(float(fm.beta[1]))
                cell_se[c].append(float(fm.se[1]))
            else:
                cell_failed[c] += 1

    risk_by_cell: dict = {}
    risk_unmasked: float | None = None
    if cfg.scenario is not None:
        truth = SpatialDataset(ids=ids, locs=locs, x=x[:, None], y=y_first, x_names=("x",))
        risk_unmasked = expected_correct_rate(truth, truth, cfg.scenario)

        def _cell_risk(c):
            masked = truth.replace_values(x=masked_x[c][:, None],
                                          y=operators[c].a @ y_first)
            return expected_correct_rate(masked, truth, cfg.scenario)

        workers = _worker_count()
        if workers > 1:
            # cells are independent and each evaluation is deterministic, so
            # any schedule reproduces the sequential result
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                for c, value in zip(cells, pool.map(_cell_risk, cells)):
                    risk_by_cell[c] = value
        else:
            for c in cells:
                risk_by_cell[c] = _cell_risk(c)

    rows = [
        StudyRow(kernel=UNMASKED, lam=0.0, risk=risk_unmasked,
                 **_summaries(raw_est, raw_se, cfg.beta, z, alpha, raw_failed, cfg.replicates)),
        StudyRow(kernel=AGGREGATED, lam=None, risk=None,
                 **_summaries(agg_est, agg_se, cfg.beta, z, alpha, agg_failed, cfg.replicates)),
    ]
    for c in cells:
        name, lam = c
        rows.append(StudyRow(kernel=name, lam=lam, risk=risk_by_cell.get(c),
                             **_summaries(cell_est[c], cell_se[c], cfg.beta, z, alpha,
                                          cell_failed[c], cfg.replicates)))

    metadata = {
        "model": {"true_beta": cfg.beta, "mu": cfg.mu, "ci_level": cfg.ci_level},
        "seed": cfg.seed,
        "n_locations": cfg.n_locations,
        "replicates": cfg.replicates,
        "lambdas": list(sorted(cfg.lambdas)),
        "kernels": {name: kernel_to_json(k) for name, k in cfg.kernels},
        "field": field_to_json(cfg.field),
        "grid": {"nx": cfg.grid_nx, "ny": cfg.grid_ny, "bounds": list(cfg.bounds)},
        "exclusions": {f"{name}:{lam}": cell_failed[(name, lam)] for name, lam in cells}
        | {UNMASKED: raw_failed, AGGREGATED: agg_failed},
        "risk_note": "risk evaluated on the first replicate's masked data",
        "version": _package_version(),
    }
    return StudyResult(rows=tuple(rows), metadata=metadata)


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("smoothmask")
    except Exception:
        return "unknown"


def _worker_count() -> int:
    raw = os.environ.get("SMOOTHMASK_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ValueError(f"SMOOTHMASK_THREADS must be a positive integer, got {raw!r}") from None
    if workers < 1:
        raise ValueError(f"SMOOTHMASK_THREADS must be a positive integer, got {raw!r}")
    return workers


# ---------------------------------------------------------------------------
# Config JSON for the command line

def config_from_json(obj: dict) -> SimConfig:
    kernels = tuple((name, kernel_from_json(kj)) for name, kj in obj["kernels"].items())
    scenario = None
    if obj.get("scenario"):
        sc = obj["scenario"]
        scenario = IntruderScenario(
            ap_columns=tuple(sc["ap_columns"]),
            u_columns=tuple(sc.get("u_columns", ())),
            mc_draws=int(sc.get("mc_draws", 100)),
            seed=int(sc.get("seed", 0)),
            standardize=bool(sc.get("standardize", True)),
        )
    grid = obj.get("grid") or {}
    lambdas = obj.get("lambdas")
    return SimConfig(
        field=field_from_json(obj["field"]),
        kernels=kernels,
        mu=float(obj["mu"]),
        beta=float(obj["beta"]),
        n_locations=int(obj.get("n_locations", 1000)),
        replicates=int(obj.get("replicates", 500)),
        lambdas=tuple(float(v) for v in lambdas) if lambdas else default_lambda_grid(),
        bounds=tuple(float(v) for v in obj.get("bounds", (-1.0, 1.0, -1.0, 1.0))),
        grid_nx=int(grid.get("nx", 7)),
        grid_ny=int(grid.get("ny", 7)),
        seed=int(obj.get("seed", 0)),
        scenario=scenario,
        ci_level=float(obj.get("ci_level", 0.95)),
    )
