"""Weight-function families defining the form of masking, plus their geometric primitives.

Every built-in family evaluates as exp(-d(u, s) / lambda) for a family-specific
nonnegative internal distance d (infinite across a blocked-region boundary), so
they share one exponential-decay base class. The abstract KernelFamily admits
other decay shapes; the masking operator only requires a weight matrix.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .dataset import Location, coords_array


@dataclass(frozen=True)
class PointSource:
    """Emission point with a unit direction for directional weights/exposures."""

    loc: Location = Location(0.0, 0.0)
    direction: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self) -> None:
        d1, d2 = float(self.direction[0]), float(self.direction[1])
        norm = math.hypot(d1, d2)
        if not (math.isfinite(norm) and norm > 0):
            raise ValueError("direction must be a nonzero finite vector")
        object.__setattr__(self, "direction", (d1 / norm, d2 / norm))


@dataclass(frozen=True)
class BlockRegion:
    """Unblocked-area predicate: s_x <= threshold_x or cos(angle from +x axis) <= threshold_cos."""

    threshold_x: float = 0.4
    threshold_cos: float = 0.625
    source: PointSource = PointSource()


def radial_distance(s: Location, source: PointSource) -> float:
    """Euclidean distance from s to the point source."""
    return math.hypot(s.s1 - source.loc.s1, s.s2 - source.loc.s2)


def direction_cosine(s: Location, source: PointSource) -> float:
    """Cosine of the angle between (s - source) and the source direction.

    Defined as 1 at the singular point s == source so weights stay total.
    """
    v1, v2 = s.s1 - source.loc.s1, s.s2 - source.loc.s2
    norm = math.hypot(v1, v2)
    if norm == 0.0:
        return 1.0
    return (v1 * source.direction[0] + v2 * source.direction[1]) / norm


def unblocked_indicator(s: Location, region: BlockRegion) -> int:
    """1 iff s lies in the unblocked area.

    The angular condition always measures from the positive first axis at the
    source, independent of the source's own direction vector.
    """
    if s.s1 <= region.threshold_x:
        return 1
    axis = PointSource(loc=region.source.loc, direction=(1.0, 0.0))
    return 1 if direction_cosine(s, axis) <= region.threshold_cos else 0


def _radius_sq(locs: np.ndarray, source: PointSource) -> np.ndarray:
    d = locs - source.loc.as_array()
    return d[:, 0] ** 2 + d[:, 1] ** 2


def _direction_cosines(locs: np.ndarray, source: PointSource) -> np.ndarray:
    v = locs - source.loc.as_array()
    norm = np.hypot(v[:, 0], v[:, 1])
    out = np.ones(len(locs))
    nz = norm > 0
    out[nz] = (v[nz, 0] * source.direction[0] + v[nz, 1] * source.direction[1]) / norm[nz]
    return out


def _unblocked_mask(locs: np.ndarray, region: BlockRegion) -> np.ndarray:
    axis = PointSource(loc=region.source.loc, direction=(1.0, 0.0))
    return (locs[:, 0] <= region.threshold_x) | (
        _direction_cosines(locs, axis) <= region.threshold_cos
    )


class KernelFamily(ABC):
    """A masking weight family W_lambda(u, s)."""

    @abstractmethod
    def weight_matrix(self, locs: np.ndarray, lam: float) -> np.ndarray:
        """(n, n) matrix of W_lambda(locs[i], locs[j]); lam = 0 means the limit weights."""

    def pair_weight(self, u: Location, s: Location, lam: float) -> float:
        locs = np.array([u.as_array(), s.as_array()])
        return float(self.weight_matrix(locs, lam)[0, 1])


class ExponentialDecayKernel(KernelFamily):
    """Families of the form exp(-d(u, s) / lambda); d may be +inf (hard block)."""

    @abstractmethod
    def distance_matrix(self, locs: np.ndarray) -> np.ndarray:
        """Pairwise internal distances; exact zeros on the diagonal, exactly symmetric."""

    @abstractmethod
    def pair_distance(self, u: Location, s: Location) -> float:
        ...

    def weight_matrix(self, locs: np.ndarray, lam: float) -> np.ndarray:
        _check_lambda(lam)
        d = self.distance_matrix(coords_array(locs))
        if lam == 0.0:
            # limit of exp(-d/lam): ties at distance exactly 0 get weight 1
            return (d == 0.0).astype(float)
        with np.errstate(over="ignore"):
            return np.exp(-d / lam)

    def pair_weight(self, u: Location, s: Location, lam: float) -> float:
        _check_lambda(lam)
        d = self.pair_distance(u, s)
        if lam == 0.0:
            return 1.0 if d == 0.0 else 0.0
        if d == math.inf:
            return 0.0
        return math.exp(-d / lam)


def _check_lambda(lam: float) -> None:
    if not (isinstance(lam, (int, float)) and math.isfinite(lam) and lam >= 0):
        raise ValueError(f"smoothness parameter must be a finite real >= 0, got {lam!r}")


def _sq_euclidean(locs: np.ndarray) -> np.ndarray:
    d = locs[:, None, :] - locs[None, :, :]
    return d[..., 0] ** 2 + d[..., 1] ** 2


@dataclass(frozen=True)
class EuclideanKernel(ExponentialDecayKernel):
    """exp(-||s - u||^2 / lambda): weight by plain Euclidean proximity."""

    def distance_matrix(self, locs: np.ndarray) -> np.ndarray:
        return _sq_euclidean(locs)

    def pair_distance(self, u: Location, s: Location) -> float:
        return (s.s1 - u.s1) ** 2 + (s.s2 - u.s2) ** 2


@dataclass(frozen=True)
class RingKernel(ExponentialDecayKernel):
    """exp(-|r_s^2 - r_u^2| / lambda): weight by matching radius from the source."""

    source: PointSource = PointSource()

    def distance_matrix(self, locs: np.ndarray) -> np.ndarray:
        r = _radius_sq(locs, self.source)
        return np.abs(r[:, None] - r[None, :])

    def pair_distance(self, u: Location, s: Location) -> float:
        return abs(radial_distance(s, self.source) ** 2 - radial_distance(u, self.source) ** 2)


@dataclass(frozen=True)
class RingAngleKernel(ExponentialDecayKernel):
    """exp(-(|r_s^2 - r_u^2| + angle_scale * |cos(theta_s) - cos(theta_u)|) / lambda)."""

    source: PointSource = PointSource()
    angle_scale: float = 2.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.angle_scale) and self.angle_scale >= 0):
            raise ValueError("angle_scale must be finite and >= 0")

    def distance_matrix(self, locs: np.ndarray) -> np.ndarray:
        r = _radius_sq(locs, self.source)
        c = _direction_cosines(locs, self.source)
        return np.abs(r[:, None] - r[None, :]) + self.angle_scale * np.abs(c[:, None] - c[None, :])

    def pair_distance(self, u: Location, s: Location) -> float:
        ring = abs(radial_distance(s, self.source) ** 2 - radial_distance(u, self.source) ** 2)
        ang = abs(direction_cosine(s, self.source) - direction_cosine(u, self.source))
        return ring + self.angle_scale * ang


@dataclass(frozen=True)
class RingBlockKernel(ExponentialDecayKernel):
    """Ring weight restricted to pairs on the same side of the blocked region."""

    region: BlockRegion = BlockRegion()

    def distance_matrix(self, locs: np.ndarray) -> np.ndarray:
        r = _radius_sq(locs, self.region.source)
        d = np.abs(r[:, None] - r[None, :])
        ind = _unblocked_mask(locs, self.region)
        d[ind[:, None] != ind[None, :]] = np.inf
        return d

    def pair_distance(self, u: Location, s: Location) -> float:
        if unblocked_indicator(u, self.region) != unblocked_indicator(s, self.region):
            return math.inf
        src = self.region.source
        return abs(radial_distance(s, src) ** 2 - radial_distance(u, src) ** 2)


@dataclass(frozen=True)
class BivariateNormalKernel(ExponentialDecayKernel):
    """exp(-(s-u)^T Sigma_lambda^{-1} (s-u) / 2) with Sigma_lambda = lambda * [[v1, rho*sd1*sd2], ...]."""

    var1: float = 1.0
    var2: float = 1.0
    rho: float = 0.0

    def __post_init__(self) -> None:
        if not (self.var1 > 0 and self.var2 > 0 and math.isfinite(self.var1) and math.isfinite(self.var2)):
            raise ValueError("variances must be positive and finite")
        if not (-1.0 < self.rho < 1.0):
            raise ValueError("correlation must lie strictly inside (-1, 1)")

    def _precision(self) -> tuple[float, float, float]:
        # inverse of [[v1, b], [b, v2]] with b = rho * sqrt(v1 v2)
        b = self.rho * math.sqrt(self.var1 * self.var2)
        det = self.var1 * self.var2 - b * b
        return self.var2 / det, -b / det, self.var1 / det

    def distance_matrix(self, locs: np.ndarray) -> np.ndarray:
        a, b, c = self._precision()
        d1 = locs[:, None, 0] - locs[None, :, 0]
        d2 = locs[:, None, 1] - locs[None, :, 1]
        q = a * d1 ** 2 + 2.0 * b * d1 * d2 + c * d2 ** 2
        return np.maximum(q / 2.0, 0.0)

    def pair_distance(self, u: Location, s: Location) -> float:
        a, b, c = self._precision()
        d1, d2 = s.s1 - u.s1, s.s2 - u.s2
        return max((a * d1 * d1 + 2.0 * b * d1 * d2 + c * d2 * d2) / 2.0, 0.0)


def eval_weight(kernel: KernelFamily, u: Location, s: Location, lam: float) -> float:
    """W_lambda(u, s) for any family; lam = 0 evaluates the limit weights."""
    _check_lambda(lam)
    return kernel.pair_weight(u, s, lam)


# ---------------------------------------------------------------------------
# JSON form used by CLI configs: {"family": ..., "params": {...}}

def _source_to_json(src: PointSource) -> dict:
    return {"loc": [src.loc.s1, src.loc.s2], "direction": list(src.direction)}


def _source_from_json(obj: dict | None) -> PointSource:
    if obj is None:
        return PointSource()
    loc = obj.get("loc", [0.0, 0.0])
    direction = obj.get("direction", [1.0, 0.0])
    return PointSource(loc=Location(float(loc[0]), float(loc[1])),
                       direction=(float(direction[0]), float(direction[1])))


def _region_to_json(region: BlockRegion) -> dict:
    return {
        "threshold_x": region.threshold_x,
        "threshold_cos": region.threshold_cos,
        "source": _source_to_json(region.source),
    }


def _region_from_json(obj: dict | None) -> BlockRegion:
    if obj is None:
        return BlockRegion()
    return BlockRegion(
        threshold_x=float(obj.get("threshold_x", 0.4)),
        threshold_cos=float(obj.get("threshold_cos", 0.625)),
        source=_source_from_json(obj.get("source")),
    )


def kernel_to_json(kernel: KernelFamily) -> dict:
    if isinstance(kernel, EuclideanKernel):
        return {"family": "euclidean", "params": {}}
    if isinstance(kernel, RingAngleKernel):
        return {"family": "ring_angle",
                "params": {"source": _source_to_json(kernel.source),
                           "angle_scale": kernel.angle_scale}}
    if isinstance(kernel, RingBlockKernel):
        return {"family": "ring_block", "params": {"region": _region_to_json(kernel.region)}}
    if isinstance(kernel, RingKernel):
        return {"family": "ring", "params": {"source": _source_to_json(kernel.source)}}
    if isinstance(kernel, BivariateNormalKernel):
        return {"family": "bivariate_normal",
                "params": {"var1": kernel.var1, "var2": kernel.var2, "rho": kernel.rho}}
    raise ValueError(f"kernel {type(kernel).__name__} has no JSON form")


def kernel_from_json(obj: dict) -> KernelFamily:
    family = obj.get("family")
    params = obj.get("params") or {}
    if family == "euclidean":
        return EuclideanKernel()
    if family == "ring":
        return RingKernel(source=_source_from_json(params.get("source")))
    if family == "ring_angle":
        return RingAngleKernel(
            source=_source_from_json(params.get("source")),
            angle_scale=float(params.get("angle_scale", 2.0)),
        )
    if family == "ring_block":
        return RingBlockKernel(region=_region_from_json(params.get("region")))
    if family == "bivariate_normal":
        return BivariateNormalKernel(
            var1=float(params.get("var1", 1.0)),
            var2=float(params.get("var2", 1.0)),
            rho=float(params.get("rho", 0.0)),
        )
    raise ValueError(f"unknown kernel family {family!r}")
