"""Stable throughput region of the two-user broadcast channel."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .channel_model import SuccessProfile, SystemConfig, success_profile

logger = logging.getLogger(__name__)

# Slack used when a boundary sample lands exactly on a constraint line
_EDGE_EPS = 1e-12

Point = Tuple[float, float]


class RegionError(ValueError):
    """Raised when an operation's precondition on a profile or region fails."""


class RegionLabel(str, Enum):
    R1 = "R1"  # first dominant system: queue 1 sends dummy packets
    R2 = "R2"  # second dominant system: queue 2 sends dummy packets


class DominantSystem(str, Enum):
    NONE = "none"
    QUEUE1_DUMMY = "queue1_dummy"
    QUEUE2_DUMMY = "queue2_dummy"


class Corner(str, Enum):
    """Extreme points of the region, listed in tie-break order."""

    D2_SOLO = "d2_solo"
    JOINT = "joint"
    D1_SOLO = "d1_solo"


class AggregateThroughput(NamedTuple):
    t_aggr: float
    corner: Corner


@dataclass(frozen=True)
class ArrivalRates:
    """Mean packet arrival rates per slot."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        for name in ('lambda1', 'lambda2'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise RegionError(f"{name} must be finite and nonnegative, got {value!r}")

    def as_point(self) -> Point:
        return (self.lambda1, self.lambda2)


def _coords(rates) -> Point:
    if isinstance(rates, ArrivalRates):
        return rates.as_point()
    lambda1, lambda2 = rates
    return (float(lambda1), float(lambda2))


@dataclass(frozen=True)
class SubRegion:
    """
    Downward-closed polytope a1*l1 + a2*l2 < b, l_axis < bound.

    A box bound of 0 admits the axis itself: a queue with no arrivals is
    stable. An empty sub-region contains nothing.
    """

    slope_constraint: Tuple[float, float, float]
    box_constraint: Tuple[int, float]
    label: RegionLabel
    empty: bool = False

    def contains(self, lambda1: float, lambda2: float) -> bool:
        if self.empty:
            return False
        a1, a2, b = self.slope_constraint
        axis, bound = self.box_constraint
        boxed = lambda1 if axis == 1 else lambda2
        if not (boxed < bound or boxed == 0.0):
            return False
        return a1 * lambda1 + a2 * lambda2 < b

    def height(self, lambda1: float) -> Optional[float]:
        """sup lambda2 over the closure at the given lambda1, None if the vertical line misses it."""
        if self.empty:
            return None
        a1, a2, b = self.slope_constraint
        axis, bound = self.box_constraint
        if axis == 1 and lambda1 > bound + _EDGE_EPS:
            return None
        slack = b - a1 * lambda1
        if slack < -_EDGE_EPS:
            return None
        top = max(slack, 0.0) / a2 if a2 > 0 else math.inf
        if axis == 2:
            top = min(top, bound)
        return top

    def width(self) -> Optional[float]:
        """sup lambda1 over the closure."""
        if self.empty:
            return None
        a1, _, b = self.slope_constraint
        axis, bound = self.box_constraint
        top = b / a1 if a1 > 0 else math.inf
        if axis == 1:
            top = min(top, bound)
        return top

    def reach(self, direction: Point) -> Optional[float]:
        """sup t such that t*direction lies in the closure."""
        if self.empty:
            return None
        a1, a2, b = self.slope_constraint
        axis, bound = self.box_constraint
        t = math.inf
        rate = a1 * direction[0] + a2 * direction[1]
        if rate > 0:
            t = b / rate
        component = direction[axis - 1]
        if component > 0:
            t = min(t, bound / component)
        return t

    def to_dict(self) -> dict:
        a1, a2, b = self.slope_constraint
        axis, bound = self.box_constraint
        return {
            'label': self.label.value,
            'a1': a1,
            'a2': a2,
            'b': b,
            'axis': axis,
            'bound': bound,
            'empty': self.empty,
        }


class _SubRegionSet:
    """Queries shared by a single region and a union of regions."""

    def parts(self) -> Sequence[SubRegion]:
        raise NotImplementedError

    def contains(self, rates) -> bool:
        lambda1, lambda2 = _coords(rates)
        return any(part.contains(lambda1, lambda2) for part in self.parts())

    def height(self, lambda1: float) -> Optional[float]:
        heights = [h for h in (part.height(lambda1) for part in self.parts()) if h is not None]
        return max(heights) if heights else None

    def sup_lambda1(self) -> Optional[float]:
        widths = [w for w in (part.width() for part in self.parts()) if w is not None]
        return max(widths) if widths else None

    def is_empty(self) -> bool:
        return all(part.empty for part in self.parts())


@dataclass(frozen=True)
class StabilityRegion(_SubRegionSet):
    """R = R1 U R2 for one success profile."""

    sub1: SubRegion
    sub2: SubRegion
    profile: SuccessProfile

    def parts(self) -> Sequence[SubRegion]:
        return (self.sub1, self.sub2)

    def corners(self) -> List[Point]:
        p = self.profile
        return [(p.p_1_1, 0.0), (0.0, p.p_2_2), (p.p_1_12, p.p_2_12)]


class RegionUnion(_SubRegionSet):
    """Finite union of stability regions, e.g. over a grid of power splits."""

    def __init__(self, regions: Iterable[StabilityRegion]):
        self.regions = list(regions)
        self._parts = [part for region in self.regions for part in region.parts()]

    def parts(self) -> Sequence[SubRegion]:
        return self._parts

    def __len__(self) -> int:
        return len(self.regions)


def build_region(profile: SuccessProfile) -> StabilityRegion:
    """Half-plane form of the two dominant-system regions for a success profile."""
    p11, p22, p112, p212 = profile.as_tuple()

    if p11 == 0:
        sub1 = SubRegion((0.0, 0.0, 0.0), (2, 0.0), RegionLabel.R1, empty=True)
    elif p212 == 0:
        # queue 2 is never served while queue 1 is busy
        sub1 = SubRegion((1 / p11, 0.0, 1.0), (2, 0.0), RegionLabel.R1)
    else:
        sub1 = SubRegion(
            (1 / p11, (p11 - p112) / (p11 * p212), 1.0),
            (2, p212),
            RegionLabel.R1,
        )

    if p22 == 0:
        sub2 = SubRegion((0.0, 0.0, 0.0), (1, 0.0), RegionLabel.R2, empty=True)
    elif p112 == 0:
        sub2 = SubRegion((0.0, 1 / p22, 1.0), (1, 0.0), RegionLabel.R2)
    else:
        sub2 = SubRegion(
            ((p22 - p212) / (p22 * p112), 1 / p22, 1.0),
            (1, p112),
            RegionLabel.R2,
        )

    return StabilityRegion(sub1=sub1, sub2=sub2, profile=profile)


def contains(region: _SubRegionSet, rates) -> bool:
    """Strict membership in the (open) stability region."""
    return region.contains(rates)


def boundary(region: _SubRegionSet, n_points: int) -> List[Point]:
    """
    Sample the Pareto frontier of the region's closure.

    Args:
        region: StabilityRegion or RegionUnion
        n_points: Number of evenly spaced lambda1 samples in [0, sup lambda1]

    Returns:
        List of (lambda1, sup lambda2) pairs; sup lambda2 is nonincreasing in lambda1
    """
    if n_points < 2:
        raise RegionError(f"n_points must be at least 2, got {n_points}")
    if region.is_empty():
        return []

    right = region.sup_lambda1()
    points = []
    for lambda1 in np.linspace(0.0, right, n_points):
        top = region.height(float(lambda1))
        if top is None:
            break
        points.append((float(lambda1), float(top)))
    return points


def ray_intersection(region: _SubRegionSet, direction: Sequence[float]) -> Point:
    """Point where the ray from the origin along direction leaves the region's closure."""
    d1, d2 = float(direction[0]), float(direction[1])
    if d1 < 0 or d2 < 0 or (d1 == 0 and d2 == 0):
        raise RegionError(f"direction must be nonnegative and nonzero, got {direction!r}")
    reaches = [t for t in (part.reach((d1, d2)) for part in region.parts()) if t is not None]
    if not reaches:
        return (0.0, 0.0)
    t = max(reaches)
    if math.isinf(t):
        raise RegionError("ray never leaves the region")
    return (t * d1, t * d2)


def is_convex(profile: SuccessProfile) -> bool:
    """Convexity condition: Pr(D1/1,2)/Pr(D1/1) + Pr(D2/1,2)/Pr(D2/2) >= 1."""
    if profile.p_1_1 == 0 or profile.p_2_2 == 0:
        raise RegionError("convexity is undefined when a solo success probability is zero")
    return profile.p_1_12 / profile.p_1_1 + profile.p_2_12 / profile.p_2_2 >= 1


def time_sharing_contains(profile: SuccessProfile, rates) -> bool:
    """Membership in the time-sharing triangle l1/Pr(D1/1) + l2/Pr(D2/2) < 1."""
    load = 0.0
    for rate, service in zip(_coords(rates), (profile.p_1_1, profile.p_2_2)):
        if rate == 0:
            continue
        if service == 0:
            return False
        load += rate / service
    return load < 1


def max_aggregate(profile: SuccessProfile) -> AggregateThroughput:
    """
    Maximum of l1 + l2 over the region, attained at a corner point.

    Ties go to the earlier corner in (D2 solo, joint, D1 solo) order.
    """
    candidates = [
        (profile.p_2_2, Corner.D2_SOLO),
        (profile.p_1_12 + profile.p_2_12, Corner.JOINT),
        (profile.p_1_1, Corner.D1_SOLO),
    ]
    best_value, best_corner = candidates[0]
    for value, corner in candidates[1:]:
        if value > best_value:
            best_value, best_corner = value, corner
    return AggregateThroughput(t_aggr=best_value, corner=best_corner)


def saturated_aggregate(profile: SuccessProfile) -> float:
    """Aggregate throughput with both queues always backlogged."""
    return profile.p_1_12 + profile.p_2_12


def closure(base_cfg: SystemConfig, n_splits: int) -> List[Tuple[float, StabilityRegion]]:
    """
    Regions over a uniform grid of power splits P1 in [0, P], endpoints included.

    Membership in the closure is membership in any of the returned regions.
    """
    if n_splits < 2:
        raise RegionError(f"n_splits must be at least 2, got {n_splits}")

    regions = []
    for p1 in np.linspace(0.0, base_cfg.p_total, n_splits):
        cfg = base_cfg.with_split(float(p1))
        regions.append((float(p1), build_region(success_profile(cfg))))
    logger.debug("Built %d split regions for %s/%s", n_splits,
                 base_cfg.scheme.value, base_cfg.power_policy.value)
    return regions


def closure_union(splits: Iterable[Tuple[float, StabilityRegion]]) -> RegionUnion:
    return RegionUnion(region for _, region in splits)


def find_nonconvex_midpoint(
    region: _SubRegionSet,
    n_points: int = 512,
    n_pairs: int = 1000,
    tol: float = 1e-9,
    seed: int = 0,
) -> Optional[Point]:
    """
    Search for a midpoint of two boundary points that falls outside the region.

    The pair of axis intercepts is always tested first. A midpoint m counts as
    inside when m * (1 - tol) is a member.

    Returns:
        The first violating midpoint, or None if every tested midpoint is inside
    """
    points = np.asarray(boundary(region, n_points), dtype=float)
    if len(points) < 2:
        return None

    rng = np.random.default_rng(seed)
    pairs = [(0, len(points) - 1)]
    pairs.extend(map(tuple, rng.integers(0, len(points), size=(n_pairs, 2))))

    shrink = 1.0 - tol
    for i, j in pairs:
        midpoint = (points[i] + points[j]) / 2
        if not region.contains((midpoint[0] * shrink, midpoint[1] * shrink)):
            return (float(midpoint[0]), float(midpoint[1]))
    return None


def service_rates(profile: SuccessProfile, rates, dominant: DominantSystem) -> Tuple[float, float]:
    """
    Average service rates (mu1, mu2) in a dominant system.

    The dummy queue's partner sees a constant service rate; the Little's-theorem
    empty probability of the partner then fixes the dummy queue's rate.
    """
    dominant = DominantSystem(dominant)
    lambda1, lambda2 = _coords(rates)
    empty = empty_probability(profile, (lambda1, lambda2), dominant)

    if dominant is DominantSystem.QUEUE1_DUMMY:
        mu2 = profile.p_2_12
        mu1 = (1 - empty) * profile.p_1_12 + empty * profile.p_1_1
    else:
        mu1 = profile.p_1_12
        mu2 = (1 - empty) * profile.p_2_12 + empty * profile.p_2_2
    return (mu1, mu2)


def empty_probability(profile: SuccessProfile, rates, dominant: DominantSystem) -> float:
    """Pr(Q = 0) of the non-dummy queue in a dominant system."""
    dominant = DominantSystem(dominant)
    lambda1, lambda2 = _coords(rates)

    if dominant is DominantSystem.QUEUE1_DUMMY:
        rate, service, name = lambda2, profile.p_2_12, 'queue 2'
    elif dominant is DominantSystem.QUEUE2_DUMMY:
        rate, service, name = lambda1, profile.p_1_12, 'queue 1'
    else:
        raise RegionError("empty probability needs a dominant system")

    if not rate < service:
        raise RegionError(f"{name} is unstable in the dominant system ({rate} >= {service})")
    return 1 - rate / service
