"""Slotted-time Monte Carlo simulation of the two-queue broadcast source."""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel_model import SystemConfig, decode_events, success_profile
from .stability_analysis import (
    ArrivalRates,
    DominantSystem,
    RegionError,
    empty_probability,
)

logger = logging.getLogger(__name__)

# Shortest horizon for which the second-half drift estimate is meaningful
MIN_HORIZON = 10_000

# Slots drawn per random substream; slot t always uses substream t // BLOCK_SLOTS
BLOCK_SLOTS = 1 << 16

# Bisection stops once the stable/unstable bracket on the ray is this narrow
SCAN_BRACKET_WIDTH = 0.005

# An Inconclusive run is repeated once over this many times the horizon
RETRY_HORIZON_FACTOR = 4


class SimulationError(ValueError):
    """Raised for invalid simulation requests."""


class SimMode(str, Enum):
    CLOSED_FORM = "closed_form"  # Bernoulli draws with the closed-form probabilities
    CHANNEL_DRAW = "channel_draw"  # exponential channel powers and SINR events


class Verdict(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SimThresholds:
    """Drift and queue-size limits separating stable from unstable runs."""

    drift_eps: float = 1e-3
    q_cap_fraction: float = 0.05

    def __post_init__(self):
        if not (math.isfinite(self.drift_eps) and self.drift_eps >= 0):
            raise SimulationError(f"drift_eps must be finite and nonnegative, got {self.drift_eps!r}")
        if not (0 < self.q_cap_fraction <= 1):
            raise SimulationError(f"q_cap_fraction must be in (0, 1], got {self.q_cap_fraction!r}")


@dataclass(frozen=True)
class SimConfig:
    system: SystemConfig
    rates: ArrivalRates
    horizon: int
    seed: int
    dominant: DominantSystem = DominantSystem.NONE
    mode: SimMode = SimMode.CLOSED_FORM
    thresholds: SimThresholds = field(default_factory=SimThresholds)

    def __post_init__(self):
        object.__setattr__(self, 'dominant', DominantSystem(self.dominant))
        object.__setattr__(self, 'mode', SimMode(self.mode))
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise SimulationError(f"horizon must be a positive integer, got {self.horizon!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise SimulationError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        for name, value in zip(('lambda1', 'lambda2'), self.rates.as_point()):
            if value > 1:
                raise SimulationError(f"{name} is a per-slot Bernoulli probability, got {value!r}")

    def with_rates(self, lambda1: float, lambda2: float) -> 'SimConfig':
        return SimConfig(
            system=self.system,
            rates=ArrivalRates(lambda1, lambda2),
            horizon=self.horizon,
            seed=self.seed,
            dominant=self.dominant,
            mode=self.mode,
            thresholds=self.thresholds,
        )


@dataclass
class ServiceStats:
    """Transmission attempts and successes of one real queue, split by busy set."""

    solo_attempts: int = 0
    solo_successes: int = 0
    joint_attempts: int = 0
    joint_successes: int = 0

    @property
    def attempts(self) -> int:
        return self.solo_attempts + self.joint_attempts

    @property
    def successes(self) -> int:
        return self.solo_successes + self.joint_successes

    @staticmethod
    def _ratio(hits: int, tries: int) -> Optional[float]:
        return hits / tries if tries else None

    @property
    def frequency(self) -> Optional[float]:
        return self._ratio(self.successes, self.attempts)

    @property
    def solo_frequency(self) -> Optional[float]:
        return self._ratio(self.solo_successes, self.solo_attempts)

    @property
    def joint_frequency(self) -> Optional[float]:
        return self._ratio(self.joint_successes, self.joint_attempts)

    @staticmethod
    def stderr(frequency: Optional[float], tries: int) -> Optional[float]:
        if frequency is None:
            return None
        return math.sqrt(frequency * (1 - frequency) / tries)

    def to_dict(self) -> Dict[str, object]:
        return {
            'solo_attempts': self.solo_attempts,
            'solo_successes': self.solo_successes,
            'joint_attempts': self.joint_attempts,
            'joint_successes': self.joint_successes,
            'frequency': self.frequency,
            'solo_frequency': self.solo_frequency,
            'joint_frequency': self.joint_frequency,
        }


@dataclass
class SimOutcome:
    final_q1: int
    final_q2: int
    mean_q1: float
    mean_q2: float
    drift1: float
    drift2: float
    emp_service1: ServiceStats
    emp_service2: ServiceStats
    emp_empty1: float
    emp_empty2: float
    verdict1: Verdict
    verdict2: Verdict
    # queue lengths at the start of every slot
    trajectory1: np.ndarray = field(repr=False, compare=False)
    trajectory2: np.ndarray = field(repr=False, compare=False)

    @property
    def verdict(self) -> Verdict:
        """Joint verdict: unstable if either queue is, stable only if both are."""
        verdicts = (self.verdict1, self.verdict2)
        if Verdict.UNSTABLE in verdicts:
            return Verdict.UNSTABLE
        if verdicts == (Verdict.STABLE, Verdict.STABLE):
            return Verdict.STABLE
        return Verdict.INCONCLUSIVE

    def summary(self) -> Dict[str, object]:
        return {
            'final_q1': self.final_q1,
            'final_q2': self.final_q2,
            'mean_q1': self.mean_q1,
            'mean_q2': self.mean_q2,
            'drift1': self.drift1,
            'drift2': self.drift2,
            'emp_service1': self.emp_service1.frequency,
            'emp_service1_solo': self.emp_service1.solo_frequency,
            'emp_service1_joint': self.emp_service1.joint_frequency,
            'emp_service2': self.emp_service2.frequency,
            'emp_service2_solo': self.emp_service2.solo_frequency,
            'emp_service2_joint': self.emp_service2.joint_frequency,
            'emp_empty1': self.emp_empty1,
            'emp_empty2': self.emp_empty2,
            'verdict1': self.verdict1.value,
            'verdict2': self.verdict2.value,
        }


@dataclass(frozen=True)
class ScanResult:
    """Empirical boundary point found by bisection along a ray."""

    point: Tuple[float, float]
    bracket: Tuple[float, float]
    converged: bool
    saturated: bool
    probes: int


class SlotRandomness:
    """
    Randomness keyed by (seed, slot).

    Every slot consumes the same fixed set of draws whatever the queue state,
    so two system variants run with one seed see identical arrivals, decoding
    uniforms and channel powers.
    """

    def __init__(self, seed: int):
        self._base = np.random.PCG64DXSM(seed)

    def block(self, index: int, size: int) -> Dict[str, np.ndarray]:
        rng = np.random.Generator(self._base.jumped(index + 1))
        return {
            'arrival': rng.random((2, size)),
            'decode': rng.random((2, size)),
            'gain': rng.exponential(1.0, (2, size)),
        }


@dataclass
class _RawRun:
    trajectory1: np.ndarray
    trajectory2: np.ndarray
    final_q1: int
    final_q2: int
    service1: ServiceStats
    service2: ServiceStats
    empty1: int
    empty2: int


def _decode_table(cfg: SimConfig, draws: Dict[str, np.ndarray]) -> List[List[bool]]:
    """solo1, joint1, solo2, joint2 outcomes for every slot of a block."""
    if cfg.mode is SimMode.CHANNEL_DRAW:
        events = decode_events(cfg.system, draws['gain'][0], draws['gain'][1])
        table = (events.solo1, events.joint1, events.solo2, events.joint2)
    else:
        profile = success_profile(cfg.system)
        u1, u2 = draws['decode']
        # one uniform per user and slot, so joint success implies solo success
        table = (u1 < profile.p_1_1, u1 < profile.p_1_12, u2 < profile.p_2_2, u2 < profile.p_2_12)
    return [column.tolist() for column in table]


def _run_queues(cfg: SimConfig) -> _RawRun:
    """Step the slotted state machine: service first, then arrivals."""
    horizon = cfg.horizon
    dummy1 = cfg.dominant is DominantSystem.QUEUE1_DUMMY
    dummy2 = cfg.dominant is DominantSystem.QUEUE2_DUMMY
    lambda1, lambda2 = cfg.rates.as_point()

    randomness = SlotRandomness(cfg.seed)
    trajectory1 = np.empty(horizon, dtype=np.int64)
    trajectory2 = np.empty(horizon, dtype=np.int64)
    service1, service2 = ServiceStats(), ServiceStats()
    q1 = q2 = 0
    empty1 = empty2 = 0

    for block_index, start in enumerate(range(0, horizon, BLOCK_SLOTS)):
        size = min(BLOCK_SLOTS, horizon - start)
        draws = randomness.block(block_index, size)
        arrivals1 = (draws['arrival'][0] < lambda1).tolist()
        arrivals2 = (draws['arrival'][1] < lambda2).tolist()
        solo1, joint1, solo2, joint2 = _decode_table(cfg, draws)
        lengths1 = [0] * size
        lengths2 = [0] * size

        for k in range(size):
            lengths1[k] = q1
            lengths2[k] = q2
            sending1 = q1 > 0 or dummy1
            sending2 = q2 > 0 or dummy2
            departed1 = departed2 = 0

            if q1 > 0:
                if sending2:
                    service1.joint_attempts += 1
                    if joint1[k]:
                        service1.joint_successes += 1
                        departed1 = 1
                else:
                    service1.solo_attempts += 1
                    if solo1[k]:
                        service1.solo_successes += 1
                        departed1 = 1
            else:
                empty1 += 1

            if q2 > 0:
                if sending1:
                    service2.joint_attempts += 1
                    if joint2[k]:
                        service2.joint_successes += 1
                        departed2 = 1
                else:
                    service2.solo_attempts += 1
                    if solo2[k]:
                        service2.solo_successes += 1
                        departed2 = 1
            else:
                empty2 += 1

            q1 += arrivals1[k] - departed1
            q2 += arrivals2[k] - departed2

        trajectory1[start:start + size] = lengths1
        trajectory2[start:start + size] = lengths2

    return _RawRun(
        trajectory1=trajectory1,
        trajectory2=trajectory2,
        final_q1=q1,
        final_q2=q2,
        service1=service1,
        service2=service2,
        empty1=empty1,
        empty2=empty2,
    )


def _drift(trajectory: np.ndarray) -> float:
    """Least-squares slope of queue length against slot over the second half."""
    tail = trajectory[len(trajectory) // 2:]
    if len(tail) < 2:
        return 0.0
    slots = np.arange(len(tail), dtype=float)
    return float(np.polyfit(slots, tail.astype(float), 1)[0])


def _verdict(drift: float, final: int, horizon: int, thresholds: SimThresholds) -> Verdict:
    q_cap = thresholds.q_cap_fraction * horizon
    if drift <= thresholds.drift_eps and final < q_cap:
        return Verdict.STABLE
    if drift > thresholds.drift_eps and final >= q_cap:
        return Verdict.UNSTABLE
    return Verdict.INCONCLUSIVE


def simulate(cfg: SimConfig) -> SimOutcome:
    """
    Run the coupled queues (or a dominant system) for cfg.horizon slots.

    Raises:
        SimulationError: If the horizon is too short for a drift verdict
    """
    if cfg.horizon < MIN_HORIZON:
        raise SimulationError(
            f"horizon {cfg.horizon} is below {MIN_HORIZON} slots; refusing to emit a verdict"
        )

    run = _run_queues(cfg)
    drift1 = _drift(run.trajectory1)
    drift2 = _drift(run.trajectory2)
    outcome = SimOutcome(
        final_q1=run.final_q1,
        final_q2=run.final_q2,
        mean_q1=float(run.trajectory1.mean()),
        mean_q2=float(run.trajectory2.mean()),
        drift1=drift1,
        drift2=drift2,
        emp_service1=run.service1,
        emp_service2=run.service2,
        emp_empty1=run.empty1 / cfg.horizon,
        emp_empty2=run.empty2 / cfg.horizon,
        verdict1=_verdict(drift1, run.final_q1, cfg.horizon, cfg.thresholds),
        verdict2=_verdict(drift2, run.final_q2, cfg.horizon, cfg.thresholds),
        trajectory1=run.trajectory1,
        trajectory2=run.trajectory2,
    )
    logger.debug(
        "simulate rates=(%.4f, %.4f) dominant=%s -> %s/%s",
        cfg.rates.lambda1, cfg.rates.lambda2, cfg.dominant.value,
        outcome.verdict1.value, outcome.verdict2.value,
    )
    return outcome


def empty_probability_check(cfg: SimConfig) -> Tuple[float, float]:
    """
    Compare the Little's-theorem empty probability of the non-dummy queue
    with its simulated empty fraction.

    Returns:
        (analytic, empirical)
    """
    if cfg.dominant is DominantSystem.NONE:
        raise SimulationError("empty probability check needs a dominant system")
    try:
        analytic = empty_probability(success_profile(cfg.system), cfg.rates, cfg.dominant)
    except RegionError as error:
        raise SimulationError(str(error)) from error

    outcome = simulate(cfg)
    if cfg.dominant is DominantSystem.QUEUE1_DUMMY:
        empirical = outcome.emp_empty2
    else:
        empirical = outcome.emp_empty1
    return analytic, empirical


def _probe(cfg: SimConfig) -> Verdict:
    """
    Classify one rate pair. An Inconclusive run is repeated once over a longer
    horizon with the same absolute queue cap, so slow linear growth can cross it.
    """
    verdict = simulate(cfg).verdict
    if verdict is Verdict.INCONCLUSIVE:
        thresholds = replace(
            cfg.thresholds,
            q_cap_fraction=cfg.thresholds.q_cap_fraction / RETRY_HORIZON_FACTOR,
        )
        longer = replace(cfg, horizon=cfg.horizon * RETRY_HORIZON_FACTOR, thresholds=thresholds)
        logger.debug("Inconclusive at rates %s; retrying over %d slots", cfg.rates.as_point(), longer.horizon)
        verdict = simulate(longer).verdict
    return verdict


def boundary_scan(
    system: SystemConfig,
    direction: Sequence[float],
    horizon: int,
    seed: int,
    thresholds: Optional[SimThresholds] = None,
    mode: SimMode = SimMode.CLOSED_FORM,
    bracket_width: float = SCAN_BRACKET_WIDTH,
) -> ScanResult:
    """
    Locate the empirical stability boundary along a ray through the origin by
    bisection, classifying each probe with a run of the original coupled system.
    """
    d1, d2 = float(direction[0]), float(direction[1])
    if d1 < 0 or d2 < 0 or (d1 == 0 and d2 == 0):
        raise SimulationError(f"direction must be nonnegative and nonzero, got {direction!r}")
    norm = math.hypot(d1, d2)
    d1, d2 = d1 / norm, d2 / norm

    # the ray leaves the unit box at t_max
    t_max = min(1 / d for d in (d1, d2) if d > 0)
    base = SimConfig(
        system=system,
        rates=ArrivalRates(0.0, 0.0),
        horizon=horizon,
        seed=seed,
        mode=mode,
        thresholds=thresholds or SimThresholds(),
    )

    def point(t: float) -> Tuple[float, float]:
        return (min(t * d1, 1.0), min(t * d2, 1.0))

    probes = 1
    if _probe(base.with_rates(*point(t_max))) is Verdict.STABLE:
        logger.info("Ray (%.3f, %.3f) stable up to the unit box", d1, d2)
        return ScanResult(point=point(t_max), bracket=(t_max, t_max), converged=True,
                          saturated=True, probes=probes)

    low, high = 0.0, t_max
    converged = True
    while high - low > bracket_width:
        middle = (low + high) / 2
        probes += 1
        verdict = _probe(base.with_rates(*point(middle)))
        if verdict is Verdict.STABLE:
            low = middle
        elif verdict is Verdict.UNSTABLE:
            high = middle
        else:
            logger.info("Inconclusive probe at t=%.4f after retry; reporting bracket", middle)
            converged = False
            break

    result = ScanResult(
        point=point((low + high) / 2),
        bracket=(low, high),
        converged=converged,
        saturated=False,
        probes=probes,
    )
    logger.debug("boundary_scan direction=(%.3f, %.3f) -> %s", d1, d2, result)
    return result


def dominance_coupling_check(
    system: SystemConfig,
    rates: ArrivalRates,
    horizon: int,
    seed: int,
    dominant: DominantSystem = DominantSystem.QUEUE1_DUMMY,
    mode: SimMode = SimMode.CLOSED_FORM,
) -> bool:
    """
    Run the original and a dominant system on the same per-slot randomness and
    check that the dominant queues are never shorter.
    """
    dominant = DominantSystem(dominant)
    if dominant is DominantSystem.NONE:
        raise SimulationError("dominance check needs a dominant system")

    original = _run_queues(SimConfig(system=system, rates=rates, horizon=horizon,
                                     seed=seed, mode=mode))
    dominated = _run_queues(SimConfig(system=system, rates=rates, horizon=horizon,
                                      seed=seed, dominant=dominant, mode=mode))

    return bool(
        np.all(dominated.trajectory1 >= original.trajectory1)
        and np.all(dominated.trajectory2 >= original.trajectory2)
        and dominated.final_q1 >= original.final_q1
        and dominated.final_q2 >= original.final_q2
    )
