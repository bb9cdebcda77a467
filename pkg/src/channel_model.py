"""Success probabilities for the two-user broadcast channel under Rayleigh fading."""

import math
from dataclasses import dataclass, replace as _dc_replace
from enum import Enum
from typing import Dict, Tuple

import numpy as np

# Relative tolerance for the power budget P1 + P2 = P
POWER_SPLIT_RTOL = 1e-9


class InvalidConfigError(ValueError):
    """Raised when a SystemConfig field is out of its domain."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class Scheme(str, Enum):
    """Receiver processing when both messages are superimposed."""

    TIN = "tin"  # both receivers treat interference as noise
    SD = "sd"  # D1 decodes D2's message first and subtracts it


class PowerPolicy(str, Enum):
    """Power given to a lone busy queue."""

    FIXED = "fixed"  # P_i regardless of the other queue
    QUEUE_ADAPTIVE = "adaptive"  # full budget P when the other queue is empty


class SDBranch(str, Enum):
    """Active piece of the successive-decoding success formula at D1."""

    INFEASIBLE = "infeasible"  # P2 <= gamma2 * P1
    COUPLED = "coupled"  # interference-limited first stage
    DECOUPLED = "decoupled"  # first user not affected by the second


@dataclass(frozen=True)
class SystemConfig:
    """
    Channel geometry, thresholds and power allocation of the broadcast source.

    Noise power is normalised to 1, so powers are linear SNR units.
    """

    gamma1: float
    gamma2: float
    d1: float
    d2: float
    alpha: float
    p1: float
    p2: float
    p_total: float
    scheme: Scheme = Scheme.TIN
    power_policy: PowerPolicy = PowerPolicy.FIXED
    stronger_receiver: int = 1

    def __post_init__(self):
        # Coerce string enums coming from config files and CLI flags
        try:
            object.__setattr__(self, 'scheme', Scheme(self.scheme))
        except ValueError:
            raise InvalidConfigError('scheme', f"unknown scheme {self.scheme!r}")
        try:
            object.__setattr__(self, 'power_policy', PowerPolicy(self.power_policy))
        except ValueError:
            raise InvalidConfigError('power_policy', f"unknown policy {self.power_policy!r}")

        for name in ('gamma1', 'gamma2', 'd1', 'd2', 'alpha', 'p1', 'p2', 'p_total'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidConfigError(name, f"expected a real number, got {value!r}")
            if not math.isfinite(value):
                raise InvalidConfigError(name, f"must be finite, got {value!r}")

        for name in ('gamma1', 'gamma2', 'd1', 'd2', 'alpha', 'p_total'):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(name, f"must be strictly positive, got {getattr(self, name)!r}")

        for name in ('p1', 'p2'):
            if getattr(self, name) < 0:
                raise InvalidConfigError(name, f"must be nonnegative, got {getattr(self, name)!r}")

        if not math.isclose(self.p1 + self.p2, self.p_total, rel_tol=POWER_SPLIT_RTOL):
            raise InvalidConfigError(
                'p_total',
                f"p1 + p2 = {self.p1 + self.p2!r} does not match p_total = {self.p_total!r}"
            )

        if self.stronger_receiver not in (1, 2):
            raise InvalidConfigError('stronger_receiver', "must be 1 or 2")
        if self.scheme is Scheme.SD and self.stronger_receiver != 1:
            raise InvalidConfigError(
                'stronger_receiver',
                "successive decoding runs at D1; D2 cannot be declared the stronger receiver"
            )

    def gamma(self, user: int) -> float:
        return self.gamma1 if _check_user(user) == 1 else self.gamma2

    def distance(self, user: int) -> float:
        return self.d1 if _check_user(user) == 1 else self.d2

    def power(self, user: int) -> float:
        return self.p1 if _check_user(user) == 1 else self.p2

    def solo_power(self, user: int) -> float:
        """Power used for user's packet when the other queue is empty."""
        if self.power_policy is PowerPolicy.QUEUE_ADAPTIVE:
            return self.p_total
        return self.power(user)

    def path_loss(self, user: int) -> float:
        """d_i^alpha."""
        return self.distance(user) ** self.alpha

    def with_split(self, p1: float) -> 'SystemConfig':
        """Same system with power p1 for queue 1 and the rest of the budget for queue 2."""
        return _dc_replace(self, p1=float(p1), p2=float(self.p_total - p1))

    def replace(self, **changes) -> 'SystemConfig':
        return _dc_replace(self, **changes)

    def to_dict(self) -> Dict[str, object]:
        return {
            'gamma1': self.gamma1,
            'gamma2': self.gamma2,
            'd1': self.d1,
            'd2': self.d2,
            'alpha': self.alpha,
            'p1': self.p1,
            'p2': self.p2,
            'p_total': self.p_total,
            'scheme': self.scheme.value,
            'power_policy': self.power_policy.value,
            'stronger_receiver': self.stronger_receiver,
        }


@dataclass(frozen=True)
class SuccessProfile:
    """The four decoding success probabilities Pr(D1/1), Pr(D2/2), Pr(D1/1,2), Pr(D2/1,2)."""

    p_1_1: float
    p_2_2: float
    p_1_12: float
    p_2_12: float

    def __post_init__(self):
        for name in ('p_1_1', 'p_2_2', 'p_1_12', 'p_2_12'):
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise InvalidConfigError(name, f"probability outside [0, 1]: {value!r}")
        if self.p_1_12 > self.p_1_1:
            raise InvalidConfigError('p_1_12', "joint success of user 1 exceeds its solo success")
        if self.p_2_12 > self.p_2_2:
            raise InvalidConfigError('p_2_12', "joint success of user 2 exceeds its solo success")

    def solo(self, user: int) -> float:
        return self.p_1_1 if _check_user(user) == 1 else self.p_2_2

    def joint(self, user: int) -> float:
        return self.p_1_12 if _check_user(user) == 1 else self.p_2_12

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.p_1_1, self.p_2_2, self.p_1_12, self.p_2_12)

    def to_dict(self) -> Dict[str, float]:
        return {
            'p_1_1': self.p_1_1,
            'p_2_2': self.p_2_2,
            'p_1_12': self.p_1_12,
            'p_2_12': self.p_2_12,
        }


@dataclass
class DecodeEvents:
    """Per-sample decoding outcomes for the two busy-set cases."""

    solo1: np.ndarray
    solo2: np.ndarray
    joint1: np.ndarray
    joint2: np.ndarray


def _check_user(user: int) -> int:
    if user not in (1, 2):
        raise InvalidConfigError('user', f"must be 1 or 2, got {user!r}")
    return user


def _no_outage(exponent_numerator: float, power: float) -> float:
    """exp(-x / power), with the zero-power limit mapped to 0."""
    if power <= 0:
        return 0.0
    return math.exp(-exponent_numerator / power)


def success_solo(cfg: SystemConfig, user: int) -> float:
    """
    Probability that user's receiver decodes when only its queue is busy.

    Uses P_i under the fixed policy and the whole budget under the
    queue-adaptive policy.
    """
    return _no_outage(cfg.gamma(user) * cfg.path_loss(user), cfg.solo_power(user))


def success_joint_tin(cfg: SystemConfig, user: int) -> float:
    """
    Success probability of user when both queues are busy and the other
    user's signal is treated as noise. Zero unless P_i > gamma_i * P_j.
    """
    other = 3 - _check_user(user)
    own, interference = cfg.power(user), cfg.power(other)
    gamma = cfg.gamma(user)
    if not own > gamma * interference:
        return 0.0
    return math.exp(-gamma * cfg.path_loss(user) / (own - gamma * interference))


def sd_branch(cfg: SystemConfig) -> SDBranch:
    if not cfg.p2 > cfg.gamma2 * cfg.p1:
        return SDBranch.INFEASIBLE
    knee = cfg.p1 * cfg.gamma2 * (1 + cfg.gamma1) / cfg.gamma1
    if cfg.p2 <= knee:
        return SDBranch.COUPLED
    return SDBranch.DECOUPLED


def success_joint_sd(cfg: SystemConfig) -> float:
    """Success probability at D1 with successive decoding, both queues busy."""
    if cfg.scheme is not Scheme.SD:
        raise InvalidConfigError('scheme', "successive decoding probability requested for a TIN config")

    branch = sd_branch(cfg)
    loss = cfg.path_loss(1)
    if branch is SDBranch.INFEASIBLE:
        return 0.0
    if branch is SDBranch.COUPLED:
        return math.exp(-cfg.gamma2 * loss / (cfg.p2 - cfg.gamma2 * cfg.p1))
    return _no_outage(cfg.gamma1 * loss, cfg.p1)


def success_profile(cfg: SystemConfig) -> SuccessProfile:
    """Assemble the four probabilities for the configured scheme and policy."""
    if cfg.scheme is Scheme.SD:
        joint1 = success_joint_sd(cfg)
    else:
        joint1 = success_joint_tin(cfg, 1)

    solo1, solo2 = success_solo(cfg, 1), success_solo(cfg, 2)
    # the SD knee can put the two closed forms one ulp apart
    return SuccessProfile(
        p_1_1=solo1,
        p_2_2=solo2,
        p_1_12=min(joint1, solo1),
        p_2_12=min(success_joint_tin(cfg, 2), solo2),
    )


def tin_feasibility(gamma1: float, gamma2: float) -> bool:
    """True iff some split makes both joint TIN probabilities nonzero (gamma1 * gamma2 <= 1)."""
    for name, value in (('gamma1', gamma1), ('gamma2', gamma2)):
        if not (math.isfinite(value) and value > 0):
            raise InvalidConfigError(name, f"must be finite and strictly positive, got {value!r}")
    return gamma1 * gamma2 <= 1


def decode_events(cfg: SystemConfig, gain1: np.ndarray, gain2: np.ndarray) -> DecodeEvents:
    """
    Evaluate the SNR/SINR decoding events on sampled channel powers |h_i|^2.

    Args:
        cfg: System configuration
        gain1: Channel powers towards D1 (unit-mean exponential under Rayleigh fading)
        gain2: Channel powers towards D2

    Returns:
        DecodeEvents with boolean arrays for the solo and joint busy sets
    """
    rx1 = np.asarray(gain1, dtype=float) / cfg.path_loss(1)
    rx2 = np.asarray(gain2, dtype=float) / cfg.path_loss(2)

    solo1 = cfg.solo_power(1) * rx1 >= cfg.gamma1
    solo2 = cfg.solo_power(2) * rx2 >= cfg.gamma2

    # D2 always treats x1 as noise
    joint2 = cfg.p2 * rx2 / (1 + cfg.p1 * rx2) >= cfg.gamma2

    if cfg.scheme is Scheme.SD:
        first_stage = cfg.p2 * rx1 / (1 + cfg.p1 * rx1) >= cfg.gamma2
        joint1 = first_stage & (cfg.p1 * rx1 >= cfg.gamma1)
    else:
        joint1 = cfg.p1 * rx1 / (1 + cfg.p2 * rx1) >= cfg.gamma1

    return DecodeEvents(solo1=solo1, solo2=solo2, joint1=joint1, joint2=joint2)


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Brute-force success profile with per-field standard errors."""

    profile: SuccessProfile
    stderr: Dict[str, float]


def monte_carlo_profile(cfg: SystemConfig, n_samples: int, rng: np.random.Generator) -> MonteCarloEstimate:
    """
    Estimate the success profile by drawing exponential channel powers and
    evaluating the decoding events directly.

    Standard errors are sqrt(p(1-p)/n).
    """
    if n_samples < 1:
        raise InvalidConfigError('n_samples', "must be positive")

    events = decode_events(
        cfg,
        rng.exponential(1.0, size=n_samples),
        rng.exponential(1.0, size=n_samples),
    )
    # joint events are subsets of the solo ones, so the estimate keeps the ordering
    profile = SuccessProfile(
        p_1_1=float(np.mean(events.solo1)),
        p_2_2=float(np.mean(events.solo2)),
        p_1_12=float(np.mean(events.joint1)),
        p_2_12=float(np.mean(events.joint2)),
    )
    stderr = {
        name: math.sqrt(p * (1 - p) / n_samples)
        for name, p in profile.to_dict().items()
    }
    return MonteCarloEstimate(profile=profile, stderr=stderr)
