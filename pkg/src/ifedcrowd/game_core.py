"""Core game quantities: rewards, costs, utilities and client best responses.

Everything in this module is a pure function of its inputs.  Clients choose a
training strategy (accuracy level, data freshness, completion time); the task
publisher announces two reward rates, pays ``r1 * A/T + r2 * F`` per client,
and values the aggregate outcome through ``alpha`` (accuracy) and ``beta``
(freshness).  All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, DomainError

# Clamp bounds for client responses.  Closed-form best responses can leave
# (0, 1) whenever a uniform rate sits outside a client's own feasible range;
# clamping keeps every population solvable.  ACCURACY_MIN is positive so that
# accuracy-dependent simulation terms never degenerate; freshness 0 is legal
# (the collection cost floor is exp(0) = 1).
ACCURACY_MIN = 0.001
ACCURACY_MAX = 0.999
FRESHNESS_MAX = 10.0

# Default cap closing the r2 search interval from above; the marginal value of
# freshness is eventually dominated by the payment term, so it rarely binds.
DEFAULT_R2_CAP = 100.0

# Upper feasible-range factor for r1: accuracy responses stay below 1 only
# while r1 < (1 + ln 2) * gamma * t_min.
R1_RANGE_FACTOR = 1.0 + math.log(2.0)


@dataclass(frozen=True)
class ClientProfile:
    """One worker's private cost parameters.

    gamma scales the computation cost per unit of training effort, delta
    scales the data-collection cost per unit of freshness, and t_min is the
    shortest completion time the worker can reach.
    """

    id: int
    gamma: float
    delta: float
    t_min: float

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not (self.t_min > 0 and math.isfinite(self.t_min)):
            raise DomainError(f"t_min must be positive, got {self.t_min}")


@dataclass(frozen=True)
class RewardRates:
    """The publisher's decision variables: accuracy-per-time and freshness rates."""

    r1: float
    r2: float

    def __post_init__(self):
        if not (self.r1 > 0 and math.isfinite(self.r1)):
            raise DomainError(f"r1 must be positive, got {self.r1}")
        if not (self.r2 > 0 and math.isfinite(self.r2)):
            raise DomainError(f"r2 must be positive, got {self.r2}")


@dataclass(frozen=True)
class Strategy:
    """A client's chosen (accuracy level, data freshness, completion time)."""

    accuracy: float
    freshness: float
    completion_time: float

    def __post_init__(self):
        if not (0.0 <= self.accuracy < 1.0):
            raise DomainError(f"accuracy must lie in [0, 1), got {self.accuracy}")
        if not (self.freshness >= 0.0 and math.isfinite(self.freshness)):
            raise DomainError(f"freshness must be non-negative, got {self.freshness}")
        if not (self.completion_time > 0.0 and math.isfinite(self.completion_time)):
            raise DomainError(
                f"completion_time must be positive, got {self.completion_time}"
            )


@dataclass(frozen=True)
class SystemParams:
    """Publisher-side constants: valuations, fixed communication size, worker count."""

    alpha: float
    beta: float
    comm_size: float
    n: int

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive, got {self.beta}")
        if not (self.comm_size >= 0 and math.isfinite(self.comm_size)):
            raise DomainError(f"comm_size must be non-negative, got {self.comm_size}")
        if not (isinstance(self.n, int) and self.n >= 1):
            raise DomainError(f"n must be a positive integer, got {self.n}")


@dataclass(frozen=True)
class CostBreakdown:
    """Per-client cost split into calculation, collection and communication parts."""

    calculation: float
    collection: float
    communication: float
    total: float


@dataclass(frozen=True)
class RateBox:
    """Feasible reward-rate rectangle plus the per-client r1 intervals it covers.

    The population box is the union hull of the per-client r1 ranges (min of
    lower bounds, max of upper bounds) so the search region never collapses
    for heterogeneous populations; r2 is bounded below by the largest delta
    so every freshness response stays non-negative.
    """

    r1_lo: float
    r1_hi: float
    r2_lo: float
    r2_hi: float
    per_client_r1: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class BestResponse:
    """A clamped best-response strategy plus flags telling whether clamping occurred."""

    strategy: Strategy
    accuracy_clamped: bool
    freshness_clamped: bool

    @property
    def clamped(self) -> bool:
        return self.accuracy_clamped or self.freshness_clamped


def freshness(now: float, generated_at: float) -> float:
    """Freshness of a sample generated at ``generated_at`` observed at ``now``.

    Defined as the reciprocal of the sample age; undefined at zero or
    negative age.
    """
    if not now > generated_at:
        raise DomainError(
            f"freshness undefined: now={now} must exceed generated_at={generated_at}"
        )
    return 1.0 / (now - generated_at)


def calculation_cost(gamma: float, accuracy: float) -> float:
    """Computation cost gamma * (1 + A) * ln(1 + A) of training to accuracy A."""
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if not (0.0 <= accuracy < 1.0):
        raise DomainError(f"accuracy must lie in [0, 1), got {accuracy}")
    return gamma * (1.0 + accuracy) * math.log1p(accuracy)


def collection_cost(delta: float, freshness_level: float) -> float:
    """Data-collection cost exp(delta * F); equals 1 at zero freshness."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if freshness_level < 0:
        raise DomainError(f"freshness must be non-negative, got {freshness_level}")
    return math.exp(delta * freshness_level)


def total_cost(profile: ClientProfile, strategy: Strategy, comm_size: float) -> CostBreakdown:
    """Full client cost: calculation + collection + fixed communication size."""
    if comm_size < 0:
        raise DomainError(f"comm_size must be non-negative, got {comm_size}")
    calc = calculation_cost(profile.gamma, strategy.accuracy)
    coll = collection_cost(profile.delta, strategy.freshness)
    return CostBreakdown(
        calculation=calc,
        collection=coll,
        communication=comm_size,
        total=calc + coll + comm_size,
    )


def client_reward(rates: RewardRates, strategy: Strategy) -> float:
    """Payout r1 * A/T + r2 * F; also used verbatim for round settlement."""
    if not strategy.completion_time > 0:
        raise DomainError("completion_time must be positive")
    return (
        rates.r1 * strategy.accuracy / strategy.completion_time
        + rates.r2 * strategy.freshness
    )


def client_utility(
    profile: ClientProfile,
    rates: RewardRates,
    strategy: Strategy,
    comm_size: float,
) -> float:
    """Client profit: reward minus total cost.  May be negative."""
    return client_reward(rates, strategy) - total_cost(profile, strategy, comm_size).total


def client_utility_gradient(
    profile: ClientProfile, rates: RewardRates, strategy: Strategy
) -> tuple[float, float, float]:
    """Partial derivatives of the client utility in (accuracy, freshness, time).

    Used by stationarity checks: at an interior best response the first two
    components vanish and the third is strictly negative for positive accuracy.
    """
    d_acc = (
        -profile.gamma * math.log1p(strategy.accuracy)
        - profile.gamma
        + rates.r1 / strategy.completion_time
    )
    d_fresh = -profile.delta * math.exp(profile.delta * strategy.freshness) + rates.r2
    d_time = -rates.r1 * strategy.accuracy / strategy.completion_time**2
    return d_acc, d_fresh, d_time


def server_utility(
    params: SystemParams, rates: RewardRates, strategies: list[Strategy]
) -> float:
    """Publisher profit for a strategy profile.

    Averaged valuation of accuracy and freshness, minus the round wall clock
    (the slowest completion time), minus the summed payouts.  The benefit term
    is averaged over n while the payment term is summed; that asymmetry is
    part of the model definition and is preserved as-is.
    """
    if len(strategies) == 0:
        raise DomainError("server_utility needs at least one strategy")
    if len(strategies) != params.n:
        raise DomainError(
            f"expected {params.n} strategies, got {len(strategies)}"
        )
    benefit = sum(
        params.alpha * s.accuracy + params.beta * s.freshness for s in strategies
    ) / params.n
    wall_clock = max(s.completion_time for s in strategies)
    payments = sum(client_reward(rates, s) for s in strategies)
    return benefit - wall_clock - payments


def accuracy_response(profile: ClientProfile, r1: float) -> float:
    """Unclamped accuracy best response exp(r1 / (gamma * t_min) - 1) - 1.

    May leave [0, 1) when r1 sits outside the client's feasible r1 range.
    """
    return math.exp(r1 / (profile.gamma * profile.t_min) - 1.0) - 1.0


def freshness_response(profile: ClientProfile, r2: float) -> float:
    """Unclamped freshness best response (1/delta) * ln(r2 / delta).

    Negative when r2 < delta.
    """
    return math.log(r2 / profile.delta) / profile.delta


def best_response(profile: ClientProfile, rates: RewardRates) -> BestResponse:
    """Closed-form client best response, clamped into the feasible strategy set.

    Completion time is always t_min (utility strictly decreases in time for
    positive accuracy).  Accuracy is clamped into [ACCURACY_MIN, ACCURACY_MAX]
    and freshness into [0, FRESHNESS_MAX]; the flags report whether a clamp
    was applied.  Because the utility is separately concave in accuracy and
    freshness, the clamped point remains optimal over the clamped rectangle.
    """
    a_raw = accuracy_response(profile, rates.r1)
    f_raw = freshness_response(profile, rates.r2)
    a = min(max(a_raw, ACCURACY_MIN), ACCURACY_MAX)
    f = min(max(f_raw, 0.0), FRESHNESS_MAX)
    return BestResponse(
        strategy=Strategy(accuracy=a, freshness=f, completion_time=profile.t_min),
        accuracy_clamped=(a != a_raw),
        freshness_clamped=(f != f_raw),
    )


def client_r1_range(profile: ClientProfile) -> tuple[float, float]:
    """Open interval of r1 values whose unclamped accuracy response lies in (0, 1)."""
    lo = profile.gamma * profile.t_min
    return lo, R1_RANGE_FACTOR * lo


def feasible_rate_box(
    profiles: list[ClientProfile], r2_cap: float = DEFAULT_R2_CAP
) -> RateBox:
    """Population rate box derived from the per-client feasible ranges.

    r1 spans the union hull of the client intervals; r2 runs from the largest
    delta (below which some freshness response would go negative) up to the
    configured cap.
    """
    if not profiles:
        raise DomainError("feasible_rate_box needs a non-empty population")
    per_client = tuple(client_r1_range(p) for p in profiles)
    r1_lo = min(lo for lo, _ in per_client)
    r1_hi = max(hi for _, hi in per_client)
    r2_lo = max(p.delta for p in profiles)
    if not r2_cap > r2_lo:
        raise ConfigError(
            f"r2_cap={r2_cap} must exceed the largest delta {r2_lo}: empty r2 interval"
        )
    return RateBox(
        r1_lo=r1_lo,
        r1_hi=r1_hi,
        r2_lo=r2_lo,
        r2_hi=r2_cap,
        per_client_r1=per_client,
    )
