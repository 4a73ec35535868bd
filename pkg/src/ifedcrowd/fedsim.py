"""Discrete-time round simulation: collection, local training, aggregation, settlement.

Each round the publisher announces rates, every client picks its best
response, collects data so the freshest sample's age matches the freshness
target at upload time, trains its local model to the accuracy target, and
uploads.  Payouts are settled on the ACHIEVED strategy values, so a client
that falls short of its target is paid for what it delivered.

The synthetic task is per-client linear regression on unit-Gaussian features
with client-specific true weights; the accuracy level of a training run is
its relative loss reduction 1 - loss/loss_initial, which makes accuracy
values in (0, 1) literal quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, TrainingError
from .game_core import (
    ACCURACY_MAX,
    DEFAULT_R2_CAP,
    ClientProfile,
    RewardRates,
    Strategy,
    SystemParams,
    best_response,
    client_reward,
    feasible_rate_box,
    server_utility,
    total_cost,
)
from .mechanisms import MechanismKind, select_rates

_MIN_AGE = 1e-9  # freshness is undefined at zero age

# seed-stream tags so per-client generators never collide
_TASK_TAG = 7001
_COLLECT_TAG = 7002
_RATES_TAG = 7003


@dataclass
class ModelParams:
    """A fixed-length real weight vector; one shape shared by all models in a run."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1:
            raise DomainError("model weights must be a 1-D vector")
        if not np.all(np.isfinite(self.weights)):
            raise DomainError("model weights must be finite")

    @property
    def dim(self) -> int:
        return len(self.weights)


@dataclass
class ClientDataset:
    """Timestamped feature/label samples held locally by one client."""

    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if self.features.ndim != 2:
            raise DomainError("features must be a 2-D array")
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.timestamps.shape != (n,):
            raise DomainError("features, labels and timestamps must align")
        if n > 1 and np.any(np.diff(self.timestamps) < 0):
            raise DomainError("timestamps must be non-decreasing")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "ClientDataset":
        return cls(np.empty((0, dim)), np.empty(0), np.empty(0))

    def merged(self, other: "ClientDataset") -> "ClientDataset":
        return ClientDataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.timestamps, other.timestamps]),
        )


@dataclass(frozen=True)
class CollectionState:
    """Generation time of the newest sample plus the cadence between samples."""

    last_generation_time: float
    collection_interval: float

    def __post_init__(self):
        if not self.collection_interval > 0:
            raise DomainError("collection_interval must be positive")


@dataclass(frozen=True)
class ClientTask:
    """The client's private data distribution: y = w . x + noise."""

    true_weights: np.ndarray
    noise_std: float

    def sample(self, rng: np.random.Generator, times: np.ndarray) -> ClientDataset:
        k = len(times)
        dim = len(self.true_weights)
        x = rng.standard_normal((k, dim))
        noise = self.noise_std * rng.standard_normal(k) if self.noise_std > 0 else 0.0
        y = x @ self.true_weights + noise
        return ClientDataset(x, y, np.asarray(times, dtype=float))


@dataclass(frozen=True)
class CollectionResult:
    delta: ClientDataset
    state: CollectionState
    achieved_freshness: float
    shortfall: bool


def collect_data(
    state: CollectionState,
    strategy: Strategy,
    upload_time: float,
    task: ClientTask,
    rng: np.random.Generator,
    latency: float = 0.0,
    round_start: float | None = None,
) -> CollectionResult:
    """Generate this round's samples so upload-time freshness hits the target.

    Routine samples arrive every collection_interval; when the freshness
    target is positive the last sample is scheduled exactly 1/F before
    upload (collection runs continuously, so that moment may predate the
    round start).  The collection latency bounds how fresh a sample can be;
    a shortfall is flagged only when latency makes the target unreachable,
    i.e. the achieved freshness falls below the target.
    """
    if strategy.freshness < 0:
        raise DomainError("freshness target must be non-negative")
    if strategy.freshness > 0:
        age_target = max(1.0 / strategy.freshness, latency, _MIN_AGE)
    else:
        age_target = max(latency, _MIN_AGE)
    final_time = upload_time - age_target

    origin = round_start
    if origin is None:
        origin = state.last_generation_time if math.isfinite(state.last_generation_time) else final_time
    cadence_start = max(state.last_generation_time, origin)

    if (final_time - cadence_start) / state.collection_interval > 1e6:
        raise DomainError(
            "collection_interval is too small for the round window "
            f"({state.collection_interval} over {final_time - cadence_start:.3g})"
        )
    times = []
    t = cadence_start + state.collection_interval
    while t <= final_time + 1e-12:
        times.append(t)
        t += state.collection_interval
    if (
        strategy.freshness > 0
        and final_time > state.last_generation_time
        and (not times or times[-1] < final_time - 1e-12)
    ):
        times.append(final_time)

    last = float(times[-1]) if times else state.last_generation_time
    if math.isfinite(last):
        achieved = 1.0 / max(upload_time - last, _MIN_AGE)
    else:
        achieved = 0.0  # no samples collected yet
    shortfall = strategy.freshness > 0 and achieved < strategy.freshness * (1 - 1e-12)
    return CollectionResult(
        delta=task.sample(rng, np.array(times)),
        state=CollectionState(last, state.collection_interval),
        achieved_freshness=float(achieved),
        shortfall=shortfall,
    )


@dataclass(frozen=True)
class TrainResult:
    model: ModelParams
    achieved_accuracy: float
    iterations: int


def local_train(
    model: ModelParams,
    dataset: ClientDataset,
    target_accuracy: float,
    iteration_scale: float,
    cap_scale: float = 50.0,
    step_size: float | None = None,
) -> TrainResult:
    """Gradient descent on the client's squared loss until the accuracy target.

    Accuracy is the relative loss reduction 1 - loss/loss_initial.  Steps use
    exact line search by default (guaranteed descent on the quadratic loss);
    the step that would cross the target is shortened so the run lands on the
    target exactly.  The iteration budget is
    ceil(iteration_scale * (1 + A) * ln(1 + A) * cap_scale); hitting it
    leaves the achieved accuracy below target, which the caller records.
    """
    if not (0.0 < target_accuracy < 1.0):
        raise DomainError(f"target accuracy must lie in (0, 1), got {target_accuracy}")
    if dataset.size == 0:
        raise DomainError("cannot train on an empty dataset")

    x = dataset.features
    y = dataset.labels
    n = dataset.size
    w = model.weights.copy()

    def loss_of(res: np.ndarray) -> float:
        return float(res @ res) / n

    residual = x @ w - y
    loss_init = loss_of(residual)
    if loss_init <= 0.0:
        # already interpolating: nothing left to reduce
        return TrainResult(ModelParams(w), 1.0 - 1e-15, 0)
    target_loss = (1.0 - target_accuracy) * loss_init

    cap = max(
        1,
        math.ceil(
            iteration_scale
            * (1.0 + target_accuracy)
            * math.log1p(target_accuracy)
            * cap_scale
        ),
    )
    loss = loss_init
    increases = 0
    iterations = 0
    for _ in range(cap):
        grad = (2.0 / n) * (x.T @ residual)
        xg = x @ grad
        denom = float(xg @ xg)
        if denom <= 0.0:
            break  # stationary: gradient in the null space
        landed = False
        if step_size is None:
            eta = (n / 2.0) * float(grad @ grad) / denom
            # shorten the final step to land exactly on the target loss
            full_res = residual - eta * xg
            if loss_of(full_res) < target_loss:
                a_q = denom / n
                b_q = -2.0 * float(xg @ residual) / n
                c_q = loss - target_loss
                disc = max(b_q * b_q - 4.0 * a_q * c_q, 0.0)
                eta = (-b_q - math.sqrt(disc)) / (2.0 * a_q)
                landed = True
        else:
            eta = step_size
        w = w - eta * grad
        residual = residual - eta * xg
        new_loss = loss_of(residual)
        iterations += 1
        if new_loss > loss:
            increases += 1
            if increases >= 10:
                raise TrainingError(
                    "training diverged: loss increased for 10 consecutive steps",
                    diagnostics={
                        "iteration": iterations,
                        "loss": new_loss,
                        "initial_loss": loss_init,
                        "step_size": eta,
                    },
                )
        else:
            increases = 0
        loss = new_loss
        if landed:
            loss = target_loss  # shortened step lands on the target by construction
            break
        if 1.0 - loss / loss_init >= target_accuracy:
            break
    achieved = min(max(1.0 - loss / loss_init, 0.0), ACCURACY_MAX)
    return TrainResult(ModelParams(w), achieved, iterations)


def aggregate(
    client_models: list[ModelParams], weights: list[float] | None = None
) -> ModelParams:
    """Weighted arithmetic mean of client models, weights normalized to sum 1."""
    if not client_models:
        raise DomainError("aggregate needs at least one model")
    dims = {m.dim for m in client_models}
    if len(dims) != 1:
        raise DomainError(f"model dimension mismatch: {sorted(dims)}")
    if weights is None:
        weights = [1.0] * len(client_models)
    if len(weights) != len(client_models):
        raise DomainError("one weight per model required")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise DomainError("weights must be non-negative")
    total = float(np.sum(w))
    if not total > 0:
        raise DomainError("weights must sum to a positive value")
    stacked = np.stack([m.weights for m in client_models])
    return ModelParams((w / total) @ stacked)


@dataclass(frozen=True)
class RoundConfig:
    """Knobs for the simulated training rounds."""

    dim: int = 8
    collection_interval: float = 0.25
    collection_latency: float = 0.0
    noise_std: float = 0.1
    completion_jitter: float = 0.0
    iteration_cap_scale: float = 50.0
    r2_cap: float = DEFAULT_R2_CAP


@dataclass
class SimState:
    """Mutable cross-round state owned by the simulation driver."""

    server_model: ModelParams
    datasets: dict[int, ClientDataset]
    collection: dict[int, CollectionState]
    tasks: dict[int, ClientTask]
    clock: float = 0.0


def init_state(
    population: list[ClientProfile], config: RoundConfig, run_seed: int
) -> SimState:
    """Fresh simulation state; client tasks are derived from (run_seed, client id)."""
    tasks = {}
    for p in population:
        rng = np.random.default_rng(np.random.SeedSequence((run_seed, p.id, _TASK_TAG)))
        tasks[p.id] = ClientTask(
            true_weights=rng.standard_normal(config.dim), noise_std=config.noise_std
        )
    return SimState(
        server_model=ModelParams(np.zeros(config.dim)),
        datasets={p.id: ClientDataset.empty(config.dim) for p in population},
        collection={
            # no samples exist yet; clients may schedule their first sample
            # before the first round starts (collection runs continuously)
            p.id: CollectionState(-math.inf, config.collection_interval)
            for p in population
        },
        tasks=tasks,
        clock=0.0,
    )


@dataclass(frozen=True)
class ClientRoundRecord:
    """Everything one client did and earned in one round."""

    client_id: int
    target: Strategy
    achieved: Strategy | None
    payout: float
    utility: float
    accuracy_clamped: bool
    freshness_clamped: bool
    accuracy_shortfall: bool
    freshness_shortfall: bool
    iterations: int
    dataset_size: int
    failed: bool
    error: str | None = None

    def to_dict(self) -> dict:
        def strat(s: Strategy | None):
            if s is None:
                return None
            return {
                "accuracy": s.accuracy,
                "freshness": s.freshness,
                "completion_time": s.completion_time,
            }

        return {
            "client_id": self.client_id,
            "target": strat(self.target),
            "achieved": strat(self.achieved),
            "payout": self.payout,
            "utility": self.utility,
            "accuracy_clamped": self.accuracy_clamped,
            "freshness_clamped": self.freshness_clamped,
            "accuracy_shortfall": self.accuracy_shortfall,
            "freshness_shortfall": self.freshness_shortfall,
            "iterations": self.iterations,
            "dataset_size": self.dataset_size,
            "failed": self.failed,
            "error": self.error,
        }


@dataclass(frozen=True)
class RoundReport:
    """Immutable record of one completed round."""

    round_index: int
    rates: RewardRates
    clients: tuple[ClientRoundRecord, ...]
    server_model: tuple[float, ...]
    server_utility: float
    wall_clock: float
    n_failed: int

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "rates": {"r1": self.rates.r1, "r2": self.rates.r2},
            "clients": [c.to_dict() for c in self.clients],
            "server_model": list(self.server_model),
            "server_utility": self.server_utility,
            "wall_clock": self.wall_clock,
            "n_failed": self.n_failed,
        }


def run_round(
    population: list[ClientProfile],
    params: SystemParams,
    kind: MechanismKind,
    config: RoundConfig,
    state: SimState,
    run_seed: int,
    round_index: int = 0,
    rates: RewardRates | None = None,
) -> RoundReport:
    """Execute one full round: announce rates, collect, train, aggregate, settle.

    Rates are recomputed per the configured mechanism unless passed in (the
    multi-round driver selects them once per run).  A client whose training
    fails is recorded and excluded; aggregation weights renormalize over the
    survivors.  Payouts always evaluate the reward formula on the achieved
    strategy, bit-for-bit the same computation the game module exposes.
    """
    if not population:
        raise DomainError("run_round needs a non-empty population")
    if rates is None:
        box = feasible_rate_box(population, config.r2_cap)
        seed = int(
            np.random.SeedSequence((run_seed, _RATES_TAG)).generate_state(1)[0]
        )
        rates = select_rates(kind, population, params, box, rng_seed=seed)

    round_start = state.clock
    records: list[ClientRoundRecord] = []
    surviving_models: list[ModelParams] = []
    surviving_weights: list[float] = []
    achieved_strategies: list[Strategy] = []
    wall_clock = 0.0

    for profile in population:
        response = best_response(profile, rates)
        target = response.strategy
        t_real = profile.t_min + config.completion_jitter
        upload_time = round_start + t_real
        wall_clock = max(wall_clock, t_real)

        rng = np.random.default_rng(
            np.random.SeedSequence((run_seed, round_index, profile.id, _COLLECT_TAG))
        )
        coll = collect_data(
            state.collection[profile.id],
            target,
            upload_time,
            state.tasks[profile.id],
            rng,
            latency=config.collection_latency,
            round_start=round_start,
        )
        state.collection[profile.id] = coll.state
        dataset = state.datasets[profile.id].merged(coll.delta)
        state.datasets[profile.id] = dataset

        try:
            trained = local_train(
                state.server_model,
                dataset,
                target.accuracy,
                iteration_scale=profile.gamma,
                cap_scale=config.iteration_cap_scale,
            )
        except (TrainingError, DomainError) as exc:
            records.append(
                ClientRoundRecord(
                    client_id=profile.id,
                    target=target,
                    achieved=None,
                    payout=0.0,
                    utility=0.0,
                    accuracy_clamped=response.accuracy_clamped,
                    freshness_clamped=response.freshness_clamped,
                    accuracy_shortfall=True,
                    freshness_shortfall=coll.shortfall,
                    iterations=0,
                    dataset_size=dataset.size,
                    failed=True,
                    error=str(exc),
                )
            )
            continue

        achieved = Strategy(
            accuracy=trained.achieved_accuracy,
            freshness=coll.achieved_freshness,
            completion_time=t_real,
        )
        payout = client_reward(rates, achieved)
        utility = payout - total_cost(profile, achieved, params.comm_size).total
        records.append(
            ClientRoundRecord(
                client_id=profile.id,
                target=target,
                achieved=achieved,
                payout=payout,
                utility=utility,
                accuracy_clamped=response.accuracy_clamped,
                freshness_clamped=response.freshness_clamped,
                accuracy_shortfall=achieved.accuracy < target.accuracy * (1 - 1e-12),
                freshness_shortfall=coll.shortfall,
                iterations=trained.iterations,
                dataset_size=dataset.size,
                failed=False,
            )
        )
        surviving_models.append(trained.model)
        surviving_weights.append(float(dataset.size))
        achieved_strategies.append(achieved)

    n_failed = len(population) - len(achieved_strategies)
    if surviving_models:
        state.server_model = aggregate(surviving_models, surviving_weights)
        realized_params = SystemParams(
            alpha=params.alpha,
            beta=params.beta,
            comm_size=params.comm_size,
            n=len(achieved_strategies),
        )
        realized_utility = server_utility(realized_params, rates, achieved_strategies)
    else:
        realized_utility = float("nan")
    state.clock = round_start + wall_clock

    return RoundReport(
        round_index=round_index,
        rates=rates,
        clients=tuple(records),
        server_model=tuple(float(v) for v in state.server_model.weights),
        server_utility=realized_utility,
        wall_clock=wall_clock,
        n_failed=n_failed,
    )
