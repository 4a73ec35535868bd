import math

import numpy as np
import pytest

from ifedcrowd import (
    ClientDataset,
    ClientProfile,
    ClientTask,
    CollectionState,
    DomainError,
    MechanismKind,
    ModelParams,
    RoundConfig,
    Strategy,
    SystemParams,
    TrainingError,
    aggregate,
    client_reward,
    collect_data,
    compute_equilibrium,
    feasible_rate_box,
    init_state,
    local_train,
    run_round,
    sample_population,
    server_utility,
)
from ifedcrowd.harness import ScenarioConfig


def make_task(dim=4, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return ClientTask(true_weights=rng.standard_normal(dim), noise_std=noise)


def make_dataset(n=100, dim=10, noise=0.1, seed=1):
    rng = np.random.default_rng(seed)
    w_true = rng.standard_normal(dim)
    x = rng.standard_normal((n, dim))
    y = x @ w_true + (noise * rng.standard_normal(n) if noise else 0.0)
    return ClientDataset(x, y, np.arange(float(n)))


# ------------------------------------------------------------------ datasets

def test_dataset_validation():
    with pytest.raises(DomainError):
        ClientDataset(np.zeros((3, 2)), np.zeros(3), np.array([2.0, 1.0, 3.0]))
    with pytest.raises(DomainError):
        ClientDataset(np.zeros((3, 2)), np.zeros(2), np.zeros(3))
    ds = ClientDataset(np.zeros((3, 2)), np.zeros(3), np.array([1.0, 1.0, 2.0]))
    assert ds.size == 3


def test_model_params_validation():
    with pytest.raises(DomainError):
        ModelParams(np.array([1.0, float("nan")]))
    with pytest.raises(DomainError):
        ModelParams(np.zeros((2, 2)))


# ---------------------------------------------------------------- collection

def test_collect_schedules_final_sample_for_target():
    state = CollectionState(last_generation_time=0.0, collection_interval=1.0)
    strategy = Strategy(accuracy=0.5, freshness=0.5, completion_time=10.0)
    res = collect_data(state, strategy, 10.0, make_task(), np.random.default_rng(0))
    assert res.state.last_generation_time == pytest.approx(8.0)
    assert res.achieved_freshness == pytest.approx(0.5)
    assert not res.shortfall


def test_collect_without_target_uses_last_cadence_sample():
    state = CollectionState(last_generation_time=0.0, collection_interval=1.0)
    strategy = Strategy(accuracy=0.5, freshness=0.0, completion_time=10.0)
    res = collect_data(state, strategy, 10.0, make_task(), np.random.default_rng(0))
    assert res.state.last_generation_time == pytest.approx(9.0)
    assert res.achieved_freshness == pytest.approx(1.0)
    assert not res.shortfall


def test_collect_latency_shortfall():
    state = CollectionState(last_generation_time=0.0, collection_interval=5.0)
    strategy = Strategy(accuracy=0.5, freshness=2.0, completion_time=1.0)
    res = collect_data(
        state, strategy, 1.0, make_task(), np.random.default_rng(0), latency=0.6
    )
    assert res.achieved_freshness == pytest.approx(1.0 / 0.6)
    assert res.shortfall


def test_collect_stale_target_reaches_before_round_start():
    # the scheduled sample may predate the round window: collection never stops
    state = CollectionState(last_generation_time=-math.inf, collection_interval=0.25)
    strategy = Strategy(accuracy=0.5, freshness=0.9, completion_time=1.0)
    res = collect_data(
        state, strategy, 1.0, make_task(), np.random.default_rng(0), round_start=0.0
    )
    assert res.achieved_freshness == pytest.approx(0.9)
    assert res.state.last_generation_time == pytest.approx(1.0 - 1.0 / 0.9)
    assert not res.shortfall


def test_collect_timestamps_sorted_and_state_advances():
    state = CollectionState(last_generation_time=0.0, collection_interval=0.5)
    strategy = Strategy(accuracy=0.5, freshness=0.25, completion_time=8.0)
    res = collect_data(state, strategy, 8.0, make_task(), np.random.default_rng(1))
    stamps = res.delta.timestamps
    assert np.all(np.diff(stamps) >= 0)
    assert stamps[-1] == pytest.approx(4.0)  # 8 - 1/0.25
    assert res.delta.size == stamps.shape[0]


# ------------------------------------------------------------------ training

def test_local_train_tiny_target_terminates_fast():
    ds = make_dataset()
    res = local_train(ModelParams(np.zeros(10)), ds, 0.001, iteration_scale=1.0)
    assert res.achieved_accuracy >= 0.001 - 1e-15
    assert res.iterations <= 3


def test_local_train_regression_fixture_well_conditioned():
    # frozen from a reference run: seed 1, d=10, N=100, noise 0.1, target 0.9
    ds = make_dataset(n=100, dim=10, noise=0.1, seed=1)
    res = local_train(ModelParams(np.zeros(10)), ds, 0.9, iteration_scale=2.0)
    assert res.achieved_accuracy == pytest.approx(0.9, abs=1e-12)
    assert res.iterations == 1


def ill_conditioned_dataset():
    rng = np.random.default_rng(2)
    base = rng.standard_normal((200, 1))
    x = base + 0.05 * rng.standard_normal((200, 12))
    w = rng.standard_normal(12)
    return ClientDataset(x, x @ w, np.arange(200.0))


def test_local_train_regression_fixture_ill_conditioned():
    # frozen from a reference run: correlated features need several steps
    ds = ill_conditioned_dataset()
    res = local_train(ModelParams(np.zeros(12)), ds, 0.999, iteration_scale=3.0)
    assert res.achieved_accuracy == pytest.approx(0.999, abs=1e-12)
    assert res.iterations == 7


def test_local_train_exact_line_search_descends():
    # run the same problem with increasing targets: iterations never decrease
    # and every target is landed exactly (monotone descent of the loss)
    ds = ill_conditioned_dataset()
    iters = []
    for target in (0.5, 0.9, 0.99, 0.999):
        res = local_train(ModelParams(np.zeros(12)), ds, target, iteration_scale=3.0)
        assert res.achieved_accuracy == pytest.approx(target, abs=1e-12)
        iters.append(res.iterations)
    assert iters == sorted(iters)


def test_local_train_cap_leaves_shortfall():
    ds = ill_conditioned_dataset()
    res = local_train(
        ModelParams(np.zeros(12)), ds, 0.999, iteration_scale=3.0, cap_scale=0.1
    )
    assert res.iterations == 1
    assert res.achieved_accuracy < 0.999


def test_local_train_divergence_raises_with_diagnostics():
    ds = ill_conditioned_dataset()
    with pytest.raises(TrainingError) as err:
        local_train(
            ModelParams(np.zeros(12)), ds, 0.9, iteration_scale=5.0, step_size=10.0
        )
    assert err.value.diagnostics["iteration"] == 10
    assert err.value.diagnostics["loss"] > err.value.diagnostics["initial_loss"]


def test_local_train_rejects_bad_inputs():
    ds = make_dataset()
    with pytest.raises(DomainError):
        local_train(ModelParams(np.zeros(10)), ds, 1.0, iteration_scale=1.0)
    with pytest.raises(DomainError):
        local_train(
            ModelParams(np.zeros(10)), ClientDataset.empty(10), 0.5, iteration_scale=1.0
        )


# --------------------------------------------------------------- aggregation

def test_aggregate_identical_models_idempotent():
    m = ModelParams(np.array([1.5, -2.0, 3.0]))
    out = aggregate([m, m, m], [0.2, 0.3, 0.5])
    assert out.weights == pytest.approx(m.weights, rel=1e-12)


def test_aggregate_symmetry():
    out = aggregate(
        [ModelParams(np.array([1.0, 0.0])), ModelParams(np.array([0.0, 1.0]))],
        [1.0, 1.0],
    )
    assert out.weights == pytest.approx([0.5, 0.5])


def test_aggregate_weighted_mean():
    models = [ModelParams(np.array([v])) for v in (2.0, 4.0, 6.0)]
    out = aggregate(models, [1.0, 2.0, 3.0])
    assert out.weights == pytest.approx([14.0 / 3.0], rel=1e-12)


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(0)
    models = [ModelParams(rng.standard_normal(5)) for _ in range(4)]
    weights = [1.0, 2.0, 3.0, 4.0]
    base = aggregate(models, weights)
    order = [2, 0, 3, 1]
    shuffled = aggregate([models[i] for i in order], [weights[i] for i in order])
    assert shuffled.weights == pytest.approx(base.weights, rel=1e-12)


def test_aggregate_validation():
    with pytest.raises(DomainError):
        aggregate([], [])
    with pytest.raises(DomainError):
        aggregate([ModelParams(np.zeros(2)), ModelParams(np.zeros(3))], [1.0, 1.0])
    with pytest.raises(DomainError):
        aggregate([ModelParams(np.zeros(2))], [0.0])
    with pytest.raises(DomainError):
        aggregate([ModelParams(np.zeros(2))], [-1.0])


# -------------------------------------------------------------------- rounds

def default_round_setup(seed=3, noise=0.0):
    config = ScenarioConfig(seed=seed, comm_size=0.0)
    population = sample_population(config, 0)
    params = config.system_params
    round_config = RoundConfig(noise_std=noise, r2_cap=config.r2_cap)
    state = init_state(population, round_config, run_seed=config.seed)
    return population, params, round_config, state


def test_run_round_matches_equilibrium_prediction():
    population, params, round_config, state = default_round_setup()
    box = feasible_rate_box(population, round_config.r2_cap)
    predicted = compute_equilibrium(population, params, box)
    report = run_round(
        population,
        params,
        MechanismKind.IFEDCROWD,
        round_config,
        state,
        run_seed=3,
        rates=predicted.rates,
    )
    assert report.n_failed == 0
    assert report.server_utility == pytest.approx(predicted.server_utility, abs=1e-6)
    for record in report.clients:
        assert record.achieved.accuracy == pytest.approx(
            record.target.accuracy, abs=1e-12
        )
        assert record.achieved.freshness == pytest.approx(
            record.target.freshness, abs=1e-12
        )
        assert record.achieved.completion_time == record.target.completion_time


def test_run_round_settlement_is_bitwise_consistent():
    population, params, round_config, state = default_round_setup(seed=5)
    report = run_round(
        population, params, MechanismKind.IFEDCROWD, round_config, state, run_seed=5
    )
    for record in report.clients:
        assert record.payout == client_reward(report.rates, record.achieved)


def test_run_round_report_recomputes_server_utility():
    population, params, round_config, state = default_round_setup(seed=7)
    report = run_round(
        population, params, MechanismKind.MAX, round_config, state, run_seed=7
    )
    achieved = [r.achieved for r in report.clients if not r.failed]
    recomputed = server_utility(
        SystemParams(params.alpha, params.beta, params.comm_size, len(achieved)),
        report.rates,
        achieved,
    )
    assert report.server_utility == pytest.approx(recomputed, rel=1e-12)
    assert report.wall_clock == max(r.achieved.completion_time for r in report.clients)


def test_run_round_deterministic():
    population, params, round_config, state_a = default_round_setup(seed=11, noise=0.1)
    _, _, _, state_b = default_round_setup(seed=11, noise=0.1)
    a = run_round(
        population, params, MechanismKind.IFEDCROWD, round_config, state_a, run_seed=11
    )
    b = run_round(
        population, params, MechanismKind.IFEDCROWD, round_config, state_b, run_seed=11
    )
    assert a == b


def test_run_round_rejects_empty_population():
    _, params, round_config, state = default_round_setup()
    with pytest.raises(DomainError):
        run_round([], params, MechanismKind.MAX, round_config, state, run_seed=1)


def test_run_round_cap_shortfall_reduces_payout():
    population, params, _, _ = default_round_setup(seed=13)
    starved = RoundConfig(noise_std=0.0, iteration_cap_scale=1e-6)
    state = init_state(population, starved, run_seed=13)
    report = run_round(
        population, params, MechanismKind.MAX, starved, state, run_seed=13
    )
    for record in report.clients:
        assert not record.failed
        target_payout = client_reward(report.rates, record.target)
        if record.accuracy_shortfall:
            assert record.payout < target_payout
            assert record.achieved.accuracy < record.target.accuracy
    assert any(r.accuracy_shortfall for r in report.clients)


def test_round_report_serializes_to_plain_json():
    import json

    population, params, round_config, state = default_round_setup(seed=17, noise=0.1)
    report = run_round(
        population, params, MechanismKind.RANDOM, round_config, state, run_seed=17
    )
    payload = json.dumps(report.to_dict())
    parsed = json.loads(payload)
    assert parsed["round_index"] == 0
    assert len(parsed["clients"]) == len(population)
    assert parsed["rates"]["r1"] == report.rates.r1


def test_multi_round_datasets_grow_and_clock_advances():
    population, params, round_config, state = default_round_setup(seed=19, noise=0.1)
    sizes = []
    clock = 0.0
    for index in range(3):
        report = run_round(
            population,
            params,
            MechanismKind.IFEDCROWD,
            round_config,
            state,
            run_seed=19,
            round_index=index,
        )
        sizes.append(sum(r.dataset_size for r in report.clients))
        assert state.clock == pytest.approx(clock + report.wall_clock)
        clock = state.clock
    assert sizes == sorted(sizes)
    for ds in state.datasets.values():
        assert np.all(np.diff(ds.timestamps) >= 0)


def test_completion_jitter_shifts_realized_times():
    population, params, _, _ = default_round_setup(seed=23)
    jittered = RoundConfig(noise_std=0.0, completion_jitter=0.5)
    state = init_state(population, jittered, run_seed=23)
    report = run_round(
        population, params, MechanismKind.IFEDCROWD, jittered, state, run_seed=23
    )
    for record, profile in zip(report.clients, population):
        assert record.achieved.completion_time == pytest.approx(profile.t_min + 0.5)
    assert report.wall_clock == pytest.approx(
        max(p.t_min for p in population) + 0.5
    )
