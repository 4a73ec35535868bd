"""Stackelberg reward-rate equilibria and a federated crowdsourcing simulator.

A task publisher announces two reward rates (accuracy-per-time and data
freshness); rational workers best-respond with a training strategy.  This
package provides the closed-form best responses, the publisher's optimal
rates with Nash-equilibrium certification, the Random/MAX baseline policies,
a discrete-time training simulation with freshness dynamics, and a seeded
experiment harness with CSV/JSON output.
"""

from .equilibrium import (
    ClientEquilibriumReport,
    EquilibriumResult,
    GridSpec,
    ServerEquilibriumReport,
    compute_equilibrium,
    d2u_dr1,
    d2u_dr2,
    du_dr1,
    du_dr2,
    leader_objective,
    solve_r1,
    solve_r2,
    verify_client_equilibrium,
    verify_server_equilibrium,
)
from .errors import (
    ConfigError,
    DomainError,
    IFedCrowdError,
    NumericError,
    TrainingError,
)
from .fedsim import (
    ClientDataset,
    ClientRoundRecord,
    ClientTask,
    CollectionResult,
    CollectionState,
    ModelParams,
    RoundConfig,
    RoundReport,
    SimState,
    TrainResult,
    aggregate,
    collect_data,
    init_state,
    local_train,
    run_round,
)
from .game_core import (
    ACCURACY_MAX,
    ACCURACY_MIN,
    DEFAULT_R2_CAP,
    FRESHNESS_MAX,
    BestResponse,
    ClientProfile,
    CostBreakdown,
    RateBox,
    RewardRates,
    Strategy,
    SystemParams,
    best_response,
    calculation_cost,
    client_reward,
    client_utility,
    client_utility_gradient,
    collection_cost,
    feasible_rate_box,
    freshness,
    server_utility,
    total_cost,
)
from .harness import (
    ScenarioConfig,
    SweepSpec,
    SweepTable,
    emit,
    evaluate_cell,
    load_config,
    load_table,
    parse_config,
    rate_seed,
    run_simulation,
    run_sweep,
    sample_population,
    verify_scenario,
)
from .mechanisms import MechanismKind, select_rates

__version__ = "0.1.0"

__all__ = [
    "ACCURACY_MAX",
    "ACCURACY_MIN",
    "BestResponse",
    "ClientDataset",
    "ClientEquilibriumReport",
    "ClientProfile",
    "ClientRoundRecord",
    "ClientTask",
    "CollectionResult",
    "CollectionState",
    "ConfigError",
    "CostBreakdown",
    "DEFAULT_R2_CAP",
    "DomainError",
    "EquilibriumResult",
    "FRESHNESS_MAX",
    "GridSpec",
    "IFedCrowdError",
    "MechanismKind",
    "ModelParams",
    "NumericError",
    "RateBox",
    "RewardRates",
    "RoundConfig",
    "RoundReport",
    "ScenarioConfig",
    "ServerEquilibriumReport",
    "SimState",
    "Strategy",
    "SweepSpec",
    "SweepTable",
    "SystemParams",
    "TrainResult",
    "TrainingError",
    "aggregate",
    "best_response",
    "calculation_cost",
    "client_reward",
    "client_utility",
    "client_utility_gradient",
    "collect_data",
    "collection_cost",
    "compute_equilibrium",
    "d2u_dr1",
    "d2u_dr2",
    "du_dr1",
    "du_dr2",
    "emit",
    "evaluate_cell",
    "feasible_rate_box",
    "freshness",
    "init_state",
    "leader_objective",
    "load_config",
    "load_table",
    "local_train",
    "parse_config",
    "rate_seed",
    "run_round",
    "run_simulation",
    "run_sweep",
    "sample_population",
    "select_rates",
    "server_utility",
    "solve_r1",
    "solve_r2",
    "total_cost",
    "verify_client_equilibrium",
    "verify_scenario",
    "verify_server_equilibrium",
]
