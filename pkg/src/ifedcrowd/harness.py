"""Experiment harness: scenario config, seeded sampling, sweeps, file output.

Populations are sampled from a stream keyed by (seed, run_index) only, so a
cell that changes a distribution bound reuses the same underlying uniforms:
sweeping the gamma interval shifts every sampled gamma by exactly the
interval shift (common random numbers), and growing the worker count extends
the population without resampling earlier workers.  All mechanisms within a
cell-run share the sampled population, making baseline comparisons paired.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .equilibrium import (
    ClientEquilibriumReport,
    EquilibriumResult,
    GridSpec,
    ServerEquilibriumReport,
    compute_equilibrium,
    verify_client_equilibrium,
    verify_server_equilibrium,
)
from .errors import ConfigError
from .fedsim import RoundConfig, init_state, run_round
from .game_core import (
    ClientProfile,
    SystemParams,
    best_response,
    client_utility,
    feasible_rate_box,
    server_utility,
)
from .mechanisms import MechanismKind, select_rates

_POP_TAG = 11
_RATE_TAG = 13
_PARAM_FLOOR = 1e-9  # open-interval draws: parameters must stay strictly positive

SWEEP_AXES = ("gamma", "delta", "workers")

_CSV_COLUMNS = (
    "axis_value",
    "mechanism",
    "r1_mean",
    "r1_std",
    "r2_mean",
    "r2_std",
    "worker_utility_mean",
    "worker_utility_std",
    "server_utility_mean",
    "server_utility_std",
    "runs",
)


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment scenario; field names double as the config-file keys."""

    n: int = 10
    alpha: float = 80.0
    beta: float = 50.0
    comm_size: float = 0.1
    gamma: tuple[float, float] = (1.0, 5.0)
    delta: tuple[float, float] = (1.0, 2.0)
    tmin: tuple[float, float] = (1.0, 3.0)
    r2_cap: float = 100.0
    mechanism: MechanismKind = MechanismKind.IFEDCROWD
    runs: int = 10
    seed: int = 1
    rounds: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be at least 1, got {self.n}")
        if self.runs < 1:
            raise ConfigError(f"runs must be at least 1, got {self.runs}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be at least 1, got {self.rounds}")
        if not self.alpha > 0 or not self.beta > 0:
            raise ConfigError("alpha and beta must be positive")
        if self.comm_size < 0:
            raise ConfigError("comm_size must be non-negative")
        if not self.r2_cap > 0:
            raise ConfigError("r2_cap must be positive")
        for name in ("gamma", "delta", "tmin"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ConfigError(f"{name} bounds must satisfy lo <= hi, got ({lo}, {hi})")
            if lo < 0:
                raise ConfigError(f"{name} lower bound must be non-negative, got {lo}")

    @property
    def system_params(self) -> SystemParams:
        return SystemParams(
            alpha=self.alpha, beta=self.beta, comm_size=self.comm_size, n=self.n
        )


_INT_KEYS = {"n", "runs", "seed", "rounds"}
_FLOAT_KEYS = {
    "alpha",
    "beta",
    "comm_size",
    "gamma_lo",
    "gamma_hi",
    "delta_lo",
    "delta_hi",
    "tmin_lo",
    "tmin_hi",
    "r2_cap",
}


def parse_config(text: str) -> ScenarioConfig:
    """Parse flat ``key = value`` scenario text; unknown keys fail fast."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in _INT_KEYS:
            try:
                values[key] = int(val)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} expects an integer, got {val!r}")
        elif key in _FLOAT_KEYS:
            try:
                values[key] = float(val)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} expects a number, got {val!r}")
        elif key == "mechanism":
            values[key] = MechanismKind.from_token(val)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    kwargs: dict[str, object] = {}
    for name in ("gamma", "delta", "tmin"):
        lo_key, hi_key = f"{name}_lo", f"{name}_hi"
        if (lo_key in values) != (hi_key in values):
            raise ConfigError(f"{lo_key} and {hi_key} must be given together")
        if lo_key in values:
            kwargs[name] = (values.pop(lo_key), values.pop(hi_key))
    kwargs.update(values)
    return ScenarioConfig(**kwargs)  # type: ignore[arg-type]


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def sample_population(config: ScenarioConfig, run_index: int) -> list[ClientProfile]:
    """Draw n client profiles from the configured uniforms.

    The underlying standard uniforms depend only on (seed, run_index) and the
    worker index, never on the distribution bounds or on n, which is what
    makes shifted-interval and grown-population comparisons paired.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, run_index, _POP_TAG))
    )
    profiles = []
    for k in range(config.n):
        u = rng.random(3)
        gamma = config.gamma[0] + (config.gamma[1] - config.gamma[0]) * float(u[0])
        delta = config.delta[0] + (config.delta[1] - config.delta[0]) * float(u[1])
        t_min = config.tmin[0] + (config.tmin[1] - config.tmin[0]) * float(u[2])
        profiles.append(
            ClientProfile(
                id=k,
                gamma=max(gamma, _PARAM_FLOOR),
                delta=max(delta, _PARAM_FLOOR),
                t_min=max(t_min, _PARAM_FLOOR),
            )
        )
    return profiles


def rate_seed(config: ScenarioConfig, run_index: int) -> int:
    """Deterministic seed for the Random mechanism's per-run rate draw."""
    return int(
        np.random.SeedSequence((config.seed, run_index, _RATE_TAG)).generate_state(1)[0]
    )


@dataclass(frozen=True)
class SweepSpec:
    """A swept axis (which parameter varies, over which values) plus the base scenario."""

    axis: str
    values: tuple[float, ...]
    base: ScenarioConfig

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; expected {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep needs at least one axis value")

    @classmethod
    def for_axis(cls, axis: str, base: ScenarioConfig) -> "SweepSpec":
        """Default sweep for an axis, with the companion distributions it assumes."""
        if axis == "gamma":
            return cls(axis, tuple(range(1, 7)), replace(base, delta=(1.0, 2.0)))
        if axis == "delta":
            return cls(axis, tuple(range(0, 6)), replace(base, gamma=(1.0, 5.0)))
        if axis == "workers":
            return cls(
                axis,
                (5, 10, 15, 20, 25, 30),
                replace(base, gamma=(3.0, 5.0), delta=(2.0, 4.0)),
            )
        raise ConfigError(f"unknown sweep axis {axis!r}; expected {SWEEP_AXES}")

    def cell_config(self, value: float) -> ScenarioConfig:
        if self.axis == "gamma":
            return replace(self.base, gamma=(float(value), float(value) + 4.0))
        if self.axis == "delta":
            return replace(self.base, delta=(float(value), float(value) + 1.0))
        return replace(self.base, n=int(value))


@dataclass(frozen=True)
class CellRun:
    """Outcome of one mechanism on one sampled population."""

    run_index: int
    mechanism: MechanismKind
    r1: float
    r2: float
    worker_utility: float
    server_utility: float


def evaluate_cell(
    config: ScenarioConfig, mechanisms: list[MechanismKind]
) -> tuple[list[CellRun], list[str]]:
    """Run every (run, mechanism) pair of one sweep cell on shared populations."""
    outcomes: list[CellRun] = []
    failures: list[str] = []
    params = config.system_params
    for run in range(config.runs):
        try:
            population = sample_population(config, run)
            box = feasible_rate_box(population, config.r2_cap)
            seed = rate_seed(config, run)
            for mech in mechanisms:
                rates = select_rates(mech, population, params, box, rng_seed=seed)
                strategies = [best_response(p, rates).strategy for p in population]
                worker_util = float(
                    np.mean(
                        [
                            client_utility(p, rates, s, config.comm_size)
                            for p, s in zip(population, strategies)
                        ]
                    )
                )
                outcomes.append(
                    CellRun(
                        run_index=run,
                        mechanism=mech,
                        r1=rates.r1,
                        r2=rates.r2,
                        worker_utility=worker_util,
                        server_utility=server_utility(params, rates, strategies),
                    )
                )
        except Exception as exc:  # record and continue with the next run
            failures.append(f"run {run}: {exc}")
    return outcomes, failures


def _sig9(x: float) -> float:
    """Round to the 9 significant digits used by the output files."""
    return float(format(float(x), ".9g"))


@dataclass(frozen=True)
class SweepRow:
    """One emitted line: per-cell per-mechanism means and standard deviations."""

    axis_value: float
    mechanism: str
    r1_mean: float
    r1_std: float
    r2_mean: float
    r2_std: float
    worker_utility_mean: float
    worker_utility_std: float
    server_utility_mean: float
    server_utility_std: float
    runs: int


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]
    failures: tuple[str, ...] = ()


def _aggregate_rows(
    axis_value: float, outcomes: list[CellRun], mechanisms: list[MechanismKind]
) -> list[SweepRow]:
    rows = []
    for mech in mechanisms:
        runs = [o for o in outcomes if o.mechanism is mech]
        if not runs:
            continue

        def stats(values: list[float]) -> tuple[float, float]:
            arr = np.asarray(values)
            std = float(np.std(arr, ddof=1)) if len(arr) > 1 else 0.0
            return _sig9(float(np.mean(arr))), _sig9(std)

        r1_m, r1_s = stats([o.r1 for o in runs])
        r2_m, r2_s = stats([o.r2 for o in runs])
        wu_m, wu_s = stats([o.worker_utility for o in runs])
        su_m, su_s = stats([o.server_utility for o in runs])
        rows.append(
            SweepRow(
                axis_value=_sig9(axis_value),
                mechanism=mech.token,
                r1_mean=r1_m,
                r1_std=r1_s,
                r2_mean=r2_m,
                r2_std=r2_s,
                worker_utility_mean=wu_m,
                worker_utility_std=wu_s,
                server_utility_mean=su_m,
                server_utility_std=su_s,
                runs=len(runs),
            )
        )
    return rows


def run_sweep(
    spec: SweepSpec, mechanisms: list[MechanismKind] | None = None
) -> SweepTable:
    """Evaluate the whole sweep; cell failures are recorded, never fatal."""
    if mechanisms is None:
        mechanisms = [spec.base.mechanism]
    rows: list[SweepRow] = []
    failures: list[str] = []
    for value in spec.values:
        config = spec.cell_config(value)
        outcomes, cell_failures = evaluate_cell(config, mechanisms)
        rows.extend(_aggregate_rows(value, outcomes, mechanisms))
        failures.extend(f"{spec.axis}={value}: {msg}" for msg in cell_failures)
    return SweepTable(rows=tuple(rows), failures=tuple(failures))


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def table_to_csv(table: SweepTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for row in table.rows:
        writer.writerow(
            [
                _fmt(row.axis_value),
                row.mechanism,
                _fmt(row.r1_mean),
                _fmt(row.r1_std),
                _fmt(row.r2_mean),
                _fmt(row.r2_std),
                _fmt(row.worker_utility_mean),
                _fmt(row.worker_utility_std),
                _fmt(row.server_utility_mean),
                _fmt(row.server_utility_std),
                str(row.runs),
            ]
        )
    return buf.getvalue()


def table_to_json(table: SweepTable) -> str:
    rows = []
    for row in table.rows:
        rows.append(
            {
                "axis_value": row.axis_value,
                "mechanism": row.mechanism,
                "r1_mean": row.r1_mean,
                "r1_std": row.r1_std,
                "r2_mean": row.r2_mean,
                "r2_std": row.r2_std,
                "worker_utility_mean": row.worker_utility_mean,
                "worker_utility_std": row.worker_utility_std,
                "server_utility_mean": row.server_utility_mean,
                "server_utility_std": row.server_utility_std,
                "runs": row.runs,
            }
        )
    return json.dumps({"rows": rows}, indent=2) + "\n"


def emit(table: SweepTable, fmt: str, path: str) -> None:
    """Write the sweep table as CSV or JSON; unwritable paths raise OSError."""
    if fmt == "csv":
        payload = table_to_csv(table)
    elif fmt == "json":
        payload = table_to_json(table)
    else:
        raise ConfigError(f"unknown format {fmt!r}; expected csv or json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)


def _row_from_dict(d: dict) -> SweepRow:
    return SweepRow(
        axis_value=float(d["axis_value"]),
        mechanism=str(d["mechanism"]),
        r1_mean=float(d["r1_mean"]),
        r1_std=float(d["r1_std"]),
        r2_mean=float(d["r2_mean"]),
        r2_std=float(d["r2_std"]),
        worker_utility_mean=float(d["worker_utility_mean"]),
        worker_utility_std=float(d["worker_utility_std"]),
        server_utility_mean=float(d["server_utility_mean"]),
        server_utility_std=float(d["server_utility_std"]),
        runs=int(d["runs"]),
    )


def load_table(path: str, fmt: str) -> SweepTable:
    """Parse a previously emitted table back into memory."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        return SweepTable(rows=tuple(_row_from_dict(d) for d in reader))
    if fmt == "json":
        data = json.loads(text)
        return SweepTable(rows=tuple(_row_from_dict(d) for d in data["rows"]))
    raise ConfigError(f"unknown format {fmt!r}; expected csv or json")


def run_simulation(
    config: ScenarioConfig,
    rounds: int | None = None,
    round_config: RoundConfig | None = None,
):
    """Yield one RoundReport per simulated round for the configured scenario.

    The population and the reward rates are fixed for the whole run (Random
    draws its rates once per run, not per round); client models and datasets
    persist across rounds.
    """
    rounds = config.rounds if rounds is None else rounds
    round_config = round_config or RoundConfig(r2_cap=config.r2_cap)
    population = sample_population(config, run_index=0)
    params = config.system_params
    box = feasible_rate_box(population, config.r2_cap)
    rates = select_rates(
        config.mechanism, population, params, box, rng_seed=rate_seed(config, 0)
    )
    state = init_state(population, round_config, run_seed=config.seed)
    for index in range(rounds):
        yield run_round(
            population,
            params,
            config.mechanism,
            round_config,
            state,
            run_seed=config.seed,
            round_index=index,
            rates=rates,
        )


@dataclass(frozen=True)
class VerificationSummary:
    """Joint NE verification outcome for one scenario's run-0 population."""

    equilibrium: EquilibriumResult
    client_reports: tuple[ClientEquilibriumReport, ...]
    server_report: ServerEquilibriumReport
    ok: bool


def verify_scenario(
    config: ScenarioConfig,
    grid: GridSpec | None = None,
    grid_n: int = 50,
) -> VerificationSummary:
    """Solve the scenario's equilibrium and certify it client- and server-side."""
    population = sample_population(config, run_index=0)
    params = config.system_params
    box = feasible_rate_box(population, config.r2_cap)
    result = compute_equilibrium(population, params, box)
    client_reports = tuple(
        verify_client_equilibrium(p, result.rates, grid, comm_size=config.comm_size)
        for p in population
    )
    server_report = verify_server_equilibrium(population, params, result.rates, box, grid_n)
    ok = server_report.passed and all(r.passed for r in client_reports)
    return VerificationSummary(
        equilibrium=result,
        client_reports=client_reports,
        server_report=server_report,
        ok=ok,
    )
