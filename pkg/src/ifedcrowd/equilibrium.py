"""Leader-side optimization: analytic derivatives, rate solvers, NE verification.

The publisher's rate-substituted utility separates into an r1 part (driven by
accuracy responses) and an r2 part (driven by freshness responses), so the
two rates are solved as independent one-dimensional problems.  The analytic
derivatives below use the unclamped closed-form responses; the final chosen
rates are additionally certified against the realized objective, i.e. the
server utility evaluated at the clamped best responses the clients actually
play.  Without that certification a rate picked purely by the first-order
condition can be beaten by other in-box rates once clamping binds, which
would break mechanism dominance for heterogeneous populations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NumericError
from .game_core import (
    ACCURACY_MAX,
    ACCURACY_MIN,
    FRESHNESS_MAX,
    ClientProfile,
    RateBox,
    RewardRates,
    Strategy,
    SystemParams,
    best_response,
    client_utility,
    server_utility,
)

FOC_FTOL = 1e-8      # |derivative| below this counts as a stationary point
FOC_XTOL = 1e-10     # bracket width stopping criterion
VERIFY_TOL = 1e-9    # violation threshold for equilibrium certification
_FOC_SCAN = 512      # sign-change scan resolution for the derivative
_CERT_SCAN = 4097    # realized-objective scan resolution per axis


def _population_arrays(profiles: list[ClientProfile]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    gamma = np.array([p.gamma for p in profiles], dtype=float)
    delta = np.array([p.delta for p in profiles], dtype=float)
    t_min = np.array([p.t_min for p in profiles], dtype=float)
    return gamma, delta, t_min


def du_dr1(profiles: list[ClientProfile], params: SystemParams, r1: float) -> float:
    """First derivative in r1 of the rate-substituted server utility.

    Uses the unclamped accuracy responses A_k(r1) = exp(r1/(gamma_k t_k) - 1) - 1
    with dA_k/dr1 = exp(r1/(gamma_k t_k) - 1) / (gamma_k t_k).
    """
    gamma, _, t = _population_arrays(profiles)
    gt = gamma * t
    with np.errstate(over="ignore", invalid="ignore"):
        x = np.exp(r1 / gt - 1.0)
        da = x / gt
        a = x - 1.0
        return float(np.sum(params.alpha * da) / params.n - np.sum((r1 * da + a) / t))


def du_dr2(profiles: list[ClientProfile], params: SystemParams, r2: float) -> float:
    """First derivative in r2: sum_k [beta/(n delta_k r2) - 1/delta_k - ln(r2/delta_k)/delta_k]."""
    _, delta, _ = _population_arrays(profiles)
    return float(
        np.sum(
            params.beta / (params.n * delta * r2)
            - 1.0 / delta
            - np.log(r2 / delta) / delta
        )
    )


def d2u_dr1(profiles: list[ClientProfile], params: SystemParams, r1: float) -> float:
    """Second derivative in r1; strictly negative for all positive rates."""
    gamma, _, t = _population_arrays(profiles)
    n = params.n
    num = n * r1 + params.alpha * t + 2.0 * gamma * n * t
    den = n * gamma**2 * t**3
    return float(-np.sum(num / den * np.exp(r1 / (gamma * t) - 1.0)))


def d2u_dr2(profiles: list[ClientProfile], params: SystemParams, r2: float) -> float:
    """Second derivative in r2: sum_k [-1/(delta_k r2) - beta/(n delta_k r2^2)] < 0."""
    _, delta, _ = _population_arrays(profiles)
    return float(
        np.sum(-1.0 / (delta * r2) - params.beta / (params.n * delta * r2**2))
    )


def leader_objective(
    profiles: list[ClientProfile], params: SystemParams, r1: float, r2: float
) -> float:
    """Server utility with the unclamped closed-form responses substituted in.

    This is the smooth objective the first-order conditions differentiate;
    accuracy terms may leave [0, 1) outside the per-client feasible ranges.
    """
    gamma, delta, t = _population_arrays(profiles)
    a = np.exp(r1 / (gamma * t) - 1.0) - 1.0
    f = np.log(r2 / delta) / delta
    benefit = float(np.sum(params.alpha * a + params.beta * f)) / params.n
    payments = float(np.sum(r1 * a / t + r2 * f))
    return benefit - float(np.max(t)) - payments


def _realized_r1_part(
    r1: np.ndarray | float, gamma: np.ndarray, t: np.ndarray, params: SystemParams
) -> np.ndarray | float:
    """r1-dependent slice of the realized server utility (clamped responses)."""
    r = np.atleast_1d(np.asarray(r1, dtype=float))[:, None]
    with np.errstate(over="ignore"):  # overflowed responses clip to the cap
        a = np.clip(np.exp(r / (gamma * t) - 1.0) - 1.0, ACCURACY_MIN, ACCURACY_MAX)
    out = np.sum((params.alpha / params.n) * a - r * a / t, axis=1)
    return out if np.ndim(r1) else float(out[0])


def _realized_r2_part(
    r2: np.ndarray | float, delta: np.ndarray, params: SystemParams
) -> np.ndarray | float:
    """r2-dependent slice of the realized server utility (clamped responses)."""
    r = np.atleast_1d(np.asarray(r2, dtype=float))[:, None]
    f = np.clip(np.log(r / delta) / delta, 0.0, FRESHNESS_MAX)
    out = np.sum((params.beta / params.n) * f - r * f, axis=1)
    return out if np.ndim(r2) else float(out[0])


def _safeguarded_newton(f, fprime, lo: float, hi: float) -> float:
    """Root of f on a sign-change bracket [lo, hi]: Newton steps, bisection fallback.

    The Newton slope is only a hint; any step leaving the bracket or failing
    to shrink |f| falls back to bisection, so convergence is guaranteed.
    """
    flo, fhi = f(lo), f(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)):
        raise NumericError(f"derivative not finite at bracket ({lo}, {hi})")
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    x = 0.5 * (lo + hi)
    fx = f(x)
    for _ in range(200):
        if abs(fx) < FOC_FTOL or (hi - lo) < FOC_XTOL:
            break
        if not np.isfinite(fx):
            raise NumericError(f"derivative not finite at rate {x}")
        # shrink the bracket around the sign change
        if flo * fx < 0:
            hi, fhi = x, fx
        else:
            lo, flo = x, fx
        slope = fprime(x)
        step_ok = np.isfinite(slope) and slope != 0.0
        if step_ok:
            x_new = x - fx / slope
            step_ok = lo < x_new < hi
        if not step_ok:
            x_new = 0.5 * (lo + hi)
        f_new = f(x_new)
        if np.isfinite(f_new) and abs(f_new) > 0.5 * abs(fx) and lo < 0.5 * (lo + hi) < hi:
            # insufficient progress: prefer the bisection point
            x_new = 0.5 * (lo + hi)
            f_new = f(x_new)
        x, fx = x_new, f_new
    # polish the bracket so the located root is also tight in x, not only in
    # f: steep derivatives would otherwise leave an x offset visible in the
    # reported residuals
    if flo * fx < 0:
        hi = x
    elif fx * fhi < 0:
        lo = x
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def _foc_roots(f, fprime, lo: float, hi: float) -> list[float]:
    """All sign-change roots of f on [lo, hi], located via a scan plus refinement."""
    if hi <= lo:
        return []
    xs = np.linspace(lo, hi, _FOC_SCAN)
    vals = np.array([f(x) for x in xs])
    if not np.all(np.isfinite(vals)):
        bad = xs[~np.isfinite(vals)][0]
        raise NumericError(f"derivative not finite at rate {bad}")
    roots = []
    for i in range(len(xs) - 1):
        if vals[i] == 0.0:
            roots.append(float(xs[i]))
        elif vals[i] * vals[i + 1] < 0:
            roots.append(_safeguarded_newton(f, fprime, float(xs[i]), float(xs[i + 1])))
    if vals[-1] == 0.0:
        roots.append(float(xs[-1]))
    return roots


def _solve_axis(f, fprime, objective, lo: float, hi: float) -> tuple[float, bool]:
    """Shared solve logic: FOC root if one exists, else the better box edge.

    With several roots (the substituted utility is not always globally
    concave for heterogeneous populations) the root with the largest
    objective value wins; edges are always considered as fallback.
    """
    roots = _foc_roots(f, fprime, lo, hi)
    candidates = roots + [lo, hi]
    values = [objective(x) for x in candidates]
    best = int(np.argmax(values))
    return candidates[best], best >= len(roots)


def solve_r1(
    profiles: list[ClientProfile], params: SystemParams, box: RateBox
) -> tuple[float, bool]:
    """Stationary point of the substituted utility in r1 within the box.

    Returns (rate, boundary): boundary is True when no interior root beats
    the box edges and the better edge is returned instead.
    """
    gamma, _, t = _population_arrays(profiles)
    return _solve_axis(
        lambda x: du_dr1(profiles, params, x),
        lambda x: d2u_dr1(profiles, params, x),
        lambda x: float(
            np.sum(
                (params.alpha / params.n) * (np.exp(x / (gamma * t) - 1.0) - 1.0)
                - x * (np.exp(x / (gamma * t) - 1.0) - 1.0) / t
            )
        ),
        box.r1_lo,
        box.r1_hi,
    )


def solve_r2(
    profiles: list[ClientProfile], params: SystemParams, box: RateBox
) -> tuple[float, bool]:
    """Stationary point of the substituted utility in r2 within the box."""
    _, delta, _ = _population_arrays(profiles)
    return _solve_axis(
        lambda x: du_dr2(profiles, params, x),
        lambda x: d2u_dr2(profiles, params, x),
        lambda x: float(
            np.sum(
                (params.beta / params.n) * (np.log(x / delta) / delta)
                - x * (np.log(x / delta) / delta)
            )
        ),
        box.r2_lo,
        box.r2_hi,
    )


def _certified_argmax(part, lo: float, hi: float, seeds: list[float]) -> float:
    """Global maximizer of a piecewise-smooth axis objective on [lo, hi].

    Scans densely, refines every local maximum bracket, and also evaluates
    the seed candidates (FOC solutions, clamp kinks, edges).  Seeds are listed
    first so exact value ties resolve toward the analytic solution.
    """
    if hi <= lo:
        return lo
    xs = np.linspace(lo, hi, _CERT_SCAN)
    vals = part(xs)
    candidates = [min(max(s, lo), hi) for s in seeds]
    interior = np.nonzero(
        (vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])
    )[0] + 1
    for i in list(interior) + [0, len(xs) - 1]:
        a = xs[max(i - 1, 0)]
        b = xs[min(i + 1, len(xs) - 1)]
        if b > a:
            res = minimize_scalar(
                lambda x: -part(float(x)),
                bounds=(a, b),
                method="bounded",
                options={"xatol": 1e-12},
            )
            candidates.append(float(res.x))
        else:
            candidates.append(float(xs[i]))
    cand_vals = np.asarray(part(np.array(candidates)))
    best = float(np.max(cand_vals))
    # earliest candidate within snapping distance of the best wins, so the
    # analytic FOC solution (listed first) is preferred over a refinement
    # that beats it only by floating-point dust
    snap = 1e-10 * max(1.0, abs(best))
    idx = int(np.nonzero(cand_vals >= best - snap)[0][0])
    return float(candidates[idx])


@dataclass(frozen=True)
class EquilibriumResult:
    """Solved reward rates plus the client responses and utilities they induce."""

    rates: RewardRates
    strategies: tuple[Strategy, ...]
    server_utility: float
    client_utilities: tuple[float, ...]
    r1_boundary: bool
    r2_boundary: bool
    foc_residuals: tuple[float, float]


def compute_equilibrium(
    profiles: list[ClientProfile], params: SystemParams, box: RateBox
) -> EquilibriumResult:
    """Solve both rate dimensions, instantiate best responses, evaluate utility.

    The FOC solution seeds a certification pass that maximizes the realized
    objective (clamped responses) over the box, including the clamp kink
    locations; the reported rates therefore dominate every in-box rate pair
    under actual client behaviour, not just under the smooth surrogate.
    """
    gamma, delta, t = _population_arrays(profiles)
    r1_foc, _ = solve_r1(profiles, params, box)
    r2_foc, _ = solve_r2(profiles, params, box)

    gt = gamma * t
    r1_kinks = np.concatenate(
        [gt * (1.0 + math.log1p(ACCURACY_MIN)), gt * (1.0 + math.log1p(ACCURACY_MAX))]
    )
    r1_seeds = [r1_foc, box.r1_lo, box.r1_hi] + [
        float(k) for k in r1_kinks if box.r1_lo < k < box.r1_hi
    ]
    r2_kinks = delta * np.exp(FRESHNESS_MAX * delta)
    r2_seeds = [r2_foc, box.r2_lo, box.r2_hi] + [
        float(k) for k in r2_kinks if box.r2_lo < k < box.r2_hi
    ]

    r1_star = _certified_argmax(
        lambda x: _realized_r1_part(x, gamma, t, params), box.r1_lo, box.r1_hi, r1_seeds
    )
    r2_star = _certified_argmax(
        lambda x: _realized_r2_part(x, delta, params), box.r2_lo, box.r2_hi, r2_seeds
    )

    rates = RewardRates(r1=r1_star, r2=r2_star)
    responses = [best_response(p, rates) for p in profiles]
    strategies = tuple(r.strategy for r in responses)
    utilities = tuple(
        client_utility(p, rates, s, params.comm_size)
        for p, s in zip(profiles, strategies)
    )
    res1 = du_dr1(profiles, params, r1_star)
    res2 = du_dr2(profiles, params, r2_star)
    eps = 1e-12 * max(1.0, box.r1_hi)
    r1_interior = box.r1_lo + eps < r1_star < box.r1_hi - eps
    eps2 = 1e-12 * max(1.0, box.r2_hi)
    r2_interior = box.r2_lo + eps2 < r2_star < box.r2_hi - eps2
    return EquilibriumResult(
        rates=rates,
        strategies=strategies,
        server_utility=server_utility(params, rates, list(strategies)),
        client_utilities=utilities,
        r1_boundary=not (r1_interior and abs(res1) < FOC_FTOL),
        r2_boundary=not (r2_interior and abs(res2) < FOC_FTOL),
        foc_residuals=(res1, res2),
    )


@dataclass(frozen=True)
class GridSpec:
    """Deviation grid used by the equilibrium verifiers."""

    accuracy_step: float = 0.01
    freshness_step: float = 0.05
    freshness_max: float = 5.0
    time_factors: tuple[float, ...] = (1.0, 1.5, 2.0)

    def accuracy_values(self) -> np.ndarray:
        # deviations are restricted to the strategy set clients may actually
        # play, i.e. the clamp rectangle
        raw = np.arange(0.0, 1.0, self.accuracy_step)
        return np.unique(np.clip(raw, ACCURACY_MIN, ACCURACY_MAX))

    def freshness_values(self) -> np.ndarray:
        raw = np.arange(0.0, self.freshness_max + 1e-12, self.freshness_step)
        return np.unique(np.clip(raw, 0.0, FRESHNESS_MAX))


@dataclass(frozen=True)
class ClientEquilibriumReport:
    """Worst grid deviation found against a client's best response."""

    worst_violation: float
    worst_strategy: Strategy | None
    checked: int
    passed: bool


def verify_client_equilibrium(
    profile: ClientProfile,
    rates: RewardRates,
    grid: GridSpec | None = None,
    comm_size: float = 0.0,
    tol: float = VERIFY_TOL,
    strategy: Strategy | None = None,
) -> ClientEquilibriumReport:
    """Check that no grid strategy beats the client's (possibly clamped) response.

    Exhaustive over the grid's accuracy x freshness x completion-time cube;
    returns the worst utility excess and where it occurred.  Pass an explicit
    strategy to audit a candidate other than the computed best response.
    """
    grid = grid or GridSpec()
    if strategy is None:
        strategy = best_response(profile, rates).strategy
    u_star = client_utility(profile, rates, strategy, comm_size)

    a = grid.accuracy_values()
    f = grid.freshness_values()
    gain_a = rates.r1 * a  # divided by T per time grid value below
    cost_a = profile.gamma * (1.0 + a) * np.log1p(a)
    gain_f = rates.r2 * f - np.exp(profile.delta * f)
    best_f_idx = int(np.argmax(gain_f))

    worst = -math.inf
    worst_strategy = None
    for factor in grid.time_factors:
        t_val = factor * profile.t_min
        part_a = gain_a / t_val - cost_a
        best_a_idx = int(np.argmax(part_a))
        u = part_a[best_a_idx] + gain_f[best_f_idx] - comm_size
        if u > worst:
            worst = u
            worst_strategy = Strategy(
                accuracy=float(a[best_a_idx]),
                freshness=float(f[best_f_idx]),
                completion_time=t_val,
            )
    violation = worst - u_star
    return ClientEquilibriumReport(
        worst_violation=violation,
        worst_strategy=worst_strategy,
        checked=len(a) * len(f) * len(grid.time_factors),
        passed=violation <= tol,
    )


@dataclass(frozen=True)
class ServerEquilibriumReport:
    """Worst rate deviation found against the solved rates."""

    worst_violation: float
    worst_rates: tuple[float, float] | None
    grid_points: int
    axis_points: int
    passed: bool


def verify_server_equilibrium(
    profiles: list[ClientProfile],
    params: SystemParams,
    rates_star: RewardRates,
    box: RateBox,
    grid_n: int = 50,
    tol: float = VERIFY_TOL,
) -> ServerEquilibriumReport:
    """Certify the solved rates against rate deviations over the box.

    Clients re-best-respond at every candidate rate pair (the deviation-with-
    fixed-strategies inequality is vacuous here: utility is strictly
    decreasing in the rates once strategies are frozen, so only the
    response-substituted comparison is informative).  Runs a grid_n x grid_n
    joint grid plus denser single-axis sweeps through the solved point.
    """
    gamma, delta, t = _population_arrays(profiles)
    part1 = lambda r: _realized_r1_part(r, gamma, t, params)  # noqa: E731
    part2 = lambda r: _realized_r2_part(r, delta, params)  # noqa: E731

    u1_star = part1(rates_star.r1)
    u2_star = part2(rates_star.r2)

    r1_grid = np.linspace(box.r1_lo, box.r1_hi, grid_n)
    r2_grid = np.linspace(box.r2_lo, box.r2_hi, grid_n)
    v1 = np.asarray(part1(r1_grid))
    v2 = np.asarray(part2(r2_grid))

    # joint grid: utilities separate, so the worst pair combines the axis maxima
    i = int(np.argmax(v1))
    j = int(np.argmax(v2))
    worst = (v1[i] + v2[j]) - (u1_star + u2_star)
    worst_rates = (float(r1_grid[i]), float(r2_grid[j]))

    # denser single-axis sweeps through the solved point
    r1_fine = np.linspace(box.r1_lo, box.r1_hi, 4 * grid_n)
    r2_fine = np.linspace(box.r2_lo, box.r2_hi, 4 * grid_n)
    f1 = np.asarray(part1(r1_fine))
    f2 = np.asarray(part2(r2_fine))
    if float(np.max(f1)) - u1_star > worst:
        worst = float(np.max(f1)) - u1_star
        worst_rates = (float(r1_fine[int(np.argmax(f1))]), rates_star.r2)
    if float(np.max(f2)) - u2_star > worst:
        worst = float(np.max(f2)) - u2_star
        worst_rates = (rates_star.r1, float(r2_fine[int(np.argmax(f2))]))

    return ServerEquilibriumReport(
        worst_violation=float(worst),
        worst_rates=worst_rates,
        grid_points=grid_n * grid_n,
        axis_points=8 * grid_n,
        passed=worst <= tol,
    )
