"""Game-side machinery: coin-toss games, controlled SDE paths, DPP tables.

Three independent routes to the same prices live here.  The discrete game
replays the binomial manipulation game exactly as defined (steps of size 1/N,
controls capped at 1/sqrt(N)).  The SDE simulator runs Euler-Maruyama on the
controlled diffusion.  The DPP solver performs backward induction of the
2^(n+1)-scenario expectation on a value lattice, giving upper/lower tables
that bracket the PDE solutions.

Randomness is reproducible by construction: every path draws from its own
counter-based stream keyed by (seed, path index), so results are identical
for any worker count or block partition.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import pde
from ._interp import multilinear
from .errors import PreconditionError, StrategyContractError, ValidationError
from .isaacs import ControlPoint, DirectionSet, greedy_controls_batch
from .market import MarketParams, Payoff, _as_vector

Array = np.ndarray

_BLOCK = 8192  # paths per work block; fixed so partitioning never affects results


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for one path, independent of all other paths."""
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _check_seed(seed: int) -> int:
    if not (isinstance(seed, (int, np.integer)) and 0 <= int(seed) < 2**64):
        raise ValidationError("seed must be an unsigned 64-bit integer")
    return int(seed)


@dataclass(frozen=True)
class SimConfig:
    """Euler-Maruyama Monte Carlo run: start state, clock and path budget."""

    start: Array
    t0: float
    paths: int
    seed: int
    nt: int = 200

    def __post_init__(self) -> None:
        start = _as_vector(self.start, "start")
        if self.paths < 1:
            raise ValidationError("paths must be >= 1")
        if self.nt < 1:
            raise ValidationError("nt must be >= 1")
        _check_seed(self.seed)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "t0", float(self.t0))


@dataclass(frozen=True)
class DiscreteGameConfig:
    """Coin-toss game run: N steps per unit time from (start, t0)."""

    start: Array
    t0: float
    N: int
    paths: int
    seed: int

    def __post_init__(self) -> None:
        start = _as_vector(self.start, "start")
        if self.N < 1:
            raise ValidationError("N must be >= 1")
        if self.paths < 1:
            raise ValidationError("paths must be >= 1")
        _check_seed(self.seed)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "t0", float(self.t0))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    paths: int
    seed: int


class FeedbackStrategy:
    """Markov control rule for one player: (x, t) -> (theta, d), d <= m.

    Implementations provide :meth:`controls` acting on state batches of shape
    (B, n).  Outputs are validated on every call; violations raise
    :class:`StrategyContractError` naming the offending state and time.
    """

    m: float

    def controls(self, x: Array, t: float) -> tuple[Array, Array]:
        raise NotImplementedError

    def at(self, x, t: float) -> ControlPoint:
        theta, d = checked_controls(self, np.atleast_2d(np.asarray(x, dtype=float)), float(t))
        return ControlPoint(theta=theta[0], d=float(d[0]))


def checked_controls(strategy: FeedbackStrategy, x: Array, t: float) -> tuple[Array, Array]:
    theta, d = strategy.controls(x, t)
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    norms = np.linalg.norm(theta, axis=1)
    bad = np.abs(norms - 1.0) > 1e-9
    if np.any(bad):
        i = int(np.argmax(bad))
        raise StrategyContractError(
            f"strategy returned non-unit theta (|theta|={norms[i]!r}) at x={x[i]}, t={t}"
        )
    bad = (d < 0) | (d > strategy.m * (1.0 + 1e-12) + 1e-12)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise StrategyContractError(
            f"strategy returned d={d[i]!r} outside [0, m={strategy.m}] at x={x[i]}, t={t}"
        )
    return theta, d


@dataclass
class ConstantStrategy(FeedbackStrategy):
    """Plays the same (theta, d) at every state and time."""

    theta: Array
    d: float
    m: float = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        point = ControlPoint(theta=np.asarray(self.theta, dtype=float), d=self.d)
        self.theta = point.theta
        self.d = point.d
        if self.m is None:
            self.m = self.d
        if self.d > self.m:
            raise ValidationError("constant strategy requires d <= m")

    def controls(self, x: Array, t: float) -> tuple[Array, Array]:
        B = x.shape[0]
        return np.tile(self.theta, (B, 1)), np.full(B, self.d)


def null_strategy_pair(n: int) -> tuple[ConstantStrategy, ConstantStrategy]:
    """Both players idle: opposed directions, zero intensity."""
    theta = np.zeros(n)
    theta[0] = 1.0
    return (ConstantStrategy(theta=theta, d=0.0, m=0.0),
            ConstantStrategy(theta=-theta, d=0.0, m=0.0))


class _GreedyCore:
    """Shared cache of greedy lattice controls extracted from a solved surface."""

    def __init__(self, grid: pde.PriceGrid, params: MarketParams, m: float,
                 dirs: DirectionSet, side: str):
        if side not in ("plus", "minus"):
            raise ValidationError("side must be 'plus' or 'minus'")
        self.grid = grid
        self.params = params
        self.m = float(m)
        self.dirs = dirs
        self.side = side
        self.h = grid.spec.h
        self._tables: dict[int, tuple[Array, Array, Array, Array]] = {}

    def _slice_tables(self, k: int):
        cached = self._tables.get(k)
        if cached is not None:
            return cached
        u = self.grid.values[k]
        n = self.grid.n
        p, M = pde.interior_derivatives(u, self.h)
        xi = u[tuple(slice(1, -1) for _ in range(n))].reshape(-1)
        tp, dp, tm, dm = greedy_controls_batch(xi, p.reshape(-1, n), M.reshape(-1, n, n),
                                               self.m, self.params, self.dirs, self.side)
        tables = (tp, dp, tm, dm)
        self._tables[k] = tables
        return tables

    def lookup(self, x: Array, t: float):
        spec = self.grid.spec
        n = spec.n
        k = int(np.clip(round(t / self.grid.dt), 0, self.grid.nt))
        tp, dp, tm, dm = self._slice_tables(k)
        flat = np.zeros(x.shape[0], dtype=np.intp)
        stride = 1
        for a in range(n - 1, -1, -1):
            idx = np.clip(np.rint((x[:, a] - spec.lo[a]) / self.h[a]).astype(np.intp),
                          1, spec.nx[a] - 2) - 1
            flat += idx * stride
            stride *= spec.nx[a] - 2
        return tp[flat], dp[flat], tm[flat], dm[flat]


@dataclass
class _GreedyView(FeedbackStrategy):
    core: _GreedyCore
    player: str
    m: float = field(init=False)

    def __post_init__(self) -> None:
        self.m = self.core.m

    def controls(self, x: Array, t: float) -> tuple[Array, Array]:
        tp, dp, tm, dm = self.core.lookup(x, t)
        return (tp, dp) if self.player == "plus" else (tm, dm)


def greedy_strategy_pair(grid: pde.PriceGrid, params: MarketParams, m: float,
                         dirs: DirectionSet | None = None,
                         side: str = "minus") -> tuple[FeedbackStrategy, FeedbackStrategy]:
    """Feedback strategies that replay the lattice optimizers of a solved surface.

    States snap to the nearest interior node of the nearest time slice, so the
    controls are piecewise constant; both returned views share one cache.
    """
    if dirs is None:
        dirs = DirectionSet.for_dimension(grid.n)
    core = _GreedyCore(grid, params, m, dirs, side)
    return _GreedyView(core=core, player="plus"), _GreedyView(core=core, player="minus")


def _run_blocks(total: int, threads: int, worker: Callable[[int, int], None]) -> None:
    ranges = [(s, min(total, s + _BLOCK)) for s in range(0, total, _BLOCK)]
    if threads <= 1 or len(ranges) == 1:
        for lo, hi in ranges:
            worker(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda rng: worker(*rng), ranges))


def simulate_sde_paths(cfg: SimConfig, params: MarketParams,
                       strat_plus: FeedbackStrategy, strat_minus: FeedbackStrategy,
                       threads: int = 1, accumulate_running_cost: bool = False):
    """Euler-Maruyama terminal states of the controlled log-price dynamics.

    Controls are read from the feedback strategies at the pre-step state.
    Returns terminals with shape (paths, n); with the running-cost flag also
    returns the per-path discounted left-endpoint Riemann sums.
    """
    n = params.n
    if cfg.start.size != n:
        raise ValidationError(f"start must have {n} coordinates")
    if not 0.0 <= cfg.t0 < params.T:
        raise ValidationError("t0 must lie in [0, T)")
    horizon = params.T - cfg.t0
    dt = horizon / cfg.nt
    sqdt = np.sqrt(dt)
    sigma = params.sigma
    terminals = np.empty((cfg.paths, n))
    rc_sums = np.zeros(cfg.paths)
    rc = params.running_cost if accumulate_running_cost else None

    def worker(lo: int, hi: int) -> None:
        B = hi - lo
        noise = np.empty((B, cfg.nt, n + 1))
        for j in range(B):
            noise[j] = path_rng(cfg.seed, lo + j).standard_normal((cfg.nt, n + 1))
        X = np.tile(cfg.start, (B, 1))
        acc = np.zeros(B)
        for k in range(cfg.nt):
            t_k = cfg.t0 + k * dt
            tp, dp = checked_controls(strat_plus, X, t_k)
            tm, dm = checked_controls(strat_minus, X, t_k)
            if rc is not None:
                acc += np.exp(-params.r * (params.T - t_k)) * rc(X, t_k) * dt
            drift = params.mu + sigma * (dp + dm)[:, None] * (tp + tm)
            X = (X + drift * dt + sigma * sqdt * noise[:, k, :n]
                 + sigma * (tp - tm) * sqdt * noise[:, k, n][:, None])
        terminals[lo:hi] = X
        rc_sums[lo:hi] = acc

    _run_blocks(cfg.paths, threads, worker)
    if accumulate_running_cost:
        return terminals, rc_sums
    return terminals


def simulate_discrete_game(cfg: DiscreteGameConfig, payoff: Payoff, params: MarketParams,
                           strat_plus: FeedbackStrategy, strat_minus: FeedbackStrategy,
                           threads: int = 1) -> McEstimate:
    """Play the N-per-unit-time coin-toss game to T and average the rewards.

    Raw strategy intensities are mapped onto the capped lattice controls
    ``theta_k = min(d / sqrt(N), 1) * theta / sqrt(N)``, which keeps every
    lattice control inside the 1/sqrt(N) ball by construction.
    """
    n = params.n
    if cfg.start.size != n:
        raise ValidationError(f"start must have {n} coordinates")
    if not 0.0 <= cfg.t0 < params.T:
        raise ValidationError("t0 must lie in [0, T)")
    steps = int(round((params.T - cfg.t0) * cfg.N))
    if steps < 1:
        raise ValidationError("the horizon must cover at least one game step")
    root_n = np.sqrt(cfg.N)
    dt = 1.0 / cfg.N
    sigma = params.sigma
    rc = params.running_cost
    rewards = np.empty(cfg.paths)

    def worker(lo: int, hi: int) -> None:
        B = hi - lo
        coins = np.empty((B, steps, n + 1), dtype=np.int8)
        for j in range(B):
            gen = path_rng(cfg.seed, lo + j)
            coins[j] = gen.integers(0, 2, size=(steps, n + 1), dtype=np.int8) * 2 - 1
        X = np.tile(cfg.start, (B, 1))
        acc = np.zeros(B)
        for k in range(steps):
            t_k = cfg.t0 + k * dt
            tp, dp = checked_controls(strat_plus, X, t_k)
            tm, dm = checked_controls(strat_minus, X, t_k)
            if rc is not None:
                acc += np.exp(-params.r * (params.T - t_k)) * rc(X, t_k) * dt
            scaled_p = tp * (np.minimum(dp / root_n, 1.0) / root_n)[:, None]
            scaled_m = tm * (np.minimum(dm / root_n, 1.0) / root_n)[:, None]
            X = (X + params.mu * dt + (2.0 / root_n) * sigma * coins[:, k, :n]
                 + sigma * (scaled_p - scaled_m) * coins[:, k, n][:, None]
                 + sigma * (scaled_p + scaled_m))
        rewards[lo:hi] = (np.exp(-params.r * (params.T - cfg.t0)) * payoff.values(X)) + acc

    _run_blocks(cfg.paths, threads, worker)
    return _estimate(rewards, cfg.paths, cfg.seed)


def _estimate(rewards: Array, paths: int, seed: int) -> McEstimate:
    mean = float(np.mean(rewards))
    stderr = 0.0 if paths < 2 else float(np.std(rewards, ddof=1) / np.sqrt(paths))
    return McEstimate(mean=mean, stderr=stderr, paths=paths, seed=seed)


def discounted_reward(terminal, t0: float, params: MarketParams, payoff: Payoff,
                      running_cost_samples=None, dt: float | None = None):
    """Discounted payoff plus the left-endpoint running-cost Riemann sum.

    ``running_cost_samples[..., k]`` holds h at time t0 + k*dt; the sum adds
    ``exp(-r (T - s_k)) h_k dt`` over the sampled clock.
    """
    arr = np.asarray(terminal, dtype=float)
    scalar = arr.ndim == 1
    if scalar:
        arr = arr[None, :]
    out = np.exp(-params.r * (params.T - t0)) * np.asarray(payoff.values(arr), dtype=float)
    if running_cost_samples is not None:
        if dt is None or dt <= 0:
            raise ValidationError("running-cost samples require the sampling dt")
        samples = np.atleast_2d(np.asarray(running_cost_samples, dtype=float))
        times = t0 + dt * np.arange(samples.shape[1])
        out = out + dt * np.sum(samples * np.exp(-params.r * (params.T - times)), axis=1)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class GameValueTables:
    """Backward-induction value tables, one or both sides of the game."""

    spec: pde.GridSpec
    dt: float
    m: float
    u_plus: Array | None = None
    u_minus: Array | None = None

    def __post_init__(self) -> None:
        if self.u_plus is None and self.u_minus is None:
            raise ValidationError("at least one side must be populated")
        for name in ("u_plus", "u_minus"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (self.spec.nt + 1, *self.spec.nx):
                raise ValidationError(f"{name} shape {arr.shape} does not match the grid")
            object.__setattr__(self, name, arr)
        if self.u_plus is not None and self.u_minus is not None:
            worst = float(np.max(self.u_minus - self.u_plus, initial=-np.inf))
            if worst > 1e-9:
                raise ValidationError(
                    f"lower table exceeds upper table by {worst:g} (> 1e-9)"
                )

    def merged(self, other: "GameValueTables") -> "GameValueTables":
        if other.spec != self.spec or other.dt != self.dt or other.m != self.m:
            raise ValidationError("tables to merge must share grid, dt and m")
        return GameValueTables(
            spec=self.spec, dt=self.dt, m=self.m,
            u_plus=self.u_plus if self.u_plus is not None else other.u_plus,
            u_minus=self.u_minus if self.u_minus is not None else other.u_minus,
        )


def aligned_time_steps(spec: pde.GridSpec, params: MarketParams, cells: int = 1) -> int:
    """Step count whose coin displacement sigma*sqrt(dt) spans ~`cells` grid cells.

    Aligning the walk with the lattice keeps the interpolation bias of the
    backward induction near zero on the dominant scenarios.
    """
    if cells < 1:
        raise ValidationError("cells must be >= 1")
    h = spec.h
    target = float(np.min((cells * h / params.sigma) ** 2))
    return max(1, int(round(params.T / target)))


def _margin_check(spec: pde.GridSpec, params: MarketParams, m: float, dt: float) -> None:
    disp = (np.abs(params.mu) + 2.0 * m * params.sigma) * dt + 2.0 * params.sigma * np.sqrt(dt)
    margin = (spec.hi - spec.lo) / 4.0
    if np.any(disp > margin):
        a = int(np.argmax(disp - margin))
        raise PreconditionError(
            f"one-step displacement {disp[a]:g} exceeds the grid margin {margin[a]:g} "
            f"on axis {a}; shrink dt or m, or widen the box"
        )


def _coin_matrix(n: int) -> Array:
    """All 2^(n+1) sign vectors, one row per scenario."""
    count = 1 << (n + 1)
    rows = np.arange(count)
    return 1.0 - 2.0 * ((rows[:, None] >> np.arange(n + 1)[None, :]) & 1)


def dpp_step(values_next: Array, t_next: float, spec: pde.GridSpec, dt: float,
             m: float, payoff: Payoff, params: MarketParams, dirs: DirectionSet,
             side: str) -> Array:
    """One backward-induction sweep of the bounded game on the value lattice.

    Every node takes the discounted average of the interpolated next-slice
    value over all coin scenarios, optimized over both players' lattice
    actions; queries leaving the box fall back to the discounted payoff.
    """
    if side not in ("plus", "minus"):
        raise ValidationError("side must be 'plus' or 'minus'")
    n = spec.n
    _margin_check(spec, params, m, dt)
    D = dirs.dirs
    K = D.shape[0]
    dvals = np.array([0.0, m])
    sqdt = np.sqrt(dt)
    sigma = params.sigma

    tsum = D[:, None, :] + D[None, :, :]          # (K, K, n): theta+ + theta-
    tdiff = D[:, None, :] - D[None, :, :]
    dsum = dvals[:, None] + dvals[None, :]        # (2, 2): d+ + d-
    coins = _coin_matrix(n)                       # (C, n+1)
    C = coins.shape[0]

    drift = (params.mu[None, None, None, None, :]
             + sigma * dsum[None, :, None, :, None] * tsum[:, None, :, None, :]) * dt
    move = (drift[:, :, :, :, None, :]
            + sigma * coins[None, None, None, None, :, :n] * sqdt
            + sigma * tdiff[:, None, :, None, None, :] * coins[None, None, None, None, :, n:] * sqdt)
    # move axes: (k_plus, j_plus, k_minus, j_minus, coin, i)
    move = move.reshape(-1, C, n)
    P = move.shape[0]

    pts = spec.points()
    B = pts.shape[0]
    queries = (pts[:, None, None, :] + move[None, :, :, :]).reshape(-1, n)
    inside = np.ones(queries.shape[0], dtype=bool)
    for a in range(n):
        inside &= (queries[:, a] >= spec.lo[a]) & (queries[:, a] <= spec.hi[a])
    vals = np.empty(queries.shape[0])
    if np.any(inside):
        vals[inside] = multilinear(spec.axes, values_next, queries[inside])
    if not np.all(inside):
        disc_next = np.exp(-params.r * (params.T - t_next))
        vals[~inside] = disc_next * payoff.values(queries[~inside])
    table = np.exp(-params.r * dt) * vals.reshape(B, P, C).mean(axis=2)
    table = table.reshape(B, K, 2, K, 2)
    if side == "minus":
        # plus player commits, minus player answers
        return np.max(np.min(table, axis=(3, 4)), axis=(1, 2)).reshape(spec.nx)
    return np.min(np.max(table, axis=(1, 2)), axis=(1, 2)).reshape(spec.nx)


def dpp_solve(payoff: Payoff, params: MarketParams, m: float, spec: pde.GridSpec,
              side: str, dirs: DirectionSet | None = None,
              nt: int | None = None) -> GameValueTables:
    """Backward induction from the payoff at T; returns one side's table."""
    if params.n != spec.n or payoff.n != spec.n:
        raise ValidationError("payoff, params and grid dimensions must agree")
    if not (np.isfinite(m) and m > 0):
        raise ValidationError("m must be finite and > 0")
    if dirs is None:
        dirs = DirectionSet.for_dimension(spec.n)
    if nt is None:
        nt = spec.nt if spec.nt is not None else aligned_time_steps(spec, params)
    if nt < 1:
        raise ValidationError("nt must be >= 1")
    dt = params.T / nt
    _margin_check(spec, params, m, dt)
    values = np.empty((nt + 1, *spec.nx))
    values[nt] = np.asarray(payoff.values(spec.points()), dtype=float).reshape(spec.nx)
    for k in range(nt, 0, -1):
        values[k - 1] = dpp_step(values[k], k * dt, spec, dt, m, payoff, params, dirs, side)
    out_spec = pde.GridSpec(lo=spec.lo, hi=spec.hi, nx=spec.nx, nt=nt)
    if side == "plus":
        return GameValueTables(spec=out_spec, dt=dt, m=m, u_plus=values)
    return GameValueTables(spec=out_spec, dt=dt, m=m, u_minus=values)


def mc_value(payoff: Payoff, params: MarketParams, strat_plus: FeedbackStrategy,
             strat_minus: FeedbackStrategy, cfg: SimConfig, threads: int = 1) -> McEstimate:
    """Monte Carlo estimate of the expected discounted reward under two strategies."""
    if params.running_cost is not None:
        terminals, rc_sums = simulate_sde_paths(cfg, params, strat_plus, strat_minus,
                                                threads=threads, accumulate_running_cost=True)
        rewards = (np.exp(-params.r * (params.T - cfg.t0))
                   * np.asarray(payoff.values(terminals), dtype=float) + rc_sums)
    else:
        terminals = simulate_sde_paths(cfg, params, strat_plus, strat_minus, threads=threads)
        rewards = np.exp(-params.r * (params.T - cfg.t0)) * np.asarray(
            payoff.values(terminals), dtype=float)
    return _estimate(rewards, cfg.paths, cfg.seed)


def write_value_table_csv(path, tables: GameValueTables,
                          config_digest: str | None = None) -> None:
    """Value-table CSV: the surface layout plus a trailing ``side`` column.

    All populated sides are written, lower (minus) table first.
    """
    spec = tables.spec
    n = spec.n
    pts = spec.points()
    assert spec.nt is not None
    with open(path, "w", newline="") as fh:
        if config_digest is not None:
            fh.write(f"# config_digest={config_digest}\n")
        fh.write(",".join(["t"] + [f"x_{i + 1}" for i in range(n)] + ["u", "side"]) + "\n")
        for side, arr in (("minus", tables.u_minus), ("plus", tables.u_plus)):
            if arr is None:
                continue
            for k in range(spec.nt, -1, -1):
                block = np.empty((pts.shape[0], n + 2))
                block[:, 0] = k * tables.dt
                block[:, 1:n + 1] = pts
                block[:, n + 1] = arr[k].reshape(-1)
                for row in block:
                    fh.write(",".join(f"{v:.17g}" for v in row) + f",{side}\n")
