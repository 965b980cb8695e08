"""Reproduction of the pricing experiments: the fractional-Brownian heat
equation against analytic conditional expectations, and rough Bergomi call
prices against a Monte Carlo oracle.

Collocation layout: interior points carry conditional paths sampled at grid
times in [0, T) with truncated-kernel directions; boundary points at T carry
constant paths whose level is drawn from the terminal law. All paths are
time-augmented (channel 0), the state/variance channel is last.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .numerics import norm_cdf
from .operator import CollocationPoint, PpdeSpec
from .paths import (
    BergomiParams,
    FbmSpec,
    Path,
    TimeGrid,
    forward_volterra_weights,
    make_kernel_direction,
    simulate_theta,
    time_augment,
)
from .recovery import assemble, compute_pair_corners, predict, solve_linear, split_points
from .static_kernels import RbfLift, RbfParams


@dataclass
class ExperimentConfig:
    """Experiment setup; serializes to/from the CLI's JSON config schema."""

    kind: str = "fbm"
    payoff: str = "identity"
    hurst: float = 0.1
    horizon: float = 1.0
    n_steps: int = 64
    m: int = 150
    n: int = 50
    eval_count: int = 100
    mc_paths: int = 20000
    seed: int = 0
    nu: float = 1.0
    strike: float = 0.0
    xi: float = 0.055
    vol_of_vol: float = 1.9
    rho: float = -0.9
    spot_log: float = 0.0
    x_min: float | None = None
    x_max: float | None = None
    sigma_t: float | None = None
    sigma_x: float | None = None
    sigma_g: float = 1.0
    sigma_l: float = 1.0
    time_warp: float | None = None
    lift: str = "rbf"
    delta_steps: float = 0.0
    shift_steps: float = 1.0
    dyadic_order: int = 1
    threads: int = 1
    cv_grid: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("fbm", "bergomi"):
            raise ValueError(f"kind must be 'fbm' or 'bergomi', got {self.kind!r}")
        if self.payoff not in ("identity", "abs", "exp", "call"):
            raise ValueError(f"unknown payoff {self.payoff!r}")
        if self.m < 0 or self.n < 0 or self.m + self.n < 1:
            raise ValueError("need m, n >= 0 and m + n >= 1")
        if self.mc_paths < 1:
            raise ValueError("mc_paths must be >= 1")
        if self.lift not in ("rbf", "identity"):
            raise ValueError(f"lift must be 'rbf' or 'identity', got {self.lift!r}")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.horizon, self.n_steps)

    @property
    def fbm_spec(self) -> FbmSpec:
        return FbmSpec(
            hurst=self.hurst, scale=float(np.sqrt(2.0 * self.hurst)), horizon=self.horizon
        )

    @property
    def bergomi_params(self) -> BergomiParams:
        return BergomiParams(
            xi=self.xi,
            vol_of_vol=self.vol_of_vol,
            rho=self.rho,
            hurst=self.hurst,
            spot_log=self.spot_log,
        )

    def x_range(self) -> tuple:
        if self.x_min is not None and self.x_max is not None:
            return self.x_min, self.x_max
        half = 3.0 * float(np.sqrt(self.xi * self.horizon))
        return self.spot_log - half, self.spot_log + half

    def rbf_params(self) -> RbfParams:
        lo, hi = self.x_range()
        return RbfParams(
            sigma_t=self.sigma_t if self.sigma_t is not None else 0.5 * self.horizon,
            sigma_x=self.sigma_x if self.sigma_x is not None else max(0.5 * (hi - lo), 1e-6),
            sigma_g=self.sigma_g,
            sigma_l=self.sigma_l,
            time_warp=self.time_warp,
        )

    def lift_object(self):
        return RbfLift(self.sigma_g) if self.lift == "rbf" else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class MetricsReport:
    """Summary errors plus the per-point table they are derived from."""

    mse: float
    mae: float
    table: list
    runtime_ms: float
    config: dict

    @classmethod
    def from_table(cls, table, runtime_ms, config) -> "MetricsReport":
        errors = np.array([row["abs_error"] for row in table])
        return cls(
            mse=float(np.mean(errors**2)) if len(errors) else 0.0,
            mae=float(np.mean(errors)) if len(errors) else 0.0,
            table=table,
            runtime_ms=runtime_ms,
            config=config,
        )


# ---------------------------------------------------------------------------
# payoffs and analytic prices
# ---------------------------------------------------------------------------


def payoff_value(cfg: ExperimentConfig, terminal_state: float) -> float:
    """Terminal payoff on the state: the fBM payoffs act on the path value,
    the Bergomi call acts on the exponential of the log-price."""
    x = terminal_state
    if cfg.payoff == "identity":
        return float(x)
    if cfg.payoff == "abs":
        return float(abs(x))
    if cfg.payoff == "exp":
        return float(np.exp(cfg.nu * x))
    if cfg.kind == "bergomi":
        return float(max(np.exp(x) - cfg.strike, 0.0))
    return float(max(x - cfg.strike, 0.0))


def analytic_fbm_price(
    payoff: str,
    theta_T: float,
    t: float,
    T: float,
    hurst: float,
    nu: float = 1.0,
    strike: float = 0.0,
) -> float:
    """Closed-form conditional expectations for the fractional heat equation.

    Uses the sqrt(2H) kernel normalization, under which the terminal value is
    Gaussian with variance (T - t)^(2H) around theta_T. At t = T the payoff
    itself is returned (terminal condition).
    """
    if t > T:
        raise ValueError("need t <= T")
    tau_h = (T - t) ** hurst
    if payoff == "identity":
        return float(theta_T)
    if t == T:
        if payoff == "abs":
            return float(abs(theta_T))
        if payoff == "exp":
            return float(np.exp(nu * theta_T))
        return float(max(theta_T - strike, 0.0))
    if payoff == "abs":
        return float(abs(theta_T) + tau_h * np.sqrt(2.0 / np.pi))
    if payoff == "exp":
        return float(np.exp(nu * theta_T + 0.5 * nu**2 * tau_h**2))
    if payoff == "call":
        z = (theta_T - strike) / tau_h
        return float(
            tau_h / np.sqrt(2.0 * np.pi) * np.exp(-0.5 * z**2)
            - (strike - theta_T) * norm_cdf(z)
        )
    raise ValueError(f"unknown payoff {payoff!r}")


# ---------------------------------------------------------------------------
# collocation point construction
# ---------------------------------------------------------------------------


def _augment_direction(direction: Path) -> Path:
    """Pair the one-channel direction with a zero time channel (the pathwise
    derivative never perturbs the monotone coordinate)."""
    zeros = np.zeros(len(direction.grid.nodes))
    return Path(grid=direction.grid, values=np.column_stack([zeros, direction.values[:, 0]]))


def make_interior_point(
    t: float,
    x: np.ndarray,
    state_path: Path,
    spec: FbmSpec,
    grid: TimeGrid,
    delta: float,
    shift: float = 0.0,
) -> CollocationPoint:
    gamma = time_augment(state_path)
    direction = _augment_direction(make_kernel_direction(t, delta, spec, grid, shift=shift))
    return CollocationPoint(t=t, x=x, gamma=gamma, direction=direction, time_channel=0)


def make_boundary_point(level: float, x: np.ndarray, grid: TimeGrid) -> CollocationPoint:
    """Terminal anchor: the closing value of a conditional path sampled at T.

    The path is zero before T and carries the level at the final node, the
    discrete stand-in for the conditional path started at the horizon.
    """
    vals = np.zeros((grid.n_steps + 1, 1))
    vals[-1, 0] = level
    gamma = time_augment(Path(grid=grid, values=vals))
    zero = Path(grid=grid, values=np.zeros((grid.n_steps + 1, 2)))
    return CollocationPoint(t=grid.t1, x=x, gamma=gamma, direction=zero, time_channel=0)


def _draw_points(cfg: ExperimentConfig, rng: np.random.Generator, count_interior, count_boundary):
    """Sample collocation or evaluation points in a fixed draw order."""
    grid = cfg.grid
    fspec = cfg.fbm_spec
    delta = cfg.delta_steps * grid.dt
    shift = cfg.shift_steps * grid.dt
    with_x = cfg.kind == "bergomi"
    lo, hi = cfg.x_range()
    terminal_weights = fspec.kernel(grid.t1 - grid.nodes[:-1])
    points = []
    for _ in range(count_interior):
        k = int(rng.integers(0, grid.n_steps))
        t = grid.nodes[k]
        dw = rng.normal(0.0, np.sqrt(grid.dt), grid.n_steps)
        theta = simulate_theta(t, fspec, grid, dw)
        x = np.array([rng.uniform(lo, hi)]) if with_x else np.zeros(0)
        points.append(make_interior_point(t, x, theta, fspec, grid, delta, shift))
    for _ in range(count_boundary):
        dw = rng.normal(0.0, np.sqrt(grid.dt), grid.n_steps)
        level = float(terminal_weights @ dw)
        x = np.array([rng.uniform(lo, hi)]) if with_x else np.zeros(0)
        points.append(make_boundary_point(level, x, grid))
    return points


def _terminal_callable(cfg: ExperimentConfig):
    if cfg.kind == "bergomi":
        return lambda p: payoff_value(cfg, float(p.x[0]))
    return lambda p: payoff_value(cfg, float(p.gamma.values[-1, -1]))


def build_ppde_spec(cfg: ExperimentConfig) -> PpdeSpec:
    delta = cfg.delta_steps * cfg.grid.dt
    if cfg.kind == "bergomi":
        return PpdeSpec(
            kind="rough_bergomi",
            fbm=cfg.fbm_spec,
            bergomi=cfg.bergomi_params,
            terminal=_terminal_callable(cfg),
            delta=delta,
        )
    return PpdeSpec(
        kind="fbm_heat", fbm=cfg.fbm_spec, terminal=_terminal_callable(cfg), delta=delta
    )


# ---------------------------------------------------------------------------
# experiment drivers
# ---------------------------------------------------------------------------


def train_model(cfg: ExperimentConfig, points, params: RbfParams | None = None):
    spec = build_ppde_spec(cfg)
    params = params if params is not None else cfg.rbf_params()
    system = assemble(
        spec,
        points,
        params,
        lift=cfg.lift_object(),
        dyadic_order=cfg.dyadic_order,
        threads=cfg.threads,
    )
    return solve_linear(system, method="symmetric")


def run_fbm(cfg: ExperimentConfig) -> MetricsReport:
    """Train on sampled collocation points and score against the analytic prices."""
    return run_fbm_suite([cfg])[0]


def run_fbm_suite(configs) -> list:
    """Run several fbm configs that share the collocation geometry.

    The configs must agree on everything that shapes the signature-level
    solves (seed, sizes, grid, lift, dyadic order); payoff and time/state
    bandwidths may differ. The expensive pair solves are computed once.
    """
    from .recovery import _a_matrix, cross_corners

    base = configs[0]
    geometry = ("kind", "hurst", "horizon", "n_steps", "m", "n", "eval_count", "seed",
                "sigma_g", "lift", "delta_steps", "shift_steps", "dyadic_order", "cv_grid")
    for cfg in configs:
        if cfg.kind != "fbm":
            raise ValueError("run_fbm needs kind='fbm'")
        if any(getattr(cfg, k) != getattr(base, k) for k in geometry):
            raise ValueError("suite configs must share the collocation geometry")
    start = time.perf_counter()
    rng = np.random.default_rng(base.seed)
    points = _draw_points(base, rng, base.m, base.n)
    eval_points = _draw_points(base, rng, base.eval_count, 0)
    spec0 = build_ppde_spec(base)
    lift = base.lift_object()
    system0 = assemble(
        spec0, points, base.rbf_params(), lift, base.dyadic_order, base.threads
    )
    cc = cross_corners(
        eval_points, system0.points, lift, base.dyadic_order, base.threads, with_right=True
    )
    reports = []
    for cfg in configs:
        params = cross_validate(cfg, cfg.cv_grid) if cfg.cv_grid else cfg.rbf_params()
        spec = build_ppde_spec(cfg)
        system = assemble(
            spec,
            list(system0.points),
            params,
            lift,
            cfg.dyadic_order,
            cfg.threads,
            corner_cache=system0.corners,
        )
        model = solve_linear(system, method="symmetric")
        preds = _a_matrix(model, eval_points, cross_cache=cc) @ model.weights
        table = []
        for i, (p, pred) in enumerate(zip(eval_points, preds)):
            oracle = analytic_fbm_price(
                cfg.payoff,
                float(p.gamma.values[-1, -1]),
                p.t,
                cfg.horizon,
                cfg.hurst,
                nu=cfg.nu,
                strike=cfg.strike,
            )
            table.append(
                {
                    "id": i,
                    "t": float(p.t),
                    "predicted": float(pred),
                    "oracle": float(oracle),
                    "abs_error": float(abs(pred - oracle)),
                }
            )
        runtime_ms = 1000.0 * (time.perf_counter() - start)
        reports.append(MetricsReport.from_table(table, runtime_ms, cfg.to_dict()))
    return reports


def mc_bergomi_price(
    t: float,
    x: float,
    gamma: Path,
    params: BergomiParams,
    payoff,
    mc_paths: int,
    grid: TimeGrid,
    seed,
) -> tuple:
    """Monte Carlo price under the conditional rough Bergomi dynamics.

    Euler steps on the shared grid from t to T; the forward Volterra term uses
    the midpoint convolution; antithetic driver pairs. gamma is the variance
    path (terminal channel read when multi-channel); its state at t is the
    right-limit node, matching the operator's coefficient convention.
    payoff maps terminal log-price to value. Returns (price, standard error).
    """
    rng = np.random.default_rng(seed)
    k_t = grid.node_index(t)
    n = grid.n_steps
    dt = grid.dt
    half = (mc_paths + 1) // 2
    fspec = FbmSpec(hurst=params.hurst, scale=float(np.sqrt(2.0 * params.hurst)))
    w_fwd = forward_volterra_weights(t, fspec, grid)
    dw1 = rng.normal(0.0, np.sqrt(dt), (half, n))
    dw2 = rng.normal(0.0, np.sqrt(dt), (half, n))
    dw1 = np.vstack([dw1, -dw1])[:mc_paths]
    dw2 = np.vstack([dw2, -dw2])[:mc_paths]
    fwd = dw1 @ w_fwd.T  # (paths, nodes)
    db = params.rho * dw1 + np.sqrt(1.0 - params.rho**2) * dw2
    g_vals = gamma.values[:, -1].copy()
    if k_t + 1 <= n:
        g_vals[k_t] = g_vals[min(k_t + 1, n)]
    log_x = np.full(dw1.shape[0], float(x))
    nodes = grid.nodes
    for k in range(k_t, n):
        y = g_vals[k] + fwd[:, k]
        var = params.variance(nodes[k], y)
        log_x += np.sqrt(var) * db[:, k] - 0.5 * var * dt
    vals = np.asarray(payoff(log_x), dtype=float)
    price = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return price, stderr


def run_bergomi(cfg: ExperimentConfig) -> MetricsReport:
    """Train the rough Bergomi collocation model and score against Monte Carlo."""
    if cfg.kind != "bergomi":
        raise ValueError("run_bergomi needs kind='bergomi'")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    points = _draw_points(cfg, rng, cfg.m, cfg.n)
    eval_points = _draw_points(cfg, rng, cfg.eval_count, 0)
    mc_seeds = np.random.SeedSequence(cfg.seed).spawn(len(eval_points))
    params = cross_validate(cfg, cfg.cv_grid) if cfg.cv_grid else cfg.rbf_params()
    model = train_model(cfg, points, params)
    preds = np.atleast_1d(predict(model, eval_points))

    def payoff(log_x):
        if cfg.payoff == "identity":
            return log_x
        if cfg.payoff == "abs":
            return np.abs(log_x)
        if cfg.payoff == "exp":
            return np.exp(cfg.nu * log_x)
        return np.maximum(np.exp(log_x) - cfg.strike, 0.0)

    table = []
    for i, (p, pred) in enumerate(zip(eval_points, preds)):
        oracle, stderr = mc_bergomi_price(
            p.t,
            float(p.x[0]),
            p.gamma,
            cfg.bergomi_params,
            payoff,
            cfg.mc_paths,
            cfg.grid,
            mc_seeds[i],
        )
        table.append(
            {
                "id": i,
                "t": float(p.t),
                "x": float(p.x[0]),
                "predicted": float(pred),
                "oracle": float(oracle),
                "mc_stderr": float(stderr),
                "abs_error": float(abs(pred - oracle)),
            }
        )
    runtime_ms = 1000.0 * (time.perf_counter() - start)
    return MetricsReport.from_table(table, runtime_ms, cfg.to_dict())


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


def cross_validate(cfg: ExperimentConfig, bandwidth_grid, k_folds: int = 5) -> RbfParams:
    """Pick bandwidths by k-fold constraint-residual error.

    Folds split the collocation constraints; the held-out score adds squared
    operator residuals at interior points and squared value residuals at
    boundary points. Ties break toward larger bandwidths. The signature-level
    corner solves are cached per lift bandwidth and shared across candidates.
    """
    candidates = []
    for cand in bandwidth_grid:
        cand = dict(cand)
        candidates.append(
            RbfParams(
                sigma_t=cand.get("sigma_t", cfg.rbf_params().sigma_t),
                sigma_x=cand.get("sigma_x", cfg.rbf_params().sigma_x),
                sigma_g=cand.get("sigma_g", cfg.sigma_g),
                sigma_l=cand.get("sigma_l", cfg.sigma_l),
            )
        )
    if not candidates:
        raise ValueError("bandwidth grid is empty")
    if len(candidates) == 1:
        return candidates[0]
    rng = np.random.default_rng(cfg.seed)
    points = _draw_points(cfg, rng, cfg.m, cfg.n)
    interior, boundary = split_points(points)
    pts = interior + boundary
    spec = build_ppde_spec(cfg)
    order = rng.permutation(len(pts))
    folds = [order[f::k_folds] for f in range(k_folds)]

    caches = {}
    scores = []
    for params in candidates:
        lift = RbfLift(params.sigma_g) if cfg.lift == "rbf" else None
        if lift not in caches:
            caches[lift] = compute_pair_corners(pts, lift, cfg.dyadic_order, cfg.threads)
        cache = caches[lift]
        total, count = 0.0, 0
        for fold in folds:
            hold = set(int(i) for i in fold)
            train_idx = [i for i in range(len(pts)) if i not in hold]
            if not train_idx or not hold:
                continue
            train_pts = [pts[i] for i in train_idx]
            sub_cache = _subset_cache(cache, train_idx, pts)
            system = assemble(
                spec, train_pts, params, lift, cfg.dyadic_order, cfg.threads, sub_cache
            )
            model = solve_linear(system)
            for i in sorted(hold):
                resid = _constraint_residual(model, spec, pts[i], cache, i, train_idx)
                total += resid**2
                count += 1
        scores.append(total / max(count, 1))
    best = min(
        range(len(candidates)),
        key=lambda i: (
            scores[i],
            -(candidates[i].sigma_t + candidates[i].sigma_x + candidates[i].sigma_g + candidates[i].sigma_l),
        ),
    )
    return candidates[best]


def _subset_cache(cache, train_idx, pts):
    """Remap a global pair-corner cache onto a training subset.

    assemble() reorders interior-first; the global point list is already in
    that order, and subset selection preserves it.
    """
    remap = {}
    for a, gi in enumerate(train_idx):
        for b_, gj in enumerate(train_idx[a:], start=a):
            remap[(a, b_)] = cache[(gi, gj)]
    return remap


def _constraint_residual(model, spec, point, cache, point_idx, train_idx):
    """Held-out constraint residual against the trained representer weights.

    Interior held-out points score the operator row (Lu - source), boundary
    points the value row (u - terminal); both rows come from the cached pair
    corners, pairing the held-out functional with each training functional.
    """
    from .operator import pair_entries

    sys_ = model.system
    target = spec.terminal(point) if point.is_boundary else spec.source_value(point)
    row = np.empty(len(train_idx))
    for a, gi in enumerate(train_idx):
        train_pt = sys_.points[a]
        if point_idx <= gi:
            ent = pair_entries(spec, point, train_pt, sys_.params, cache[(point_idx, gi)])
            held, other = "left", "right"
        else:
            ent = pair_entries(spec, train_pt, point, sys_.params, cache[(gi, point_idx)])
            held, other = "right", "left"
        if point.is_boundary:
            row[a] = ent["kernel"] if train_pt.is_boundary else ent[other]
        else:
            row[a] = ent[held] if train_pt.is_boundary else ent["both"]
    return float(row @ model.weights - target)
