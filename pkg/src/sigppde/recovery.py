"""Collocation system assembly and the optimal-recovery solves.

Two equivalent routes are kept: the symmetric operator-applied Gram matrix
solved by Cholesky (default, GP-compatible) and the constrained quadratic
program solved through its KKT saddle system. The dominant cost, the
two-parameter kernel solves, is cached per point pair and shared between the
Gram blocks, the one-sided constraint matrix, and the prediction vectors.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .numerics import NumericalError, chol_with_jitter
from .operator import CollocationPoint, PpdeSpec, pair_corners, pair_entries
from .static_kernels import Lift, RbfParams


class NonConvergenceError(NumericalError):
    """Iterative solve ran out of iterations; carries the last iterate."""

    def __init__(self, message, last_iterate, objective, grad_norm):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.objective = objective
        self.grad_norm = grad_norm


def split_points(points: Sequence[CollocationPoint]):
    """Stable split into (interior, boundary) preserving relative order."""
    interior = [p for p in points if not p.is_boundary]
    boundary = [p for p in points if p.is_boundary]
    return interior, boundary


def compute_pair_corners(
    points: Sequence[CollocationPoint],
    lift: Lift = None,
    dyadic_order: int = 2,
    threads: int = 1,
) -> dict:
    """Corner tensors for all unordered point pairs, keyed by (i, j), i <= j.

    Derivative orders follow interior status: only interior points carry
    directions. Thread-parallel over pairs; each result lands in its own slot,
    so the outcome does not depend on scheduling.
    """
    n = len(points)
    keys = [(i, j) for i in range(n) for j in range(i, n)]

    def work(key):
        i, j = key
        return pair_corners(
            points[i],
            points[j],
            lift,
            dyadic_order,
            need_left=not points[i].is_boundary,
            need_right=not points[j].is_boundary,
        )

    if threads <= 1:
        return {key: work(key) for key in keys}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(work, keys))
    return dict(zip(keys, results))


def cross_corners(
    eval_points: Sequence[CollocationPoint],
    points: Sequence[CollocationPoint],
    lift: Lift = None,
    dyadic_order: int = 2,
    threads: int = 1,
    with_right: bool = True,
) -> dict:
    """Corners for evaluation-point x collocation-point pairs, keyed (r, i)."""
    keys = [(r, i) for r in range(len(eval_points)) for i in range(len(points))]

    def work(key):
        r, i = key
        return pair_corners(
            eval_points[r],
            points[i],
            lift,
            dyadic_order,
            need_left=False,
            need_right=with_right and not points[i].is_boundary,
        )

    if threads <= 1:
        return {key: work(key) for key in keys}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(work, keys))
    return dict(zip(keys, results))


@dataclass(frozen=True)
class GramSystem:
    """Operator-applied Gram matrix, one-sided constraint matrix, and data vector.

    G is ordered interior-first: blocks [[LLbar kappa, L kappa], [., kappa]].
    kernel holds the plain kernel Gram used by the KKT route.
    """

    G: np.ndarray
    K_tilde: np.ndarray
    b: np.ndarray
    kernel: np.ndarray
    jitter_used: float
    n_interior: int
    points: tuple = field(repr=False)
    spec: PpdeSpec = field(repr=False, default=None)
    params: RbfParams = None
    lift: Lift = None
    dyadic_order: int = 2
    corners: dict = field(repr=False, default=None)


def assemble(
    spec: PpdeSpec,
    points: Sequence[CollocationPoint],
    params: RbfParams,
    lift: Lift = None,
    dyadic_order: int = 2,
    threads: int = 1,
    corner_cache: dict | None = None,
) -> GramSystem:
    """Fill G (symmetric, operator applied on both sides), K_tilde, and b.

    Points are reordered interior-first. The jitter ladder is applied to G once
    here and the resulting jitter recorded.
    """
    interior, boundary = split_points(points)
    pts = interior + boundary
    m, n_total = len(interior), len(interior) + len(boundary)
    corners = corner_cache
    if corners is None:
        corners = compute_pair_corners(pts, lift, dyadic_order, threads)
    G = np.empty((n_total, n_total))
    K_tilde = np.empty((n_total, n_total))
    kernel = np.empty((n_total, n_total))
    for i in range(n_total):
        for j in range(i, n_total):
            ent = pair_entries(spec, pts[i], pts[j], params, corners[(i, j)])
            kernel[i, j] = kernel[j, i] = ent["kernel"]
            if i < m and j < m:
                G[i, j] = G[j, i] = ent["both"]
            elif i < m <= j:
                G[i, j] = G[j, i] = ent["left"]
            else:
                G[i, j] = G[j, i] = ent["kernel"]
            # one-sided rows: operator on the row point where interior
            K_tilde[i, j] = ent["left"] if i < m else ent["kernel"]
            K_tilde[j, i] = ent["right"] if j < m else ent["kernel"]
    if pts[m:] and spec.terminal is None:
        raise ValueError("spec.terminal is required to assemble boundary data")
    b = np.array(
        [spec.source_value(p) for p in pts[:m]] + [float(spec.terminal(p)) for p in pts[m:]]
    )
    jitter = 0.0
    if n_total:
        try:
            _, jitter = chol_with_jitter(G)
        except NumericalError:
            raise _singular_error(G) from None
    return GramSystem(
        G=G,
        K_tilde=K_tilde,
        b=b,
        kernel=kernel,
        jitter_used=jitter,
        n_interior=m,
        points=tuple(pts),
        spec=spec,
        params=params,
        lift=lift,
        dyadic_order=dyadic_order,
        corners=corners,
    )


def _singular_error(G: np.ndarray) -> NumericalError:
    d = np.sqrt(np.clip(np.diag(G), 1e-300, None))
    corr = np.abs(G / np.outer(d, d))
    np.fill_diagonal(corr, 0.0)
    i, j = np.unravel_index(np.argmax(corr), corr.shape)
    return NumericalError(
        f"Gram matrix singular beyond jitter; nearest-duplicate pair ({i}, {j}) "
        f"with correlation {corr[i, j]:.6f}"
    )


@dataclass(frozen=True)
class RecoveryModel:
    """Trained weights plus everything needed to evaluate the predictor.

    route "symmetric": u = a(.) G^-1 b over operator-applied sections;
    routes "kkt" and "nonlinear": weights over the augmented span
    [plain sections at all points; operator-applied sections at interior].
    """

    weights: np.ndarray
    route: str
    system: GramSystem
    threads: int = 1
    diagnostics: dict = field(default_factory=dict)

    @property
    def points(self):
        return self.system.points


def solve_linear(system: GramSystem, method: str = "symmetric", ridge: float = 0.0) -> RecoveryModel:
    """Closed-form solve: symmetric route w = G^-1 b, or the KKT saddle system.

    ridge adds an observation-noise nugget ridge * trace(G) to the diagonal on
    top of the PSD-repair jitter, trading exact constraint interpolation for
    smoothness (useful when the target lies outside the RKHS, e.g. payoffs
    with a time cusp at the horizon).
    """
    if method == "symmetric":
        if len(system.b) == 0:
            return RecoveryModel(weights=np.zeros(0), route="symmetric", system=system)
        n = len(system.b)
        reg = system.jitter_used + ridge * np.trace(system.G)
        G = system.G + reg * np.eye(n)
        L = np.linalg.cholesky(G)
        w = cho_solve((L, True), system.b)
        if not np.all(np.isfinite(w)):
            raise NumericalError("non-finite weights from the symmetric solve")
        return RecoveryModel(
            weights=w, route="symmetric", system=system, diagnostics={"regularization": reg}
        )
    if method == "kkt":
        K_full, C = kkt_blocks(system)
        b = system.b
        n = len(b)
        if n == 0:
            return RecoveryModel(weights=np.zeros(0), route="kkt", system=system)
        n_basis = K_full.shape[0]
        saddle = np.block([[K_full, C.T], [C, np.zeros((n, n))]])
        rhs = np.concatenate([np.zeros(n_basis), b])
        sol = np.linalg.lstsq(saddle, rhs, rcond=None)[0]
        alpha = sol[:n_basis]
        resid = np.linalg.norm(C @ alpha - b)
        if not np.isfinite(resid) or resid > 1e-6 * max(1.0, np.linalg.norm(b)):
            raise NumericalError(f"KKT constraints unsatisfied, residual {resid:.3e}")
        return RecoveryModel(weights=alpha, route="kkt", system=system)
    raise ValueError(f"unknown method {method!r}")


def kkt_blocks(system: GramSystem):
    """Quadratic program data for the constrained route.

    The candidate span joins the plain kernel sections at all collocation
    points with the operator-applied sections at interior points, so it
    contains the minimal-norm interpolant; minimizing the RKHS norm under
    K_tilde-style constraints then reproduces the symmetric route's predictor.
    Returns (basis Gram, constraint matrix).
    """
    m = system.n_interior
    K, Kt, G = system.kernel, system.K_tilde, system.G
    # <kappa_j, psi_i> = psi_i(omega_j) = Kt[i, j]; <psi_i, psi_j> = G[i, j]
    K_full = np.block([[K, Kt[:m, :].T], [Kt[:m, :], G[:m, :m]]])
    C = np.concatenate([Kt, G[:, :m]], axis=1)
    return K_full, C


def _a_matrix(
    model: RecoveryModel,
    eval_points: Sequence[CollocationPoint],
    cross_cache: dict | None = None,
) -> np.ndarray:
    """Rows a(omega) pairing evaluation points with the model's functionals."""
    sys_ = model.system
    pts = sys_.points
    m = sys_.n_interior
    cc = cross_cache
    if cc is None:
        cc = cross_corners(
            eval_points, pts, sys_.lift, sys_.dyadic_order, model.threads, with_right=True
        )
    n_eval = len(eval_points)
    rows = np.empty((n_eval, len(model.weights)))
    for r in range(n_eval):
        ent = [
            pair_entries(sys_.spec, eval_points[r], pts[i], sys_.params, cc[(r, i)])
            for i in range(len(pts))
        ]
        if model.route == "symmetric":
            rows[r] = [ent[i]["right"] if i < m else ent[i]["kernel"] for i in range(len(pts))]
        else:  # augmented span: values at all points, then operator sections at interior
            rows[r] = [e["kernel"] for e in ent] + [ent[i]["right"] for i in range(m)]
    return rows


def predict(model: RecoveryModel, points) -> np.ndarray | float:
    """u(omega) = a(omega) . weights for a point or a batch of points."""
    single = isinstance(points, CollocationPoint)
    eval_points = [points] if single else list(points)
    if len(model.weights) == 0:
        out = np.zeros(len(eval_points))
        return float(out[0]) if single else out
    out = _a_matrix(model, eval_points) @ model.weights
    return float(out[0]) if single else out


def gp_posterior(model: RecoveryModel, test_points: Sequence[CollocationPoint]):
    """Posterior mean and covariance of the collocation-conditioned GP.

    Mean coincides with predict; covariance is kappa(., .) minus the Gram
    quadratic form, symmetrized and jittered to PSD.
    """
    if model.route != "symmetric":
        raise ValueError("gp_posterior needs the symmetric route")
    test_points = list(test_points)
    n = len(test_points)
    sys_ = model.system
    prior = np.empty((n, n))
    cc = cross_corners(test_points, test_points, sys_.lift, sys_.dyadic_order, model.threads, with_right=False)
    for r in range(n):
        for c in range(n):
            if c < r:
                prior[r, c] = prior[c, r]
            else:
                prior[r, c] = pair_entries(None, test_points[r], test_points[c], sys_.params, cc[(r, c)])["kernel"]
    if len(model.weights) == 0:
        return np.zeros(n), prior
    A = _a_matrix(model, test_points)
    mean = A @ model.weights
    reg = model.diagnostics.get("regularization", sys_.jitter_used)
    Gj = sys_.G + reg * np.eye(len(sys_.b))
    L = np.linalg.cholesky(Gj)
    cov = prior - A @ cho_solve((L, True), A.T)
    cov = 0.5 * (cov + cov.T)
    # near-interpolation points drive cov toward zero, so the ladder scales by
    # the prior rather than cov's own trace
    scale = max(np.trace(prior), 1e-300)
    jit, frac = 0.0, 1e-12
    while True:
        try:
            np.linalg.cholesky(cov + jit * np.eye(n))
            return mean, cov + jit * np.eye(n)
        except np.linalg.LinAlgError:
            if frac > 1e-6:
                raise NumericalError("posterior covariance not PSD after jitter") from None
            jit = frac * scale
            frac *= 10.0


# ---------------------------------------------------------------------------
# nonlinear route
# ---------------------------------------------------------------------------


def _extended_gram(system: GramSystem) -> np.ndarray:
    """Gram of [evaluations at all points; operator functionals at interior]."""
    pts = system.points
    n = len(pts)
    m = system.n_interior
    K = system.kernel
    EL = np.empty((n, m))
    LL = np.empty((m, m))
    for i in range(n):
        for j in range(m):
            key = (i, j) if i <= j else (j, i)
            ent = pair_entries(system.spec, pts[min(i, j)], pts[max(i, j)], system.params, system.corners[key])
            EL[i, j] = ent["right"] if i <= j else ent["left"]
    for i in range(m):
        for j in range(m):
            key = (min(i, j), max(i, j))
            ent = pair_entries(system.spec, pts[key[0]], pts[key[1]], system.params, system.corners[key])
            LL[i, j] = ent["both"]
    LL = 0.5 * (LL + LL.T)
    return np.block([[K, EL], [EL.T, LL]])


def solve_nonlinear(
    spec: PpdeSpec,
    points: Sequence[CollocationPoint],
    params: RbfParams,
    lift: Lift = None,
    psi_nl: Callable[[np.ndarray], np.ndarray] = None,
    psi_prime: Callable[[np.ndarray], np.ndarray] | None = None,
    step: float = 1.0,
    max_iters: int = 5000,
    tol: float = 1e-8,
    dyadic_order: int = 2,
    threads: int = 1,
) -> RecoveryModel:
    """Two-level route for a pointwise nonlinearity in the operator constraint.

    Minimizes v(z)^T Gext^-1 v(z) over the interior values z, where v stacks
    [z; boundary targets; -psi_nl(z)], by gradient descent with backtracking
    Armijo line search (c = 1e-4, halving). psi_prime defaults to a central
    difference of psi_nl.
    """
    if psi_nl is None:
        psi_nl = lambda z: np.zeros_like(z)
    if psi_prime is None:
        fd = 1e-6

        def psi_prime(z):
            return (psi_nl(z + fd) - psi_nl(z - fd)) / (2.0 * fd)

    system = assemble(spec, points, params, lift, dyadic_order, threads)
    pts = system.points
    m = system.n_interior
    n = len(pts)
    f_bdry = np.array([float(spec.terminal(p)) for p in pts[m:]])
    gext = _extended_gram(system)
    L, jit = chol_with_jitter(gext)
    Lj = np.linalg.cholesky(gext + jit * np.eye(len(gext))) if jit else L

    def stack(z):
        return np.concatenate([z, f_bdry, -np.asarray(psi_nl(z))])

    def objective_and_grad(z):
        v = stack(z)
        qv = cho_solve((Lj, True), v)
        obj = float(v @ qv)
        grad = 2.0 * (qv[:m] - psi_prime(z) * qv[n:])
        return obj, grad

    z = np.full(m, float(np.mean(f_bdry)) if len(f_bdry) else 0.0)
    # descend in the Gauss-Newton metric of the initial Jacobian: the raw
    # gradient flow is too ill-conditioned to meet the tolerance in finite time
    jac = np.zeros((n + m, m))
    jac[:m] = np.eye(m)
    jac[n:] = -np.diag(np.atleast_1d(psi_prime(z)) * np.ones(m))
    metric = 2.0 * jac.T @ cho_solve((Lj, True), jac)
    metric += 1e-12 * max(np.trace(metric), 1.0) * np.eye(m)
    Lm = np.linalg.cholesky(metric)

    obj, grad = objective_and_grad(z)
    gnorm = float(np.linalg.norm(grad))
    iterations = 0
    for iterations in range(1, max_iters + 1):
        if gnorm <= tol:
            break
        direction = cho_solve((Lm, True), grad)
        slope = float(grad @ direction)
        lr = step
        accepted = False
        while lr >= 1e-16:
            z_new = z - lr * direction
            obj_new, grad_new = objective_and_grad(z_new)
            if obj_new <= obj - 1e-4 * lr * slope:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break  # flat to machine precision
        z, obj, grad = z_new, obj_new, grad_new
        gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise NonConvergenceError(
            f"gradient descent did not reach tol={tol:g} in {max_iters} iterations "
            f"(|grad|={gnorm:.3e})",
            last_iterate=z,
            objective=obj,
            grad_norm=gnorm,
        )
    weights = cho_solve((Lj, True), stack(z))
    return RecoveryModel(
        weights=weights,
        route="nonlinear",
        system=system,
        threads=threads,
        diagnostics={"objective": obj, "grad_norm": gnorm, "iterations": iterations, "z": z},
    )


# ---------------------------------------------------------------------------
# model serialization
# ---------------------------------------------------------------------------


def save_model(model: RecoveryModel, directory) -> None:
    """Write a trained model as a JSON envelope plus per-point path CSV files.

    The envelope records the PPDE kind and parameters, the kernel bandwidths,
    the trained weights, and references to the gamma/direction CSVs of each
    collocation point. Data callables (terminal/source) are not serialized;
    a loaded model predicts but cannot be re-assembled.
    """
    import json
    from pathlib import Path as FsPath

    from .paths import BergomiParams, FbmSpec  # noqa: F401 (documented schema)

    directory = FsPath(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sys_ = model.system
    point_refs = []
    for i, p in enumerate(sys_.points):
        gamma_file = f"point_{i:04d}_gamma.csv"
        direction_file = f"point_{i:04d}_direction.csv"
        (directory / gamma_file).write_text(p.gamma.to_csv())
        (directory / direction_file).write_text(p.direction.to_csv())
        point_refs.append(
            {
                "t": p.t,
                "x": np.asarray(p.x).tolist(),
                "gamma": gamma_file,
                "direction": direction_file,
                "time_channel": p.time_channel,
            }
        )
    spec = sys_.spec
    envelope = {
        "spec": {
            "kind": spec.kind,
            "fbm": {"hurst": spec.fbm.hurst, "scale": spec.fbm.scale, "horizon": spec.fbm.horizon},
            "bergomi": None
            if spec.bergomi is None
            else {
                "xi": spec.bergomi.xi,
                "vol_of_vol": spec.bergomi.vol_of_vol,
                "rho": spec.bergomi.rho,
                "hurst": spec.bergomi.hurst,
                "spot_log": spec.bergomi.spot_log,
            },
            "delta": spec.delta,
        },
        "params": {
            "sigma_t": sys_.params.sigma_t,
            "sigma_x": sys_.params.sigma_x,
            "sigma_g": sys_.params.sigma_g,
            "sigma_l": sys_.params.sigma_l,
            "time_warp": sys_.params.time_warp,
        },
        "lift": None if sys_.lift is None else {"sigma": sys_.lift.sigma},
        "dyadic_order": sys_.dyadic_order,
        "route": model.route,
        "n_interior": sys_.n_interior,
        "weights": model.weights.tolist(),
        "gram": sys_.G.tolist(),
        "b": sys_.b.tolist(),
        "jitter_used": sys_.jitter_used,
        "points": point_refs,
    }
    (directory / "model.json").write_text(json.dumps(envelope, indent=2, sort_keys=True))


def load_model(directory) -> RecoveryModel:
    """Load a model written by save_model; supports prediction and posteriors."""
    import json
    from pathlib import Path as FsPath

    from .operator import CollocationPoint, PpdeSpec
    from .paths import BergomiParams, FbmSpec
    from .paths import Path as SigPath
    from .static_kernels import RbfLift, RbfParams

    directory = FsPath(directory)
    env = json.loads((directory / "model.json").read_text())
    points = []
    for ref in env["points"]:
        gamma = SigPath.from_csv((directory / ref["gamma"]).read_text())
        direction = SigPath.from_csv((directory / ref["direction"]).read_text())
        points.append(
            CollocationPoint(
                t=ref["t"],
                x=np.asarray(ref["x"], dtype=float),
                gamma=gamma,
                direction=direction,
                time_channel=ref["time_channel"],
            )
        )
    spec_obj = env["spec"]
    bergomi = None if spec_obj["bergomi"] is None else BergomiParams(**spec_obj["bergomi"])
    spec = PpdeSpec(
        kind=spec_obj["kind"],
        fbm=FbmSpec(**spec_obj["fbm"]),
        terminal=None,
        bergomi=bergomi,
        delta=spec_obj["delta"],
    )
    params = RbfParams(**env["params"])
    lift = None if env["lift"] is None else RbfLift(env["lift"]["sigma"])
    weights = np.asarray(env["weights"], dtype=float)
    n = len(points)
    system = GramSystem(
        G=np.asarray(env["gram"], dtype=float),
        K_tilde=np.zeros((n, n)),
        b=np.asarray(env["b"], dtype=float),
        kernel=np.zeros((n, n)),
        jitter_used=env["jitter_used"],
        n_interior=env["n_interior"],
        points=tuple(points),
        spec=spec,
        params=params,
        lift=lift,
        dyadic_order=env["dyadic_order"],
    )
    return RecoveryModel(weights=weights, route=env["route"], system=system)
