"""Product kernel on (time, state, path) triples and the PPDE operator applied
to kernel sections.

The kernel factorizes as k((t,x),(t',x')) * l(gamma_0, tau_0) * ksig(gamma -
gamma_0, tau - tau_0), so time/state derivatives act on the time-space factor
in closed form while pathwise derivatives act on the signature factor through
the two-parameter solver. Directions vanish at time zero, so the
starting-point factor never enters the product rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .goursat import two_sided_corners
from .paths import BergomiParams, FbmSpec, Path
from .static_kernels import Lift, RbfParams, gauss_pair_derivative

_ATOL = 1e-12


@dataclass(frozen=True)
class CollocationPoint:
    """A point omega = (t, x, gamma) with the direction path for operator rows.

    gamma must be constant strictly before t on its non-time channels (the
    node at t itself may carry the closing value of a conditional path) and
    the direction must vanish on [0, t]. time_channel marks a channel excluded
    from the constancy check (0 for time-augmented layouts, None when absent).
    """

    t: float
    x: np.ndarray
    gamma: Path
    direction: Path
    time_channel: int | None = None

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        grid = self.gamma.grid
        if not grid.t0 - _ATOL <= self.t <= grid.t1 + _ATOL:
            raise ValueError(f"t={self.t} outside the path grid [{grid.t0}, {grid.t1}]")
        if self.direction.channels != self.gamma.channels:
            raise ValueError("direction and gamma must share the channel layout")
        strictly_before = grid.nodes < self.t - _ATOL
        for c in range(self.gamma.channels):
            if c == self.time_channel:
                continue
            col = self.gamma.values[strictly_before, c]
            if col.size and not np.allclose(col, col[0], atol=1e-10):
                raise ValueError(f"gamma channel {c} not constant before t")
        on_or_before = grid.nodes <= self.t + _ATOL
        if not np.allclose(self.direction.values[on_or_before], 0.0, atol=1e-10):
            raise ValueError("direction must vanish on [0, t]")

    @property
    def is_boundary(self) -> bool:
        return self.t >= self.gamma.grid.t1 - _ATOL

    def recentered(self) -> Path:
        return Path(grid=self.gamma.grid, values=self.gamma.values - self.gamma.values[0])


@dataclass(frozen=True)
class PpdeSpec:
    """Which PPDE operator to collocate, with its data functions.

    kind "fbm_heat": du/dt + 1/2 d2u along the direction = source (default 0).
    kind "rough_bergomi": adds the state terms with spot variance read from the
    path and the mixed state/path term weighted by rho.
    terminal maps a boundary point to its target value; it may be None on a
    deserialized spec (prediction does not need it, re-assembly does).
    """

    kind: str
    fbm: FbmSpec
    terminal: Callable[[CollocationPoint], float] | None
    bergomi: BergomiParams | None = None
    source: Callable[[CollocationPoint], float] | None = None
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fbm_heat", "rough_bergomi"):
            raise ValueError(f"unknown PPDE kind {self.kind!r}")
        if self.kind == "rough_bergomi" and self.bergomi is None:
            raise ValueError("rough_bergomi needs BergomiParams")
        if self.delta < 0.0:
            raise ValueError("delta must be >= 0")

    def source_value(self, point: CollocationPoint) -> float:
        return 0.0 if self.source is None else float(self.source(point))


def variance_state(point: CollocationPoint) -> float:
    """Current variance-channel state at a point: the right-limit node value.

    Conditional paths are extended by zero up to their own time, so the value
    at the first node strictly after t is the discrete stand-in for the state
    the diffusion sees at t.
    """
    grid = point.gamma.grid
    k = grid.node_index(point.t)
    k = min(k + 1, grid.n_steps)
    return float(point.gamma.values[k, -1])


def _operator_terms(spec: PpdeSpec, point: CollocationPoint):
    """(t_order, x_order, sig_order, coefficient) summands of the operator row."""
    if spec.kind == "fbm_heat":
        return [(1, 0, 0, 1.0), (0, 0, 2, 0.5)]
    par = spec.bergomi
    psi = par.variance(point.t, variance_state(point))
    sq = float(np.sqrt(psi))
    return [
        (1, 0, 0, 1.0),
        (0, 2, 0, 0.5 * psi),
        (0, 1, 0, -0.5 * psi),
        (0, 0, 2, 0.5),
        (0, 1, 1, par.rho * sq),
    ]


def _clock(params: RbfParams, point: CollocationPoint):
    """Kernel time coordinate and its t-derivative (chain-rule factor).

    Plain clock phi(t) = t unless params.time_warp = p is set, in which case
    phi(t) = (T - t)^p; the factor at t = T is zeroed (never used: operators
    are not applied at boundary points).
    """
    if params.time_warp is None:
        return point.t, 1.0
    p = params.time_warp
    lag = point.gamma.grid.t1 - point.t
    if lag <= _ATOL:
        return 0.0, 0.0
    return lag**p, -p * lag ** (p - 1.0)


def _factor_tables(p1: CollocationPoint, p2: CollocationPoint, params: RbfParams):
    """Time/state Gaussian derivative tables; the PPDE operators use time
    orders <= 1 and state orders <= 2."""
    phi1, dphi1 = _clock(params, p1)
    phi2, dphi2 = _clock(params, p2)
    du_t = phi1 - phi2
    chain = np.array([[1.0, dphi2], [dphi1, dphi1 * dphi2]])
    tt = chain * np.array(
        [[gauss_pair_derivative(du_t, params.sigma_t, m, n) for n in range(2)] for m in range(2)]
    )
    if p1.x.size == 0:
        xx = np.ones((3, 3))
    elif p1.x.size == 1:
        du_x = float(p1.x[0] - p2.x[0])
        xx = np.array(
            [[gauss_pair_derivative(du_x, params.sigma_x, m, n) for n in range(3)] for m in range(3)]
        )
    else:
        # multi-channel states carry no x-derivatives in the supported operators
        d = p1.x - p2.x
        xx = np.full((3, 3), np.nan)
        xx[0, 0] = np.exp(-(d @ d) / (2.0 * params.sigma_x**2))
    return tt, xx


def _start_factor(p1: CollocationPoint, p2: CollocationPoint, params: RbfParams) -> float:
    d = p1.gamma.values[0] - p2.gamma.values[0]
    return float(np.exp(-(d @ d) / (2.0 * params.sigma_l**2)))


def pair_corners(
    p1: CollocationPoint,
    p2: CollocationPoint,
    lift: Lift = None,
    dyadic_order: int = 2,
    need_left: bool = True,
    need_right: bool = True,
) -> np.ndarray:
    """Signature-factor corner derivatives for a point pair.

    Entry (mu, nu) holds the mu-th derivative along p1's direction and nu-th
    along p2's direction of the signature kernel of the recentered paths.
    """
    eta = p1.direction if need_left else None
    chi = p2.direction if need_right else None
    return two_sided_corners(
        p1.recentered(), p2.recentered(), eta, chi, lift=lift, dyadic_order=dyadic_order
    )


def pair_entries(
    spec: PpdeSpec | None,
    p1: CollocationPoint,
    p2: CollocationPoint,
    params: RbfParams,
    corners: np.ndarray,
) -> dict:
    """kernel / operator-applied values for a pair from precomputed corners.

    Returns entries "kernel", and "left", "right", "both" where the operator
    argument is interior and the corners carry the needed derivative orders.
    spec=None computes the plain kernel entry only.
    """
    tt, xx = _factor_tables(p1, p2, params)
    ell = _start_factor(p1, p2, params)
    out = {"kernel": ell * tt[0, 0] * xx[0, 0] * corners[0, 0]}
    if spec is None:
        return out
    mu_avail = corners.shape[0] - 1
    nu_avail = corners.shape[1] - 1
    if not p1.is_boundary and mu_avail >= 2:
        acc = 0.0
        for mt, mx, ms, w in _operator_terms(spec, p1):
            acc += w * tt[mt, 0] * xx[mx, 0] * corners[ms, 0]
        out["left"] = ell * acc
    if not p2.is_boundary and nu_avail >= 2:
        acc = 0.0
        for nt, nx, ns, w in _operator_terms(spec, p2):
            acc += w * tt[0, nt] * xx[0, nx] * corners[0, ns]
        out["right"] = ell * acc
    if not p1.is_boundary and not p2.is_boundary and mu_avail >= 2 and nu_avail >= 2:
        acc = 0.0
        for mt, mx, ms, wl in _operator_terms(spec, p1):
            for nt, nx, ns, wr in _operator_terms(spec, p2):
                acc += wl * wr * tt[mt, nt] * xx[mx, nx] * corners[ms, ns]
        out["both"] = ell * acc
    return out


def product_kernel(
    p1: CollocationPoint,
    p2: CollocationPoint,
    params: RbfParams,
    lift: Lift = None,
    dyadic_order: int = 2,
) -> float:
    """kappa(omega, omega') = k((t,x),(t',x')) * l(gamma_0, tau_0) * ksig(recentered)."""
    corners = pair_corners(p1, p2, lift, dyadic_order, need_left=False, need_right=False)
    return pair_entries(None, p1, p2, params, corners)["kernel"]


def apply_L(
    spec: PpdeSpec,
    p1: CollocationPoint,
    p2: CollocationPoint,
    params: RbfParams,
    lift: Lift = None,
    side: str = "left",
    dyadic_order: int = 2,
) -> float:
    """Operator applied to kappa at p1 (side="left"), or at both points with
    each point's own direction (side="both", the symmetric Gram entries)."""
    if p1.is_boundary:
        raise ValueError("operator rows need an interior point (t < T)")
    if side not in ("left", "both"):
        raise ValueError(f"side must be 'left' or 'both', got {side!r}")
    if side == "both" and p2.is_boundary:
        raise ValueError("side='both' needs a second interior point")
    corners = pair_corners(
        p1, p2, lift, dyadic_order, need_left=True, need_right=(side == "both")
    )
    return pair_entries(spec, p1, p2, params, corners)[
        "left" if side == "left" else "both"
    ]
