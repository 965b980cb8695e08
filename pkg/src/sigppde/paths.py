"""Discretized paths on a shared uniform grid, their norms, and the stochastic
path constructors (fractional kernel directions, conditional paths, Volterra
drivers) used by the collocation experiments.

Every path in a problem instance lives on one shared uniform grid over [t0, t1];
directions and conditional paths are stored full-length and are zero before
their support starts.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import NumericalError, chol_with_jitter

_NODE_ATOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + k*(t1-t0)/n_steps, k = 0..n_steps."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got [{self.t0}, {self.t1}]")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def node_index(self, t: float) -> int:
        """Index of the grid node equal to t; raises if t is not a node."""
        k = round((t - self.t0) / self.dt)
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.dt - t) > _NODE_ATOL * max(1.0, abs(self.t1)):
            raise ValueError(f"t={t} is not a node of {self}")
        return int(k)


@dataclass(frozen=True)
class Path:
    """A piecewise-linear path: values[k, c] is channel c at grid node k."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"values has {vals.shape[0]} rows, grid has {self.grid.n_steps + 1} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def increments(self) -> np.ndarray:
        """Per-cell increments, shape (n_steps, channels)."""
        return np.diff(self.values, axis=0)

    # -- serialization ------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s"] + [f"ch{c}" for c in range(self.channels)])
        for s, row in zip(self.grid.nodes, self.values):
            writer.writerow([f"{s:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Path":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "s":
            raise ValueError("path CSV must start with header 's,ch0,...'")
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        nodes, values = data[:, 0], data[:, 1:]
        n = len(nodes) - 1
        grid = TimeGrid(t0=nodes[0], t1=nodes[-1], n_steps=n)
        if not np.allclose(nodes, grid.nodes, atol=1e-9):
            raise ValueError("path CSV nodes are not a uniform grid")
        return cls(grid=grid, values=values)

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid": {"t0": self.grid.t0, "t1": self.grid.t1, "n_steps": self.grid.n_steps},
                "channels": self.channels,
                "values": self.values.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Path":
        obj = json.loads(text)
        grid = TimeGrid(**obj["grid"])
        return cls(grid=grid, values=np.array(obj["values"], dtype=float))


@dataclass(frozen=True)
class FbmSpec:
    """Fractional kernel (s - r)^(H - 1/2) with an explicit scale convention.

    scale = sqrt(2H) gives the normalization used by the pricing experiments
    (unit terminal variance rate); scale = 1 gives the bare kernel.
    """

    hurst: float
    scale: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise ValueError(f"hurst must lie in (0,1), got {self.hurst}")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")

    def kernel(self, lag) -> np.ndarray:
        """scale * lag^(H-1/2) for positive lags; never call at lag <= 0."""
        return self.scale * np.power(lag, self.hurst - 0.5)


@dataclass(frozen=True)
class BergomiParams:
    """Rough Bergomi parameters: forward variance level, vol-of-vol, correlation."""

    xi: float
    vol_of_vol: float
    rho: float
    hurst: float
    spot_log: float = 0.0

    def __post_init__(self):
        if self.xi <= 0.0:
            raise ValueError("xi must be positive")
        if not abs(self.rho) < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if not 0.0 < self.hurst <= 0.5:
            raise ValueError("hurst must lie in (0, 1/2]")

    def variance(self, t, y):
        """Spot variance xi * exp(nu*y - nu^2/2 * t^(2H)) at state y, time t."""
        nu = self.vol_of_vol
        return self.xi * np.exp(nu * y - 0.5 * nu * nu * np.power(t, 2.0 * self.hurst))


# ---------------------------------------------------------------------------
# path constructors
# ---------------------------------------------------------------------------


def make_kernel_direction(
    t: float,
    delta: float,
    spec: FbmSpec,
    grid: TimeGrid,
    shift: float = 0.0,
) -> Path:
    """Fractional-kernel direction path: 0 for s <= t, scale*(min(s, t+delta)-t)^(H-1/2) after.

    delta > 0 truncates (clamps the kernel argument at delta); delta = 0 leaves the
    bare kernel. The singular point s = t is never evaluated: the first node
    strictly after t is the earliest nonzero node. shift > 0 switches to the
    shifted regularization (arg + shift)^(H-1/2).
    """
    if not grid.t0 <= t < grid.t1:
        raise ValueError(f"t={t} outside [{grid.t0}, {grid.t1})")
    if delta < 0.0:
        raise ValueError("delta must be >= 0")
    if shift < 0.0:
        raise ValueError("shift must be >= 0")
    nodes = grid.nodes
    vals = np.zeros(len(nodes))
    after = nodes > t + _NODE_ATOL
    lag = nodes[after] - t
    if delta > 0.0:
        lag = np.minimum(lag, delta)
    vals[after] = spec.kernel(lag + shift)
    return Path(grid=grid, values=vals[:, None])


def simulate_theta(
    t: float,
    spec: FbmSpec,
    grid: TimeGrid,
    brownian_increments: np.ndarray,
) -> Path:
    """Conditional path: 0 for s <= t, left-point sum over cells before t after.

    Value at node s > t is sum_{r_k < t} K(s - r_k) * dW_k with the kernel read
    at s - r_k > 0, so the singularity is never touched.
    """
    k_t = grid.node_index(t)
    dw = np.asarray(brownian_increments, dtype=float)
    if dw.shape != (grid.n_steps,):
        raise ValueError(f"expected {grid.n_steps} increments, got shape {dw.shape}")
    nodes = grid.nodes
    vals = np.zeros(len(nodes))
    if k_t > 0:
        # lag matrix (nodes after t) x (cell left ends before t); all lags positive
        lag = nodes[k_t + 1 :, None] - nodes[None, :k_t]
        vals[k_t + 1 :] = spec.kernel(lag) @ dw[:k_t]
    return Path(grid=grid, values=vals[:, None])


@lru_cache(maxsize=32)
def _midpoint_weights(spec: FbmSpec, grid: TimeGrid) -> np.ndarray:
    """Lower-triangular convolution weights W[j, k] = K(s_j - mid_k) for k < j."""
    nodes = grid.nodes
    mids = nodes[:-1] + 0.5 * grid.dt
    n = grid.n_steps
    w = np.zeros((n + 1, n))
    for j in range(1, n + 1):
        w[j, :j] = spec.kernel(nodes[j] - mids[:j])
    w.setflags(write=False)
    return w


def forward_volterra_weights(t: float, spec: FbmSpec, grid: TimeGrid) -> np.ndarray:
    """Convolution weights restricted to cells in [t, s]; rows s <= t are zero."""
    k_t = grid.node_index(t)
    w = _midpoint_weights(spec, grid).copy()
    w[:, :k_t] = 0.0
    w[: k_t + 1, :] = 0.0
    return w


def simulate_volterra(
    spec: FbmSpec,
    grid: TimeGrid,
    brownian_increments: np.ndarray,
    method: str = "convolution",
) -> Path:
    """Riemann-Liouville Volterra path from Brownian increments.

    method="convolution": kernel read at cell midpoints (hybrid-scheme-lite).
    method="cholesky": exact covariance by quadrature, sampled via the jittered
    Cholesky factor applied to the normalized increments.
    """
    dw = np.asarray(brownian_increments, dtype=float)
    if dw.shape != (grid.n_steps,):
        raise ValueError(f"expected {grid.n_steps} increments, got shape {dw.shape}")
    if method == "convolution":
        vals = _midpoint_weights(spec, grid) @ dw
    elif method == "cholesky":
        z = dw / np.sqrt(grid.dt)
        vals = np.concatenate([[0.0], _covariance_factor(spec, grid) @ z])
    else:
        raise ValueError(f"unknown method {method!r}")
    return Path(grid=grid, values=vals[:, None])


@lru_cache(maxsize=8)
def _covariance_factor(spec: FbmSpec, grid: TimeGrid) -> np.ndarray:
    try:
        L, _ = chol_with_jitter(volterra_covariance(spec, grid))
    except NumericalError:
        raise NumericalError("Volterra covariance not factorizable after jitter") from None
    L.setflags(write=False)
    return L


def volterra_covariance(spec: FbmSpec, grid: TimeGrid, quad_points: int = 400) -> np.ndarray:
    """Cov(W^H_s, W^H_u) = scale^2 int_0^(s^u) (s-r)^(H-1/2) (u-r)^(H-1/2) dr.

    Diagonal entries use the closed form s^(2H)/(2H). Off-diagonal integrals
    substitute v = (s-r)^(H+1/2), which flattens the kernel's edge singularity at
    r = s, and apply the midpoint rule in v. Covers the grid nodes excluding
    node 0 (deterministically zero).
    """
    nodes = grid.nodes[1:] - grid.t0
    n = len(nodes)
    h = spec.hurst
    p = h + 0.5
    x = (np.arange(quad_points) + 0.5) / quad_points
    cov = np.empty((n, n))
    for i in range(n):
        s = nodes[i]
        cov[i, i] = spec.scale**2 * s ** (2.0 * h) / (2.0 * h)
        for j in range(i + 1, n):
            u = nodes[j]
            v = s**p * x
            dv = s**p / quad_points
            val = spec.scale**2 / p * np.sum((u - s + v ** (1.0 / p)) ** (h - 0.5)) * dv
            cov[i, j] = cov[j, i] = val
    return cov


def simulate_forward_volterra(
    t: float,
    spec: FbmSpec,
    grid: TimeGrid,
    increments: np.ndarray,
) -> Path:
    """Forward Volterra path: 0 for s <= t, midpoint convolution over cells in [t, s]."""
    dw = np.asarray(increments, dtype=float)
    if dw.shape != (grid.n_steps,):
        raise ValueError(f"expected {grid.n_steps} increments, got shape {dw.shape}")
    vals = forward_volterra_weights(t, spec, grid) @ dw
    return Path(grid=grid, values=vals[:, None])


# ---------------------------------------------------------------------------
# norms and channel layout
# ---------------------------------------------------------------------------


def sup_norm(p: Path) -> float:
    """Supremum of Euclidean node norms."""
    return float(np.max(np.linalg.norm(p.values, axis=1)))


def one_variation(p: Path) -> float:
    """Sum of Euclidean increment norms over cells (1-variation of the polyline)."""
    return float(np.sum(np.linalg.norm(p.increments(), axis=1)))


def time_augment(p: Path) -> Path:
    """Prepend channel 0 holding horizon-normalized time s / t1.

    Not idempotent: augmenting twice yields two time channels.
    """
    tcol = p.grid.nodes / p.grid.t1
    return Path(grid=p.grid, values=np.column_stack([tcol, p.values]))
