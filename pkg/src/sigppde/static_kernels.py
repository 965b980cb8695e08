"""Scalar kernels on state space and their derivatives.

Provides the RBF kernel and its first/second derivatives, the per-cell
increment fields that drive the two-parameter kernel solver, and the 1-d
Gaussian derivative table used when differentiating the time-space factor of
the product kernel in one or both arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import Path


@dataclass(frozen=True)
class RbfParams:
    """Bandwidths of the product-kernel factors.

    sigma_t: time coordinate of the time-space kernel.
    sigma_x: state coordinate(s) of the time-space kernel.
    sigma_g: lift kernel acting on path values.
    sigma_l: starting-point kernel.
    time_warp: optional exponent p; when set, the time factor acts on the
        fractional clock (T - t)^p instead of t, which resolves terminal-value
        profiles with a (T - t)^p cusp that a flat bandwidth cannot follow.
    """

    sigma_t: float = 0.5
    sigma_x: float = 1.0
    sigma_g: float = 1.0
    sigma_l: float = 1.0
    time_warp: float | None = None

    def __post_init__(self):
        for name in ("sigma_t", "sigma_x", "sigma_g", "sigma_l"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.time_warp is not None and not 0.0 < self.time_warp <= 1.0:
            raise ValueError("time_warp must lie in (0, 1]")


@dataclass(frozen=True)
class RbfLift:
    """Lift paths through g(x, .) with a Gaussian g of this bandwidth."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError("lift bandwidth must be positive")


# lift=None means the identity lift throughout the package
Lift = RbfLift | None


@dataclass(frozen=True)
class AField:
    """Per-cell increment fields driving the solver, shape n_cells x n_cells.

    Entries are already integrated over the cell (increments, not densities),
    which is what the discrete scheme consumes.
    """

    a: np.ndarray
    a_eta: np.ndarray
    a_etabar: np.ndarray
    a_eta_etabar: np.ndarray

    def __post_init__(self):
        for name in ("a", "a_eta", "a_etabar", "a_eta_etabar"):
            arr = getattr(self, name)
            if arr.shape != self.a.shape:
                raise ValueError("all fields must share one shape")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")


def rbf(x, y, sigma: float) -> float:
    """exp(-|x - y|^2 / (2 sigma^2)); inputs are equal-length vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-d @ d / (2.0 * sigma**2)))


def rbf_dx(x, y, sigma: float) -> np.ndarray:
    """Gradient in the first argument: (y - x) / sigma^2 * rbf(x, y)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return (y - x) / sigma**2 * rbf(x, y, sigma)


def rbf_dxx(x, y, sigma: float):
    """Hessian in the first argument; returns a scalar in one dimension.

    1-d closed form ((x - y)^2 - sigma^2) / sigma^4 * g; in higher dimensions
    ((x-y)(x-y)^T - sigma^2 I) / sigma^4 * g.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    g = rbf(x, y, sigma)
    hess = (np.outer(d, d) - sigma**2 * np.eye(len(d))) / sigma**4 * g
    if len(d) == 1:
        return float(hess[0, 0])
    return hess


def gauss_pair_derivative(u, sigma: float, m: int, n: int):
    """d^m/dz^m d^n/dz'^n exp(-(z-z')^2 / (2 sigma^2)) evaluated at u = z - z'.

    Used for the time-space kernel factor, whose coordinates separate; orders
    up to (2, 2) are supported.
    """
    u = np.asarray(u, dtype=float)
    s2 = sigma**2
    e = np.exp(-(u**2) / (2.0 * s2))
    order = m + n
    if order == 0:
        d = e
    elif order == 1:
        d = -u / s2 * e
    elif order == 2:
        d = (u**2 / s2**2 - 1.0 / s2) * e
    elif order == 3:
        d = (3.0 * u / s2**2 - u**3 / s2**3) * e
    elif order == 4:
        d = (3.0 / s2**2 - 6.0 * u**2 / s2**3 + u**4 / s2**4) * e
    else:
        raise ValueError(f"unsupported derivative order {order}")
    return (-1.0) ** n * d


# ---------------------------------------------------------------------------
# increment fields
# ---------------------------------------------------------------------------


def _check_grids(*paths: Path):
    g0 = paths[0].grid
    for p in paths[1:]:
        if (p.grid.t0, p.grid.t1, p.grid.n_steps) != (g0.t0, g0.t1, g0.n_steps):
            raise ValueError("paths must share one grid")


def _lift_surface(g_surf, sig2, hw=None, kw=None, hk=None, hh=None, kk=None, a=0, b=0):
    """Closed-form <d^a G(gamma)_s, d^b G(tau)_t> surfaces for the Gaussian lift.

    hw, kw are the direction/difference contractions (h.(gamma_s - tau_t) and
    k.(gamma_s - tau_t)) on the node product grid; hk, hh, kk the direction
    inner products. Directions on the left are both h, on the right both k.
    """
    if (a, b) == (0, 0):
        return g_surf
    if (a, b) == (1, 0):
        return -hw / sig2 * g_surf
    if (a, b) == (0, 1):
        return kw / sig2 * g_surf
    if (a, b) == (1, 1):
        return (hk / sig2 - hw * kw / sig2**2) * g_surf
    if (a, b) == (2, 0):
        return (hw**2 / sig2**2 - hh / sig2) * g_surf
    if (a, b) == (0, 2):
        return (kw**2 / sig2**2 - kk / sig2) * g_surf
    if (a, b) == (2, 1):
        return (hw**2 * kw / sig2**3 - hh * kw / sig2**2 - 2.0 * hk * hw / sig2**2) * g_surf
    if (a, b) == (1, 2):
        return (2.0 * hk * kw / sig2**2 + kk * hw / sig2**2 - kw**2 * hw / sig2**3) * g_surf
    if (a, b) == (2, 2):
        return (
            2.0 * hk**2 / sig2**2
            - 4.0 * hk * hw * kw / sig2**3
            + hh * kk / sig2**2
            - hw**2 * kk / sig2**3
            - hh * kw**2 / sig2**3
            + hw**2 * kw**2 / sig2**4
        ) * g_surf
    raise ValueError(f"unsupported field order {(a, b)}")


def _double_difference(surface: np.ndarray) -> np.ndarray:
    """Per-cell corner difference of a node surface: the integrated field."""
    return surface[1:, 1:] - surface[:-1, 1:] - surface[1:, :-1] + surface[:-1, :-1]


def _lift_node_data(gamma: Path, tau: Path, lift: RbfLift):
    gv, tv = gamma.values, tau.values
    diff = gv[:, None, :] - tv[None, :, :]
    w2 = np.einsum("ijc,ijc->ij", diff, diff)
    sig2 = lift.sigma**2
    g_surf = np.exp(-w2 / (2.0 * sig2))
    return diff, g_surf, sig2


def a_fields(gamma: Path, tau: Path, eta: Path, etabar: Path, lift: Lift = None) -> AField:
    """Increment fields for the four-component solver with gamma-side directions.

    Identity lift: plain increment inner products, and the mixed field is zero.
    Gaussian lift: per-cell double differences of the lifted pairings, with the
    directional derivatives of the lift taken in closed form at the cell corners.
    """
    _check_grids(gamma, eta, etabar)
    if gamma.channels != tau.channels:
        raise ValueError("gamma and tau must have equal channel counts")
    if lift is None:
        dg, dt_ = gamma.increments(), tau.increments()
        de, db = eta.increments(), etabar.increments()
        return AField(
            a=dg @ dt_.T,
            a_eta=de @ dt_.T,
            a_etabar=db @ dt_.T,
            a_eta_etabar=np.zeros((dg.shape[0], dt_.shape[0])),
        )
    diff, g_surf, sig2 = _lift_node_data(gamma, tau, lift)
    e_w = np.einsum("ic,ijc->ij", eta.values, diff)
    b_w = np.einsum("ic,ijc->ij", etabar.values, diff)
    e_b = np.einsum("ic,ic->i", eta.values, etabar.values)[:, None]
    # mixed second-derivative pairing with two distinct gamma-side directions
    mixed = (e_w * b_w / sig2**2 - e_b / sig2) * g_surf
    return AField(
        a=_double_difference(g_surf),
        a_eta=_double_difference(_lift_surface(g_surf, sig2, hw=e_w, a=1, b=0)),
        a_etabar=_double_difference(_lift_surface(g_surf, sig2, hw=b_w, a=1, b=0)),
        a_eta_etabar=_double_difference(mixed),
    )


def two_sided_fields(
    gamma: Path,
    tau: Path,
    eta: Path | None,
    chi: Path | None,
    lift: Lift = None,
    mu_max: int = 2,
    nu_max: int = 2,
) -> np.ndarray:
    """Stacked fields F^(a,b), a <= mu_max, b <= nu_max, for the mixed solver.

    eta is the direction attached to gamma (left argument), chi to tau (right
    argument); None stands for the zero direction. Output has shape
    ((mu_max+1)*(nu_max+1), n_cells, n_cells), row-major in (a, b).
    """
    if gamma.channels != tau.channels:
        raise ValueError("gamma and tau must have equal channel counts")
    if eta is not None:
        _check_grids(gamma, eta)
    if chi is not None:
        _check_grids(tau, chi)
    mcells, ncells = gamma.grid.n_steps, tau.grid.n_steps
    shape = (mcells, ncells)
    fields = np.zeros(((mu_max + 1) * (nu_max + 1),) + shape)

    def put(a, b, arr):
        fields[a * (nu_max + 1) + b] = arr

    if lift is None:
        dg, dt_ = gamma.increments(), tau.increments()
        de = eta.increments() if eta is not None else None
        dc = chi.increments() if chi is not None else None
        put(0, 0, dg @ dt_.T)
        if mu_max >= 1 and de is not None:
            put(1, 0, de @ dt_.T)
        if nu_max >= 1 and dc is not None:
            put(0, 1, dg @ dc.T)
        if mu_max >= 1 and nu_max >= 1 and de is not None and dc is not None:
            put(1, 1, de @ dc.T)
        # second lift derivatives vanish for the identity lift
        return fields

    diff, g_surf, sig2 = _lift_node_data(gamma, tau, lift)
    hw = kw = hk = hh = kk = None
    if eta is not None:
        hw = np.einsum("ic,ijc->ij", eta.values, diff)
        hh = np.einsum("ic,ic->i", eta.values, eta.values)[:, None]
    if chi is not None:
        kw = np.einsum("jc,ijc->ij", chi.values, diff)
        kk = np.einsum("jc,jc->j", chi.values, chi.values)[None, :]
    if eta is not None and chi is not None:
        hk = np.einsum("ic,jc->ij", eta.values, chi.values)
    for a in range(mu_max + 1):
        for b in range(nu_max + 1):
            if (a > 0 and eta is None) or (b > 0 and chi is None):
                continue
            surf = _lift_surface(g_surf, sig2, hw=hw, kw=kw, hk=hk, hh=hh, kk=kk, a=a, b=b)
            put(a, b, _double_difference(surf))
    return fields
