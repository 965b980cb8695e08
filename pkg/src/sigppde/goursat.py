"""Two-parameter hyperbolic solver for the signature kernel and its pathwise
directional derivatives.

The coupled system is lower triangular: each component's mixed derivative
d^2/ds dt is a combination of itself and lower components weighted by the
per-cell increment fields. The march runs cell by cell (any order compatible
with the corner dependencies gives identical results; anti-diagonals expose
the parallelism) using an explicit predictor-corrector update:

    K[i+1,j+1] = K[i,j+1] + K[i+1,j] - K[i,j] + (f1 + f2 + f3 + f4) / 4

where f1..f3 sample the coupling at the three known corners and f4 at the new
corner, reading already-updated lower components and a rectangle-rule
prediction of the component itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from numba import njit

from .numerics import NumericalError
from .paths import Path
from .static_kernels import AField, Lift, two_sided_fields


@njit(cache=True, nogil=True)
def _march(fields, coup_field, coup_coef, order, n_comp, m_cells, n_cells, corrector):
    """March the coupled system over the dyadically refined product grid.

    fields: (F, m_cells, n_cells) base-cell increments; each base cell is split
    into 2^order x 2^order subcells carrying fields / 4^order.
    Returns the component surfaces on the refined grid.
    """
    mr = m_cells << order
    nr = n_cells << order
    scale = 0.25**order
    out = np.zeros((n_comp, mr + 1, nr + 1))
    for q in range(nr + 1):
        out[0, 0, q] = 1.0
    for p in range(mr + 1):
        out[0, p, 0] = 1.0
    for i in range(mr):
        ib = i >> order
        for j in range(nr):
            jb = j >> order
            for c in range(n_comp):
                f1 = 0.0
                f2 = 0.0
                f3 = 0.0
                for d in range(c + 1):
                    fi = coup_field[c, d]
                    if fi >= 0:
                        a = fields[fi, ib, jb] * scale * coup_coef[c, d]
                        f1 += a * out[d, i, j]
                        f2 += a * out[d, i, j + 1]
                        f3 += a * out[d, i + 1, j]
                base = out[c, i, j + 1] + out[c, i + 1, j] - out[c, i, j]
                if corrector:
                    f4 = 0.0
                    for d in range(c + 1):
                        fi = coup_field[c, d]
                        if fi >= 0:
                            a = fields[fi, ib, jb] * scale * coup_coef[c, d]
                            if d == c:
                                f4 += a * (base + f1)
                            else:
                                f4 += a * out[d, i + 1, j + 1]
                    out[c, i + 1, j + 1] = base + 0.25 * (f1 + f2 + f3 + f4)
                else:
                    out[c, i + 1, j + 1] = base + f1
    return out


def _run_system(fields, coup_field, coup_coef, dyadic_order, corrector=True):
    fields = np.ascontiguousarray(fields, dtype=float)
    n_comp = coup_field.shape[0]
    m_cells, n_cells = fields.shape[1], fields.shape[2]
    out = _march(
        fields,
        np.ascontiguousarray(coup_field, dtype=np.int64),
        np.ascontiguousarray(coup_coef, dtype=float),
        dyadic_order,
        n_comp,
        m_cells,
        n_cells,
        corrector,
    )
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NumericalError(
            f"non-finite value in component {bad[0]} at refined node ({bad[1]}, {bad[2]})"
        )
    return out


@dataclass(frozen=True)
class GoursatSolution:
    """Solution surfaces on the original grid nodes.

    k1 is the kernel, k2/k3 the first derivatives along eta/etabar, k4 the
    mixed second derivative; the values at (T, T) are the corner entries.
    """

    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray
    k4: np.ndarray
    dyadic_order: int

    def corners(self) -> tuple:
        return (self.k1[-1, -1], self.k2[-1, -1], self.k3[-1, -1], self.k4[-1, -1])

    def to_csv(self) -> str:
        """Long-format dump of the four surfaces (debugging aid)."""
        lines = ["component,i,j,value"]
        for name in ("k1", "k2", "k3", "k4"):
            surf = getattr(self, name)
            for i in range(surf.shape[0]):
                for j in range(surf.shape[1]):
                    lines.append(f"{name},{i},{j},{surf[i, j]:.17g}")
        return "\n".join(lines) + "\n"


# coupling of the four-component system: rows (kernel, d_eta, d_etabar, mixed),
# field indices into (a, a_eta, a_etabar, a_eta_etabar)
_COUP4_FIELD = np.array(
    [
        [0, -1, -1, -1],
        [1, 0, -1, -1],
        [2, -1, 0, -1],
        [3, 2, 1, 0],
    ],
    dtype=np.int64,
)
_COUP4_COEF = np.ones((4, 4))


def solve(
    gamma: Path,
    tau: Path,
    eta: Path,
    etabar: Path,
    fields: AField,
    dyadic_order: int = 2,
    corrector: bool = True,
) -> GoursatSolution:
    """Integrate the four-component system for kernel plus derivatives.

    dyadic_order subdivides each cell 2^order times per axis, splitting the
    increments uniformly (piecewise-linear paths). corrector=False switches to
    the plain rectangle-rule update (debug mode).
    """
    mc, nc = gamma.grid.n_steps, tau.grid.n_steps
    if fields.a.shape != (mc, nc):
        raise ValueError(f"fields shaped {fields.a.shape}, expected {(mc, nc)}")
    if dyadic_order < 0:
        raise ValueError("dyadic_order must be >= 0")
    stacked = np.stack([fields.a, fields.a_eta, fields.a_etabar, fields.a_eta_etabar])
    out = _run_system(stacked, _COUP4_FIELD, _COUP4_COEF, dyadic_order, corrector)
    step = 1 << dyadic_order
    sub = out[:, ::step, ::step]
    return GoursatSolution(
        k1=sub[0], k2=sub[1], k3=sub[2], k4=sub[3], dyadic_order=dyadic_order
    )


def kernel_only(gamma: Path, tau: Path, fields: AField, dyadic_order: int = 2) -> float:
    """Corner of the kernel surface from the single-component march."""
    mc, nc = gamma.grid.n_steps, tau.grid.n_steps
    if fields.a.shape != (mc, nc):
        raise ValueError(f"fields shaped {fields.a.shape}, expected {(mc, nc)}")
    out = _run_system(
        fields.a[None, :, :],
        np.zeros((1, 1), dtype=np.int64),
        np.ones((1, 1)),
        dyadic_order,
    )
    return float(out[0, -1, -1])


# ---------------------------------------------------------------------------
# mixed two-argument derivatives
# ---------------------------------------------------------------------------


def _two_sided_system(mu_max: int, nu_max: int):
    """Component list and coupling for derivatives of order (mu, nu) on the
    (left, right) arguments, same direction per side.

    Component (mu, nu) couples to (mu-a, nu-b) with weight C(mu,a)*C(nu,b) and
    field F^(a,b); components are ordered so dependencies precede dependents.
    """
    comps = sorted(
        ((mu, nu) for mu in range(mu_max + 1) for nu in range(nu_max + 1)),
        key=lambda mn: (mn[0] + mn[1], mn[0]),
    )
    index = {mn: i for i, mn in enumerate(comps)}
    n = len(comps)
    coup_field = -np.ones((n, n), dtype=np.int64)
    coup_coef = np.zeros((n, n))
    for (mu, nu), row in index.items():
        for a in range(mu + 1):
            for b in range(nu + 1):
                col = index[(mu - a, nu - b)]
                coup_field[row, col] = a * (nu_max + 1) + b
                coup_coef[row, col] = comb(mu, a) * comb(nu, b)
    return comps, coup_field, coup_coef


def two_sided_corners(
    gamma: Path,
    tau: Path,
    eta: Path | None,
    chi: Path | None,
    lift: Lift = None,
    dyadic_order: int = 2,
    mu_max: int = 2,
    nu_max: int = 2,
) -> np.ndarray:
    """Corner values of d^mu_gamma d^nu_tau kernel, mu <= mu_max, nu <= nu_max.

    eta perturbs gamma (left argument), chi perturbs tau (right argument); the
    same direction is applied per side for higher orders. Returns an array of
    shape (mu_max+1, nu_max+1).
    """
    if eta is None:
        mu_max = 0
    if chi is None:
        nu_max = 0
    fields = two_sided_fields(gamma, tau, eta, chi, lift, mu_max, nu_max)
    comps, coup_field, coup_coef = _two_sided_system(mu_max, nu_max)
    out = _run_system(fields, coup_field, coup_coef, dyadic_order)
    corners = np.empty((mu_max + 1, nu_max + 1))
    for i, (mu, nu) in enumerate(comps):
        corners[mu, nu] = out[i, -1, -1]
    return corners
