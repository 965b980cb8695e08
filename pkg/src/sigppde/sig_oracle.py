"""Brute-force truncated signatures of piecewise-linear paths.

Independent oracle for the PDE-based kernel solver: signatures are assembled
segment by segment through the truncated tensor product, kernels as
Hilbert-Schmidt inner products of the dense tensors. Deliberately simple and
dense; identity lift only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .paths import Path


@dataclass(frozen=True)
class TruncatedSignature:
    """Dense signature tensors of orders 0..level over d channels."""

    level: int
    tensors: tuple

    @property
    def channels(self) -> int:
        return len(self.tensors[1]) if self.level >= 1 else 0

    def norm(self) -> float:
        """Frobenius norm of the stacked tensors."""
        return math.sqrt(sum(float(np.sum(t * t)) for t in self.tensors))


def segment_signature(delta, level: int) -> TruncatedSignature:
    """Signature of one linear segment: tensor exponential delta^(k) / k!."""
    if level < 0:
        raise ValueError("level must be >= 0")
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    tensors = [np.array(1.0)]
    for k in range(1, level + 1):
        tensors.append(np.multiply.outer(tensors[-1], delta) / k)
    return TruncatedSignature(level=level, tensors=tuple(tensors))


def chen_concat(s1: TruncatedSignature, s2: TruncatedSignature) -> TruncatedSignature:
    """Truncated tensor product z_k = sum_j v_j (x) w_(k-j) (Chen's identity)."""
    if s1.level != s2.level:
        raise ValueError("levels differ")
    if s1.level >= 1 and s1.tensors[1].shape != s2.tensors[1].shape:
        raise ValueError("channel counts differ")
    out = []
    for k in range(s1.level + 1):
        acc = np.zeros((s1.channels,) * k) if k else np.array(0.0)
        for j in range(k + 1):
            acc = acc + np.multiply.outer(s1.tensors[j], s2.tensors[k - j])
        out.append(acc)
    return TruncatedSignature(level=s1.level, tensors=tuple(out))


def path_signature(p: Path, level: int) -> TruncatedSignature:
    """Signature of a piecewise-linear path, folded over its cells."""
    sig = segment_signature(np.zeros(p.channels), level)
    for delta in p.increments():
        sig = chen_concat(sig, segment_signature(delta, level))
    return sig


def truncated_kernel(gamma: Path, tau: Path, level: int) -> float:
    """Sum over orders k <= level of the Hilbert-Schmidt tensor inner products."""
    sg = path_signature(gamma, level)
    st = path_signature(tau, level)
    return float(sum(np.sum(a * b) for a, b in zip(sg.tensors, st.tensors)))


def _shifted(base: Path, direction: Path, eps: float) -> Path:
    return Path(grid=base.grid, values=base.values + eps * direction.values)


def fd_directional_derivative(
    gamma: Path, tau: Path, eta: Path, level: int, eps: float = 1e-4
) -> float:
    """Central difference (kappa(gamma + eps*eta) - kappa(gamma - eps*eta)) / (2 eps)."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    up = truncated_kernel(_shifted(gamma, eta, eps), tau, level)
    dn = truncated_kernel(_shifted(gamma, eta, -eps), tau, level)
    return (up - dn) / (2.0 * eps)


def fd_second(
    gamma: Path, tau: Path, eta: Path, etabar: Path, level: int, eps: float = 1e-3
) -> float:
    """Mixed second derivative via the 4-point stencil in (eps, eps)."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    pp = truncated_kernel(_shifted(_shifted(gamma, eta, eps), etabar, eps), tau, level)
    pm = truncated_kernel(_shifted(_shifted(gamma, eta, eps), etabar, -eps), tau, level)
    mp = truncated_kernel(_shifted(_shifted(gamma, eta, -eps), etabar, eps), tau, level)
    mm = truncated_kernel(_shifted(_shifted(gamma, eta, -eps), etabar, -eps), tau, level)
    return (pp - pm - mp + mm) / (4.0 * eps * eps)
