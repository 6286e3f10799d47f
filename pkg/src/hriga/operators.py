"""Pointwise algebra of the weakly symmetric elasticity formulation.

All functions act on the trailing ``(n, n)`` axes and broadcast over any
leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INCOMPRESSIBLE = math.inf


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic homogeneous Lame parameters; ``lam = INCOMPRESSIBLE`` is the exact limit."""

    lam: float
    mu: float
    dim: int = 2

    def __post_init__(self):
        if isinstance(self.lam, str):
            if self.lam.strip().lower() != "inf":
                raise ValueError(f"lambda must be a number or 'inf', got {self.lam!r}")
            object.__setattr__(self, "lam", INCOMPRESSIBLE)
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")

    @property
    def incompressible(self) -> bool:
        return math.isinf(self.lam)

    @property
    def trace_coefficient(self) -> float:
        """``lam / (n lam + 2 mu)``, equal to ``1/n`` in the incompressible limit."""
        if self.incompressible:
            return 1.0 / self.dim
        return self.lam / (self.dim * self.lam + 2 * self.mu)


def _eye_like(M):
    n = M.shape[-1]
    return np.broadcast_to(np.eye(n), M.shape)


def trace(M):
    return np.trace(M, axis1=-2, axis2=-1)


def skew(M):
    """Scalar (2D) or 3-vector (3D) measuring the antisymmetric part of ``M``."""
    M = np.asarray(M)
    n = M.shape[-1]
    if n == 2:
        return M[..., 1, 0] - M[..., 0, 1]
    if n == 3:
        return np.stack([M[..., 2, 1] - M[..., 1, 2],
                         M[..., 0, 2] - M[..., 2, 0],
                         M[..., 1, 0] - M[..., 0, 1]], axis=-1)
    raise ValueError("skew is defined for n = 2 or 3")


def xi(M):
    """``M^T - tr(M) I`` (3D)."""
    M = np.asarray(M)
    return np.swapaxes(M, -1, -2) - trace(M)[..., None, None] * _eye_like(M)


def xi_inv(M):
    """Inverse of :func:`xi`: ``M^T - tr(M)/2 I``."""
    M = np.asarray(M)
    return np.swapaxes(M, -1, -2) - 0.5 * trace(M)[..., None, None] * _eye_like(M)


def compliance_apply(params: MaterialParams, sigma):
    sigma = np.asarray(sigma)
    k = params.trace_coefficient
    return (sigma - k * trace(sigma)[..., None, None] * _eye_like(sigma)) / (2 * params.mu)


def stiffness_apply(params: MaterialParams, eps):
    if params.incompressible:
        raise ValueError("stiffness is undefined for the incompressible limit; supply stress directly")
    eps = np.asarray(eps)
    return 2 * params.mu * eps + params.lam * trace(eps)[..., None, None] * _eye_like(eps)


def sym_grad(grad_u):
    grad_u = np.asarray(grad_u)
    return 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))


def curl_2d(grad_v):
    """Row-wise 2D curl ``(d2 v, -d1 v)`` from the gradient of a scalar or vector field."""
    grad_v = np.asarray(grad_v)
    return np.stack([grad_v[..., 1], -grad_v[..., 0]], axis=-1)


def curl_3d_rows(grad_w):
    """Row-wise curl of a matrix field given ``grad_w[..., i, j, k] = d_k w_ij``."""
    g = np.asarray(grad_w)
    return np.stack([g[..., 2, 1] - g[..., 1, 2],
                     g[..., 0, 2] - g[..., 2, 0],
                     g[..., 1, 0] - g[..., 0, 1]], axis=-1)
