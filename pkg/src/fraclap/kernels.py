"""Integrand evaluation: the fractional kernel constant, affine basis
restrictions, and the homogeneous difference-factor rule.

After canonical alignment the structural shift terms of every transformation
map to the same physical point under both element maps, so differences of a
continuous piecewise-linear basis function reduce exactly to their
eta-parts:

    phi(x) - phi(y) = scale(xi) * (g1^T M1 d1 - g2^T M2 d2),

with g the (possibly zero) restriction gradients.  All evaluators here are
vectorized over eta points and pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma

from .errors import DegenerateElement, IntegrandError, InvalidParameter

_DENOM_FLOOR = 1e-300


def c_ds(s: float) -> float:
    """Normalization constant 2^(2s) Gamma(s+3/2) / (pi^(3/2) Gamma(1-s))."""
    if not (0.0 < s < 1.0):
        raise InvalidParameter(f"s = {s} outside (0, 1)")
    return float(2.0 ** (2 * s) * _gamma(s + 1.5) / (np.pi**1.5 * _gamma(1.0 - s)))


@dataclass(frozen=True)
class FractionalOrder:
    s: float
    c: float

    @classmethod
    def of(cls, s: float) -> "FractionalOrder":
        return cls(s=s, c=c_ds(s))


@dataclass(frozen=True)
class AffineRestriction:
    """Hat basis function restricted to one tetrahedron.

    g is the gradient, v0 the value at the tet's first vertex; both are zero
    when the tet lies outside the support.
    """

    g: np.ndarray
    v0: float
    active: bool

    @classmethod
    def inactive(cls) -> "AffineRestriction":
        return cls(g=np.zeros(3), v0=0.0, active=False)


def hat_gradients(tet_coords) -> np.ndarray:
    """Gradients of the four barycentric (hat) functions on a tet, rows (4,3)."""
    v = np.asarray(tet_coords, dtype=float)
    E = np.column_stack([v[1] - v[0], v[2] - v[0], v[3] - v[0]])
    det = np.linalg.det(E)
    if abs(det) < 1e-14 * max(np.linalg.norm(E, axis=0).max(), 1e-300) ** 3:
        raise DegenerateElement("cannot build hat gradients on a degenerate tet")
    G = np.linalg.inv(E)  # row k is the gradient of the barycentric at vertex k+1
    grads = np.vstack([-G.sum(axis=0), G])
    return grads


def basis_restriction(node_index: int, tet_vertex_ids, tet_coords) -> AffineRestriction:
    """Restriction of the hat function at a global node to one tet.

    Inactive (zero) when the node is not a vertex of the tet; otherwise the
    affine function with value 1 at the node and 0 at the other vertices.
    """
    ids = list(tet_vertex_ids)
    if node_index not in ids:
        return AffineRestriction.inactive()
    local = ids.index(node_index)
    grads = hat_gradients(tet_coords)
    return AffineRestriction(g=grads[local], v0=1.0 if local == 0 else 0.0, active=True)


def difference_factor(r1: AffineRestriction, r2: AffineRestriction, M1, M2, d1, d2):
    """eta-part of phi(x) - phi(y) after scale factoring: g2^T M2 d2 - g1^T M1 d1.

    d1, d2 are arrays of eta-points (P, dim).  Valid under tangential
    gradient agreement on the shared simplex (asserted at classification).
    """
    return d2 @ (M2.T @ r2.g) - d1 @ (M1.T @ r1.g)


def kernel_distance(M1, M2, d1, d2):
    """|M1 d1 - M2 d2| per eta-point; raises when a denominator vanishes."""
    u = d1 @ M1.T - d2 @ M2.T
    r2 = np.einsum("...k,...k->...", u, u)
    bad = r2 < _DENOM_FLOOR
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise IntegrandError(
            "vanishing kernel denominator (table or alignment bug)", node=idx
        )
    return u, r2


def k1_eta(M1, M2, absdet1, absdet2, gi, gj, d1, d2, jac, s):
    """Transformed tet-tet integrand on the eta-parts of one subdomain.

    gi, gj are (g_on_t1, g_on_t2) gradient pairs; d1, d2 the subdomain maps
    evaluated at the eta grid; jac the eta-Jacobian values.
    """
    _, r2 = kernel_distance(M1, M2, d1, d2)
    di = d1 @ (M1.T @ gi[0]) - d2 @ (M2.T @ gi[1])
    dj = d1 @ (M1.T @ gj[0]) - d2 @ (M2.T @ gj[1])
    return di * dj * r2 ** (-(3.0 + 2.0 * s) / 2.0) * (absdet1 * absdet2) * jac


def k2_eta(Mt, Mtau, absdet_t, area2_tau, normal, gi, gj, d1, d2, jac, s):
    """Transformed tet-panel integrand on the eta-parts of one subdomain.

    Both basis factors vanish on the panel, so each contributes its
    homogeneous eta-part g^T Mt d1; the numerator is (Mtau d2 - Mt d1)^T n.
    area2_tau = |(b-a) x (c-b)| is twice the panel area.
    """
    u = d2 @ Mtau.T - d1 @ Mt.T
    r2 = np.einsum("...k,...k->...", u, u)
    bad = r2 < _DENOM_FLOOR
    if np.any(bad):
        raise IntegrandError("vanishing kernel denominator (table or alignment bug)",
                             node=int(np.argmax(bad)))
    fi = d1 @ (Mt.T @ gi)
    fj = d1 @ (Mt.T @ gj)
    numer = u @ normal
    return fi * fj * numer * r2 ** (-(3.0 + 2.0 * s) / 2.0) * (absdet_t * area2_tau) * jac


def tangential_agreement(M1, M2, g1, g2, shared: int, scale: float) -> float:
    """Max defect |g1^T M1 e_k - g2^T M2 e_k| over shared directions k.

    shared = number of leading shared reference directions (face: 2, edge: 1).
    The defect must vanish for restrictions of one continuous function; it is
    asserted at classification time relative to `scale`.
    """
    worst = 0.0
    for k in range(shared):
        worst = max(worst, abs(g1 @ M1[:, k] - g2 @ M2[:, k]))
    return worst
