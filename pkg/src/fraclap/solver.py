"""Linear solve and error measurement for the unit-ball benchmark.

The model problem has right-hand side 1 on the unit ball with zero exterior
condition; its solution is u(x) = 2^(-2s)/Gamma(1+s)^2 * (1-|x|^2)_+^s with
energy a(u, u) = 2^(-2s) pi^(3/2) / (Gamma(1+s) Gamma(s+5/2)).  The energy
error of a Galerkin solution is evaluated through the identity
|u - u_h|^2 = a(u,u) - x^T A x, exact under Galerkin orthogonality; a
significantly negative value signals quadrature under-resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gamma as _gamma
from scipy.special import roots_jacobi

from .errors import ConsistencyError, InvalidParameter, OutOfDomain, SolverError
from .mesh import Mesh

_NEG_TOL = 1e-10


@dataclass(frozen=True)
class BallSolution:
    """Closed-form solution data of the unit-ball problem at order s."""

    s: float

    def __post_init__(self):
        if not (0.0 < self.s < 1.0):
            raise InvalidParameter(f"s = {self.s} outside (0, 1)")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r2 = (x**2).sum(axis=-1)
        out = np.maximum(1.0 - r2, 0.0) ** self.s
        return out * 2.0 ** (-2 * self.s) / _gamma(1.0 + self.s) ** 2

    @property
    def value_at_origin(self):
        return 2.0 ** (-2 * self.s) / _gamma(1.0 + self.s) ** 2

    @property
    def energy(self):
        """a(u,u) closed form."""
        s = self.s
        return 2.0 ** (-2 * s) * math.pi**1.5 / (_gamma(1.0 + s) * _gamma(s + 2.5))

    def energy_by_radial_quadrature(self, n: int = 80):
        """Independent evaluation of a(u,u) = <1, u> = int_B u.

        The radial integral int_0^1 (1-r^2)^s r^2 dr carries the weight
        (1-r)^s exactly under a Gauss-Jacobi rule, so convergence is
        exponential despite the endpoint non-smoothness.
        """
        s = self.s
        # nodes for weight (1-t)^s on [-1,1]; map t -> r on [0,1]
        t, w = roots_jacobi(n, s, 0.0)
        r = 0.5 * (t + 1.0)
        # (1-r^2)^s = (1-r)^s (1+r)^s; the (1-r)^s part sits in the weight:
        # (1-r)^s = ((1-t)/2)^s, dr = dt/2
        vals = (1.0 + r) ** s * r**2
        radial = np.sum(w * vals) * 0.5 ** (s + 1)
        return 4.0 * math.pi * radial * 2.0 ** (-2 * s) / _gamma(1.0 + s) ** 2


def solve(system, tol: float = 1e-10):
    """Solve A x = g by Jacobi-preconditioned conjugate gradients.

    Falls back to a dense Cholesky solve when CG stalls; raises SolverError
    when the matrix is not symmetric positive definite.
    """
    A = system.A
    g = system.g
    if g is None:
        raise SolverError("system has no load vector")
    n = A.shape[0]
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise SolverError("matrix is not symmetric")
    d = np.diag(A)
    if np.any(d <= 0.0):
        raise SolverError("non-positive diagonal; matrix is not SPD")
    x = np.zeros(n)
    r = g - A @ x
    gnorm = np.linalg.norm(g)
    if gnorm == 0.0:
        return x
    z = r / d
    p = z.copy()
    rz = r @ z
    for _ in range(10 * n + 50):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise SolverError("negative curvature; matrix is not SPD")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * gnorm:
            return x
        z = r / d
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    # CG did not reach the tolerance; use a direct factorization
    try:
        cf = cho_factor(A, lower=True)
    except np.linalg.LinAlgError as e:
        raise SolverError(f"Cholesky failed: {e}")
    return cho_solve(cf, g)


def cholesky_check(A) -> bool:
    """True when A admits a Cholesky factorization (SPD test)."""
    try:
        cho_factor(A, lower=True)
        return True
    except Exception:
        return False


def energy_error(system, x, s: float):
    """(absolute, relative) energy error of a ball-benchmark solution.

    e^2 = a(u,u) - x^T A x by Galerkin orthogonality; values in
    [-1e-10 * a(u,u), 0) are clamped to zero, anything more negative raises
    ConsistencyError (quadrature orders too low for this mesh).
    """
    exact = BallSolution(s).energy
    discrete = float(x @ (system.A @ x))
    e2 = exact - discrete
    if e2 < 0.0:
        if e2 < -_NEG_TOL * exact:
            raise ConsistencyError(
                f"x^T A x = {discrete:.12e} exceeds a(u,u) = {exact:.12e}; "
                "raise the quadrature orders"
            )
        e2 = 0.0
    e = math.sqrt(e2)
    return e, e / math.sqrt(exact)


# ---------------------------------------------------------------------------
# Point evaluation of the discrete solution
# ---------------------------------------------------------------------------

def _barycentric(verts, p):
    T = np.column_stack([verts[1] - verts[0], verts[2] - verts[0], verts[3] - verts[0]])
    lam = np.linalg.solve(T, p - verts[0])
    return np.concatenate([[1.0 - lam.sum()], lam])


def eval_uh(mesh: Mesh, x, point, start: int = 0):
    """Evaluate the nodal interpolant at a point (walking point location).

    x holds interior coefficients; boundary vertices carry the value 0.
    """
    point = np.asarray(point, dtype=float)
    interior = mesh.interior_vertices
    dof = -np.ones(mesh.num_vertices, dtype=np.int64)
    dof[interior] = np.arange(len(interior))

    # face-neighbor map for the walk
    neighbors = {}
    faces = {}
    for t in range(mesh.num_tets):
        tet = mesh.tets[t]
        for local, f in enumerate([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]):
            key = tuple(sorted(tet[list(f)]))
            other = faces.pop(key, None)
            if other is None:
                faces[key] = (t, local)
            else:
                neighbors[(t, local)] = other[0]
                neighbors[other] = t

    def value_in(t, lam):
        out = 0.0
        for local, v in enumerate(mesh.tets[t]):
            if dof[v] >= 0:
                out += lam[local] * x[dof[v]]
        return out

    t = start
    visited = set()
    for _ in range(mesh.num_tets + 1):
        lam = _barycentric(mesh.vertices[mesh.tets[t]], point)
        worst = int(np.argmin(lam))
        if lam[worst] >= -1e-12:
            return value_in(t, lam)
        visited.add(t)
        nxt = neighbors.get((t, worst))
        if nxt is None or nxt in visited:
            break
        t = nxt
    # fallback scan (robust against walk cycles on projected boundaries)
    for t in range(mesh.num_tets):
        lam = _barycentric(mesh.vertices[mesh.tets[t]], point)
        if lam.min() >= -1e-10:
            return value_in(t, lam)
    raise OutOfDomain(f"point {point} lies outside the mesh")
