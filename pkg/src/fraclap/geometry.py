"""Simplices, affine reference maps, and shape metrics.

The reference tetrahedron is

    t_ref = {x in R^3 : 0 <= x3 <= x1 - x2, 0 <= x2 <= x1 <= 1}

with vertices (0,0,0), (1,0,0), (1,1,0), (1,0,1); the reference triangle is
tau_ref = {y in R^2 : 0 <= y2 <= y1 <= 1} with vertices (0,0), (1,0), (1,1).
Affine maps use the column convention M_t = [b-a, c-b, d-b] (respectively
M_tau = [b-a, c-b]) so that chi(0) = a, chi(e1) = b, chi(e1+e2) = c and
chi(e1+e3) = d.  All values here are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateElement

REF_TET_VERTICES = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]]
)
REF_TRI_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])

# |det M| below DEGENERACY_REL * h^3 is rejected: the spectral bounds that
# keep the transformed integrands analytic become vacuous there.
DEGENERACY_REL = 1e-12


def point(x, y, z):
    """Build an immutable 3d point."""
    p = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("point components must be finite")
    p.flags.writeable = False
    return p


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Tetrahedron:
    """Ordered vertex tuple (a, b, c, d)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def from_array(cls, verts):
        verts = np.asarray(verts, dtype=float)
        return cls(verts[0], verts[1], verts[2], verts[3])

    @property
    def vertices(self):
        return np.array([self.a, self.b, self.c, self.d])


@dataclass(frozen=True)
class Panel:
    """Oriented triangle (a, b, c) with unit normal pointing away from its owner tet."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n: np.ndarray
    owner: int = -1

    def __post_init__(self):
        for name in ("a", "b", "c", "n"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def vertices(self):
        return np.array([self.a, self.b, self.c])


@dataclass(frozen=True)
class AffineMap3:
    """x = M xi + offset mapping the reference tetrahedron onto a physical one."""

    M: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", _frozen(self.M))
        object.__setattr__(self, "offset", _frozen(self.offset))

    def __call__(self, xi):
        return np.asarray(xi) @ self.M.T + self.offset


@dataclass(frozen=True)
class AffineMap2:
    """y = M eta + offset mapping the reference triangle onto a panel (M is 3x2)."""

    M: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", _frozen(self.M))
        object.__setattr__(self, "offset", _frozen(self.offset))

    def __call__(self, eta):
        return np.asarray(eta) @ self.M.T + self.offset


@dataclass(frozen=True)
class ShapeMetrics:
    h: float
    theta: float
    volume: float
    insphere_radius: float


def tet_map(tet: Tetrahedron) -> AffineMap3:
    """Affine map with columns [b-a, c-b, d-b], offset a."""
    M = np.column_stack([tet.b - tet.a, tet.c - tet.b, tet.d - tet.b])
    h = diameter(tet.vertices)
    det = np.linalg.det(M)
    if abs(det) < DEGENERACY_REL * h**3 or h == 0.0:
        raise DegenerateElement(f"|det M| = {abs(det):.3e} below tolerance for h = {h:.3e}")
    return AffineMap3(M, tet.a)


def panel_map(panel: Panel) -> AffineMap2:
    """Affine map with columns [b-a, c-b], offset a."""
    M = np.column_stack([panel.b - panel.a, panel.c - panel.b])
    area2 = np.linalg.norm(np.cross(M[:, 0], M[:, 1]))
    h = diameter(panel.vertices)
    if area2 < DEGENERACY_REL * h**2 or h == 0.0:
        raise DegenerateElement("panel is degenerate")
    return AffineMap2(M, panel.a)


def diameter(verts) -> float:
    verts = np.asarray(verts)
    diff = verts[:, None, :] - verts[None, :, :]
    return float(np.sqrt((diff**2).sum(-1).max()))


def _face_angles(p, q, r):
    """Interior angles of triangle (p, q, r)."""
    angles = []
    for x, y, z in ((p, q, r), (q, r, p), (r, p, q)):
        u, v = y - x, z - x
        cosa = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
        angles.append(np.arccos(np.clip(cosa, -1.0, 1.0)))
    return angles


def _dihedral_angles(verts):
    """Six dihedral angles along the edges of a tetrahedron."""
    faces = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]  # face i is opposite vertex i
    normals = []
    for opp, (i, j, k) in enumerate(faces):
        n = np.cross(verts[j] - verts[i], verts[k] - verts[i])
        n = n / np.linalg.norm(n)
        centroid = (verts[i] + verts[j] + verts[k]) / 3.0
        if np.dot(n, centroid - verts[opp]) < 0.0:
            n = -n
        normals.append(n)
    angles = []
    for i in range(4):
        for j in range(i + 1, 4):
            # interior dihedral between outward face normals
            cosd = -np.dot(normals[i], normals[j])
            angles.append(np.arccos(np.clip(cosd, -1.0, 1.0)))
    return angles


def shape_metrics(tet: Tetrahedron) -> ShapeMetrics:
    """Diameter, minimal angle proxy, volume, and insphere radius.

    The angle is the minimum over the four faces' interior angles together
    with a dihedral floor, so both sliver and needle degeneration are caught.
    """
    verts = tet.vertices
    amap = tet_map(tet)  # raises on degeneracy
    vol = abs(np.linalg.det(amap.M)) / 6.0
    h = diameter(verts)

    faces = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    tri_angles = []
    areas = 0.0
    for i, j, k in faces:
        tri_angles.extend(_face_angles(verts[i], verts[j], verts[k]))
        areas += 0.5 * np.linalg.norm(np.cross(verts[j] - verts[i], verts[k] - verts[i]))
    theta = min(min(tri_angles), min(_dihedral_angles(verts)))
    rho = 3.0 * vol / areas
    return ShapeMetrics(h=h, theta=float(theta), volume=float(vol), insphere_radius=float(rho))


def gram_scaling_check(amap) -> tuple[float, float, float]:
    """Eigen-extremes of M^T M and sqrt(det M^T M).

    Test helper: for shape-regular simplices lambda_max <= 3 h^2 (tetrahedra)
    and lambda_max <= 2 h^2 (panels).
    """
    G = amap.M.T @ amap.M
    ev = np.linalg.eigvalsh(G)
    return float(ev[0]), float(ev[-1]), float(np.sqrt(np.linalg.det(G)))


def tet_volume(verts) -> float:
    verts = np.asarray(verts)
    M = np.column_stack([verts[1] - verts[0], verts[2] - verts[1], verts[3] - verts[1]])
    return abs(np.linalg.det(M)) / 6.0


def outward_normal(face_verts, opposite_vertex) -> np.ndarray:
    """Unit normal of a triangular face pointing away from the opposite vertex."""
    a, b, c = np.asarray(face_verts)
    u, v = b - a, c - a
    n = np.array([u[1] * v[2] - u[2] * v[1],
                  u[2] * v[0] - u[0] * v[2],
                  u[0] * v[1] - u[1] * v[0]])
    n = n / np.linalg.norm(n)
    centroid = (a + b + c) / 3.0
    if np.dot(n, centroid - np.asarray(opposite_vertex)) < 0.0:
        n = -n
    return n
