"""Tetrahedral meshes: Gmsh input, built-in ball meshes, pair classification,
and support-union boundary extraction.

Meshes are immutable after construction; classification and region
extraction are pure functions of the mesh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError, ParseError, ResourceLimit
from .geometry import Panel, Tetrahedron, outward_normal, shape_metrics, tet_volume

MAX_BALL_LEVEL = 7

# local vertex triples of the four faces; face k is opposite local vertex k
_TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


@dataclass
class Mesh:
    """Conforming tetrahedral mesh with boundary flags and incidence."""

    vertices: np.ndarray          # (nv, 3)
    tets: np.ndarray              # (nt, 4) vertex indices, positive orientation
    boundary: np.ndarray          # (nv,) bool, True if vertex lies on the boundary
    ignored_elements: int = 0     # count of input elements of unsupported type
    incidence: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.tets = np.asarray(self.tets, dtype=np.int64)
        self.boundary = np.asarray(self.boundary, dtype=bool)
        if not self.incidence:
            inc = [[] for _ in range(len(self.vertices))]
            for t, tet in enumerate(self.tets):
                for v in tet:
                    inc[v].append(t)
            self.incidence = [np.array(a, dtype=np.int64) for a in inc]
        self.vertices.flags.writeable = False
        self.tets.flags.writeable = False
        self.boundary.flags.writeable = False

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_tets(self):
        return len(self.tets)

    @property
    def interior_vertices(self):
        return np.flatnonzero(~self.boundary)

    def tet_vertices(self, t):
        return self.vertices[self.tets[t]]

    def tetrahedron(self, t):
        return Tetrahedron.from_array(self.tet_vertices(t))

    def mean_diameter(self):
        hs = []
        for t in range(self.num_tets):
            v = self.tet_vertices(t)
            diff = v[:, None, :] - v[None, :, :]
            hs.append(np.sqrt((diff**2).sum(-1)).max())
        return float(np.mean(hs))

    def dump_json(self, path):
        """Debug dump: vertices, tets, boundary flags."""
        data = {
            "vertices": self.vertices.tolist(),
            "tets": self.tets.tolist(),
            "boundary": self.boundary.astype(int).tolist(),
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f)


@dataclass(frozen=True)
class SingularPairCase:
    """Shared-simplex class of a tetrahedron pair with aligning permutations.

    perm1/perm2 reorder the two vertex tuples so the shared vertices come
    first, in the same (ascending global index) order on both sides.
    """

    kind: str                     # identical | face | edge | vertex | distant
    perm1: tuple
    perm2: tuple

    @property
    def shared(self):
        return {"identical": 4, "face": 3, "edge": 2, "vertex": 1, "distant": 0}[self.kind]


@dataclass(frozen=True)
class TetPanelCase:
    kind: str                     # face | edge | vertex | distant
    perm_t: tuple
    perm_tau: tuple

    @property
    def shared(self):
        return {"face": 3, "edge": 2, "vertex": 1, "distant": 0}[self.kind]


@dataclass(frozen=True)
class SupportRegion:
    """Union of two basis supports with its oriented boundary panels."""

    tets: np.ndarray
    boundary_panels: tuple        # tuple of Panel


def _orient_positive(vertices, tet):
    tet = list(tet)
    a, b, c, d = vertices[tet]
    M = np.column_stack([b - a, c - b, d - b])
    if np.linalg.det(M) < 0.0:
        return (tet[0], tet[1], tet[3], tet[2])
    return tuple(tet)


def _build(vertices, tets, ignored=0):
    vertices = np.asarray(vertices, dtype=float)
    tets = [_orient_positive(vertices, t) for t in tets]
    tets = np.array(tets, dtype=np.int64)
    for t in range(len(tets)):
        if tet_volume(vertices[tets[t]]) <= 0.0:
            raise MeshError(f"tet {t} is degenerate")
    face_count = {}
    for tet in tets:
        for f in _TET_FACES:
            key = tuple(sorted(tet[list(f)]))
            face_count[key] = face_count.get(key, 0) + 1
    boundary = np.zeros(len(vertices), dtype=bool)
    for key, cnt in face_count.items():
        if cnt > 2:
            raise MeshError(f"face {key} shared by {cnt} tets; mesh is not conforming")
        if cnt == 1:
            boundary[list(key)] = True
    return Mesh(vertices=vertices, tets=tets, boundary=boundary, ignored_elements=ignored)


# ---------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII input
# ---------------------------------------------------------------------------

def load_msh(path) -> Mesh:
    """Read the ASCII Gmsh v2.2 subset ($MeshFormat/$Nodes/$Elements).

    Element type 4 (tetrahedra) is kept, type 2 (triangles) and any other
    types are ignored; their count is reported on the mesh.
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    idx = 0

    def expect(tag):
        nonlocal idx
        if idx >= len(lines):
            raise ParseError(f"unexpected end of file, expected {tag}", line=idx + 1)
        if lines[idx].strip() != tag:
            raise ParseError(f"expected {tag}, got {lines[idx].strip()!r}", line=idx + 1)
        idx += 1

    expect("$MeshFormat")
    parts = lines[idx].split()
    if not parts or not parts[0].startswith("2.2"):
        raise ParseError(f"unsupported MSH version {lines[idx].strip()!r}", line=idx + 1)
    idx += 1
    expect("$EndMeshFormat")

    expect("$Nodes")
    try:
        n_nodes = int(lines[idx])
    except ValueError:
        raise ParseError("invalid node count", line=idx + 1)
    idx += 1
    coords = {}
    for _ in range(n_nodes):
        if idx >= len(lines):
            raise ParseError("unexpected end of node block", line=idx + 1)
        parts = lines[idx].split()
        try:
            nid = int(parts[0])
            coords[nid] = (float(parts[1]), float(parts[2]), float(parts[3]))
        except (IndexError, ValueError):
            raise ParseError(f"malformed node line {lines[idx]!r}", line=idx + 1)
        idx += 1
    expect("$EndNodes")

    expect("$Elements")
    try:
        n_elem = int(lines[idx])
    except ValueError:
        raise ParseError("invalid element count", line=idx + 1)
    idx += 1
    raw_tets = []
    ignored = 0
    for _ in range(n_elem):
        if idx >= len(lines):
            raise ParseError("unexpected end of element block", line=idx + 1)
        parts = lines[idx].split()
        try:
            etype = int(parts[1])
            ntags = int(parts[2])
            nodes = [int(p) for p in parts[3 + ntags:]]
        except (IndexError, ValueError):
            raise ParseError(f"malformed element line {lines[idx]!r}", line=idx + 1)
        if etype == 4:
            if len(nodes) != 4:
                raise ParseError("tetrahedron with wrong node count", line=idx + 1)
            raw_tets.append(nodes)
        else:
            ignored += 1
        idx += 1
    expect("$EndElements")

    ids = sorted(coords)
    remap = {nid: k for k, nid in enumerate(ids)}
    vertices = np.array([coords[nid] for nid in ids], dtype=float)
    try:
        tets = [[remap[n] for n in tet] for tet in raw_tets]
    except KeyError as e:
        raise ParseError(f"element references unknown node {e}")
    if not tets:
        raise ParseError("no tetrahedra in file")
    return _build(vertices, tets, ignored=ignored)


# ---------------------------------------------------------------------------
# Built-in ball mesh
# ---------------------------------------------------------------------------

def _octahedral_ball():
    verts = [
        (0.0, 0.0, 0.0),
        (1.0, 0.0, 0.0), (-1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0), (0.0, -1.0, 0.0),
        (0.0, 0.0, 1.0), (0.0, 0.0, -1.0),
    ]
    tets = []
    for sx in (1, 2):
        for sy in (3, 4):
            for sz in (5, 6):
                tets.append((0, sx, sy, sz))
    return np.array(verts), tets


def _red_refine(vertices, tets):
    """Uniform refinement: each tet into 4 corner tets plus the inner
    octahedron split into 4 along its shortest diagonal."""
    vertices = list(map(tuple, vertices))
    index = {v: i for i, v in enumerate(vertices)}
    midpoint = {}

    def mid(i, j):
        key = (i, j) if i < j else (j, i)
        m = midpoint.get(key)
        if m is None:
            p = tuple((np.array(vertices[i]) + np.array(vertices[j])) / 2.0)
            m = index.get(p)
            if m is None:
                m = len(vertices)
                vertices.append(p)
                index[p] = m
            midpoint[key] = m
        return m

    new_tets = []
    for v0, v1, v2, v3 in tets:
        m01, m02, m03 = mid(v0, v1), mid(v0, v2), mid(v0, v3)
        m12, m13, m23 = mid(v1, v2), mid(v1, v3), mid(v2, v3)
        new_tets += [
            (v0, m01, m02, m03),
            (v1, m01, m12, m13),
            (v2, m02, m12, m23),
            (v3, m03, m13, m23),
        ]
        # inner octahedron: three diagonals; split along the shortest for
        # shape regularity, ties broken by fixed priority for determinism
        diags = [(m01, m23), (m02, m13), (m03, m12)]
        cycles = {
            (m01, m23): (m02, m03, m13, m12),
            (m02, m13): (m01, m03, m23, m12),
            (m03, m12): (m01, m02, m23, m13),
        }
        arr = lambda i: np.array(vertices[i])
        lengths = [float(np.linalg.norm(arr(p) - arr(q))) for p, q in diags]
        p, q = diags[int(np.argmin(lengths))]
        r = cycles[(p, q)]
        for k in range(4):
            new_tets.append((p, q, r[k], r[(k + 1) % 4]))
    return np.array(vertices, dtype=float), new_tets


def ball_mesh(level: int) -> Mesh:
    """Quasi-uniform mesh of the unit ball.

    The macro mesh is the 8-tet octahedral decomposition; each level applies
    one round of red refinement followed by radial projection of boundary
    vertices onto the unit sphere.
    """
    if level < 0:
        raise ResourceLimit("level must be non-negative")
    if level > MAX_BALL_LEVEL:
        raise ResourceLimit(f"level {level} exceeds the guard {MAX_BALL_LEVEL}")
    vertices, tets = _octahedral_ball()
    mesh = _build(vertices, tets)
    for _ in range(level):
        vertices, tets = _red_refine(mesh.vertices, mesh.tets)
        mesh = _build(vertices, tets)
        v = mesh.vertices.copy()
        onb = mesh.boundary
        norms = np.linalg.norm(v[onb], axis=1)
        v[onb] = v[onb] / norms[:, None]
        mesh = _build(v, [tuple(t) for t in mesh.tets])
    return mesh


# ---------------------------------------------------------------------------
# Pair classification with canonical alignment
# ---------------------------------------------------------------------------

def _alignment_perm(tet, shared_sorted):
    """Permutation putting shared vertices first (in the given order),
    remaining slots in ascending global index."""
    tet = list(tet)
    lead = [tet.index(v) for v in shared_sorted]
    rest = sorted(set(range(4)) - set(lead), key=lambda k: tet[k])
    return tuple(lead + rest)


def classify_pair(mesh: Mesh, t1: int, t2: int) -> SingularPairCase:
    """Shared-simplex class of tets (t1, t2) with aligning permutations.

    Shared vertices are ordered by ascending global index on both sides, so
    the aligned reference maps agree on the shared simplex.
    """
    tet1 = list(mesh.tets[t1])
    tet2 = list(mesh.tets[t2])
    if t1 == t2:
        return SingularPairCase("identical", (0, 1, 2, 3), (0, 1, 2, 3))
    shared = sorted(set(tet1) & set(tet2))
    kind = {3: "face", 2: "edge", 1: "vertex", 0: "distant"}.get(len(shared))
    if kind is None:
        raise MeshError(f"tets {t1}, {t2} share {len(shared)} vertices but are distinct")
    return SingularPairCase(kind, _alignment_perm(tet1, shared), _alignment_perm(tet2, shared))


def _tri_alignment_perm(tri, shared_sorted):
    tri = list(tri)
    lead = [tri.index(v) for v in shared_sorted]
    rest = sorted(set(range(3)) - set(lead), key=lambda k: tri[k])
    return tuple(lead + rest)


def classify_tet_panel(mesh: Mesh, t: int, panel_vertex_ids) -> TetPanelCase:
    """Shared-simplex class of a tet and a panel given by its vertex ids."""
    tet = list(mesh.tets[t])
    tri = list(panel_vertex_ids)
    shared = sorted(set(tet) & set(tri))
    kind = {3: "face", 2: "edge", 1: "vertex", 0: "distant"}[len(shared)]
    return TetPanelCase(kind, _alignment_perm(tet, shared), _tri_alignment_perm(tri, shared))


# ---------------------------------------------------------------------------
# Support regions
# ---------------------------------------------------------------------------

def region_boundary_panels(mesh: Mesh, region_tets) -> tuple:
    """Oriented boundary panels of a union of tets.

    A face belongs to the boundary iff exactly one region tet is incident to
    it; normals point out of the region.
    """
    region = set(int(t) for t in region_tets)
    face_owner = {}
    face_count = {}
    for t in region:
        tet = mesh.tets[t]
        for local, f in enumerate(_TET_FACES):
            key = tuple(sorted(tet[list(f)]))
            face_count[key] = face_count.get(key, 0) + 1
            face_owner[key] = (t, local)
    panels = []
    for key in sorted(face_count):
        if face_count[key] != 1:
            continue
        t, local = face_owner[key]
        tet = mesh.tets[t]
        ids = sorted(key)
        verts = mesh.vertices[ids]
        opposite = mesh.vertices[tet[local]]
        n = outward_normal(verts, opposite)
        panels.append(
            _RegionPanel(
                vertex_ids=tuple(ids),
                panel=Panel(verts[0], verts[1], verts[2], n, owner=t),
            )
        )
    return tuple(panels)


@dataclass(frozen=True)
class _RegionPanel:
    vertex_ids: tuple
    panel: Panel


def support_region(i: int, j: int, mesh: Mesh) -> SupportRegion:
    """Union of the stars of vertices i and j with its boundary panels."""
    tets = np.array(sorted(set(mesh.incidence[i].tolist()) | set(mesh.incidence[j].tolist())),
                    dtype=np.int64)
    panels = region_boundary_panels(mesh, tets)
    return SupportRegion(tets=tets, boundary_panels=panels)


def min_shape_angle(mesh: Mesh) -> float:
    return min(shape_metrics(mesh.tetrahedron(t)).theta for t in range(mesh.num_tets))
