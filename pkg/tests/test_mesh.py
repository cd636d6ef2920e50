import numpy as np
import pytest

from fraclap.errors import MeshError, ParseError, ResourceLimit
from fraclap.geometry import shape_metrics
from fraclap.mesh import (
    ball_mesh,
    classify_pair,
    classify_tet_panel,
    load_msh,
    min_shape_angle,
    support_region,
)

SINGLE_TET_MSH = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
$EndNodes
$Elements
1
1 4 2 0 1 1 2 3 4
$EndElements
"""

TWO_TET_MSH = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
5
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
5 0.3 0.3 -1
$EndNodes
$Elements
3
1 4 2 0 1 1 2 3 4
2 4 2 0 1 1 2 3 5
3 2 2 0 1 1 2 3
$EndElements
"""


def test_load_single_tet(tmp_path):
    p = tmp_path / "one.msh"
    p.write_text(SINGLE_TET_MSH)
    m = load_msh(p)
    assert m.num_vertices == 4
    assert m.num_tets == 1
    assert m.boundary.all()


def test_load_two_tets_shared_face_interior(tmp_path):
    p = tmp_path / "two.msh"
    p.write_text(TWO_TET_MSH)
    m = load_msh(p)
    assert m.num_tets == 2
    # the triangle element is ignored and counted
    assert m.ignored_elements == 1
    # the shared face (vertices 0,1,2) is interior, but all vertices still
    # touch the boundary in a 2-tet mesh
    region = support_region(0, 0, m)
    keys = {rp.vertex_ids for rp in region.boundary_panels}
    assert tuple(sorted((0, 1, 2))) not in keys


def test_load_msh_errors(tmp_path):
    p = tmp_path / "bad.msh"
    p.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    with pytest.raises(ParseError):
        load_msh(p)
    p.write_text(SINGLE_TET_MSH.replace("1 4 2 0 1 1 2 3 4", "1 4 2 0 1 1 2 3"))
    with pytest.raises(ParseError):
        load_msh(p)


def test_ball_counts_level0():
    m = ball_mesh(0)
    assert m.num_vertices == 7
    assert m.num_tets == 8
    assert len(m.interior_vertices) == 1


def test_ball_counts_level1():
    m = ball_mesh(1)
    assert m.num_tets == 64


def test_ball_boundary_on_sphere():
    for lvl in (1, 2):
        m = ball_mesh(lvl)
        r = np.linalg.norm(m.vertices[m.boundary], axis=1)
        assert np.abs(r - 1.0).max() <= 1e-12


def test_ball_level_guard():
    with pytest.raises(ResourceLimit):
        ball_mesh(99)
    with pytest.raises(ResourceLimit):
        ball_mesh(-1)


def test_ball_shape_regularity_over_levels():
    angles = [min_shape_angle(ball_mesh(lvl)) for lvl in range(4)]
    assert min(angles) > 0.3  # no degeneration under refinement


def test_classify_pair_cases():
    m = ball_mesh(1)
    case = classify_pair(m, 3, 3)
    assert case.kind == "identical"
    assert case.perm1 == case.perm2
    counts = {"identical": 0, "face": 0, "edge": 0, "vertex": 0, "distant": 0}
    for t2 in range(m.num_tets):
        counts[classify_pair(m, 0, t2).kind] += 1
    assert counts["identical"] == 1
    assert counts["face"] >= 1
    assert counts["distant"] >= 1


def test_classify_pair_alignment():
    m = ball_mesh(1)
    for t1 in range(0, 16):
        for t2 in range(t1 + 1, 16):
            case = classify_pair(m, t1, t2)
            n = case.shared
            if n == 0:
                continue
            ids1 = m.tets[t1][list(case.perm1)][:n]
            ids2 = m.tets[t2][list(case.perm2)][:n]
            assert (ids1 == ids2).all()
            assert (np.diff(ids1) > 0).all() or n == 1
            # symmetry of the kind
            assert classify_pair(m, t2, t1).kind == case.kind


def test_classify_tet_panel():
    m = ball_mesh(0)
    tet = m.tets[0]
    face = tuple(sorted(tet[:3]))
    case = classify_tet_panel(m, 0, face)
    assert case.kind == "face"
    # map agreement on the shared face
    tv = m.vertices[m.tets[0][list(case.perm_t)]]
    pv = m.vertices[np.array(face)[list(case.perm_tau)]]
    assert np.allclose(tv[:3], pv, atol=1e-13)
    other = m.tets[5]
    shared = set(tet.tolist()) & set(other.tolist())
    kind = {3: "face", 2: "edge", 1: "vertex", 0: "distant"}[len(shared & set(face))]
    assert classify_tet_panel(m, 5, face).kind == kind


def test_support_region_star_closed():
    m = ball_mesh(1)
    i = int(m.interior_vertices[0])
    region = support_region(i, i, m)
    assert set(region.tets.tolist()) == set(m.incidence[i].tolist())
    # closed polyhedral boundary: each boundary edge shared by exactly 2 panels
    edge_count = {}
    for rp in region.boundary_panels:
        a, b, c = rp.vertex_ids
        for e in ((a, b), (a, c), (b, c)):
            key = tuple(sorted(e))
            edge_count[key] = edge_count.get(key, 0) + 1
    assert all(v == 2 for v in edge_count.values())


def test_support_region_flux_closure():
    m = ball_mesh(1)
    ints = m.interior_vertices
    for i, j in ((int(ints[0]), int(ints[0])), (int(ints[0]), int(ints[-1]))):
        region = support_region(i, j, m)
        total = np.zeros(3)
        area = 0.0
        for rp in region.boundary_panels:
            verts = rp.panel.vertices
            a2 = np.linalg.norm(np.cross(verts[1] - verts[0], verts[2] - verts[0]))
            total += 0.5 * a2 * rp.panel.n
            area += 0.5 * a2
        assert np.linalg.norm(total) <= 1e-12 * area


def test_basis_vanishes_on_region_boundary():
    from fraclap.kernels import basis_restriction

    m = ball_mesh(1)
    ints = m.interior_vertices
    i, j = int(ints[0]), int(ints[1])
    region = support_region(i, j, m)
    for rp in region.boundary_panels:
        verts = m.vertices[list(rp.vertex_ids)]
        # sample points on the panel
        for lam in ((1 / 3, 1 / 3, 1 / 3), (0.7, 0.2, 0.1), (0.05, 0.05, 0.9)):
            p = lam[0] * verts[0] + lam[1] * verts[1] + lam[2] * verts[2]
            for node in (i, j):
                # hat value at p: nonzero only if p in a tet containing node
                val = 0.0
                for t in m.incidence[node]:
                    tv = m.vertices[m.tets[t]]
                    r = basis_restriction(node, m.tets[t].tolist(), tv)
                    T = np.column_stack([tv[1] - tv[0], tv[2] - tv[0], tv[3] - tv[0]])
                    lamb = np.linalg.solve(T, p - tv[0])
                    lam4 = np.concatenate([[1 - lamb.sum()], lamb])
                    if lam4.min() >= -1e-12:
                        val = r.v0 + r.g @ (p - tv[0])
                        break
                assert abs(val) <= 1e-13


def test_dump_json(tmp_path):
    m = ball_mesh(0)
    path = tmp_path / "mesh.json"
    m.dump_json(path)
    import json

    data = json.loads(path.read_text())
    assert len(data["vertices"]) == 7
    assert len(data["tets"]) == 8
    assert sum(data["boundary"]) == 6
