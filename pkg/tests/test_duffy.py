import math

import numpy as np
import pytest

from fraclap import duffy
from fraclap.errors import AlignmentError, ExponentMismatch, InvalidParameter, WrongCase
from fraclap.kernels import hat_gradients
from fraclap.oracle import simplex_distance, standard_config, singular_value

RNG = np.random.default_rng(31415)

TT_TARGET = 1.0 / 36.0
TP_TARGET = 1.0 / 12.0


# ---------------------------------------------------------------------------
# table structure
# ---------------------------------------------------------------------------

def test_subdomain_counts():
    expect = {
        "tt-vertex": 2, "tt-edge": 4, "tt-face": 17, "tt-identical": 9,
        "tp-vertex": 2, "tp-edge": 4, "tp-face": 9,
    }
    for kind, n in expect.items():
        assert duffy.case_table(kind).num_subdomains == n


def test_face_table_symmetric_pairs():
    t = duffy.case_table("tt-face")
    for i in range(7):
        assert t.subdomains[7 + i].symmetric_of == i
        # the symmetric subdomain swaps the two component maps
        h = tuple(RNG.random(5) for _ in range(3))
        assert np.allclose(t.subdomains[i].d1(h), t.subdomains[7 + i].d2(h))
        assert np.allclose(t.subdomains[i].d2(h), t.subdomains[7 + i].d1(h))


def test_face_jacobians_printed_values():
    t = duffy.case_table("tt-face")
    h = tuple(np.array([v]) for v in (0.37, 0.61, 0.83))
    h1, h2, h3 = (v[0] for v in h)
    for m in range(15):
        assert t.subdomains[m].jac(h)[0] == pytest.approx(h1**2 * h2, rel=1e-14)
    assert t.subdomains[15].jac(h)[0] == pytest.approx(h1, rel=1e-14)
    assert t.subdomains[16].jac(h)[0] == pytest.approx(h1**2, rel=1e-14)
    assert t.xi_jac_powers == (5, 4, 3)


def test_tp_edge_jacobians_printed_values():
    t = duffy.case_table("tp-edge")
    h = tuple(np.array([v]) for v in (0.42, 0.58, 0.9))
    h1, h2, _ = (v[0] for v in h)
    for m in range(3):
        assert t.subdomains[m].jac(h)[0] == pytest.approx(h2, rel=1e-14)
    assert t.subdomains[3].jac(h)[0] == pytest.approx(h1**2 * h2, rel=1e-14)
    assert t.xi_jac_powers == (4, 3)


def test_unknown_kind():
    with pytest.raises(InvalidParameter):
        duffy.case_table("tt-banana")


# ---------------------------------------------------------------------------
# partition of volume (the decisive split validation)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", duffy.TT_KINDS + ("distant-tt",))
def test_partition_volume_tt(kind):
    assert duffy.partition_volume(kind, n=12) == pytest.approx(TT_TARGET, abs=1e-10)


@pytest.mark.parametrize("kind", duffy.TP_KINDS + ("distant-tp",))
def test_partition_volume_tp(kind):
    assert duffy.partition_volume(kind, n=12) == pytest.approx(TP_TARGET, abs=1e-10)


# ---------------------------------------------------------------------------
# prefactor audit
# ---------------------------------------------------------------------------

def test_exponent_audit_agrees_except_tp_vertex():
    for kind in duffy.ALL_KINDS:
        audit = duffy.xi_exponent_audit(kind)
        table = duffy.case_table(kind).paper_exponents
        if kind == "tp-vertex":
            assert audit == (4,)
            assert table == (3,)
            with pytest.raises(ExponentMismatch):
                duffy.xi_exponent_audit(kind, strict=True)
        else:
            assert audit == table
            duffy.xi_exponent_audit(kind, strict=True)


def test_prefactor_values_at_half():
    assert duffy.prefactor("tt-vertex", 0.5) == pytest.approx(0.25)
    assert duffy.prefactor("tt-identical", 0.5) == pytest.approx(1 / 12)
    assert duffy.prefactor("tp-vertex", 0.5, mode="audit") == pytest.approx(0.25)
    assert duffy.prefactor("tp-vertex", 0.5, mode="paper") == pytest.approx(1 / 3)
    with pytest.raises(InvalidParameter):
        duffy.prefactor("tt-face", 0.5, mode="bogus")


# ---------------------------------------------------------------------------
# singular integrals: invariances
# ---------------------------------------------------------------------------

def _pair_value(cfg, s, n, mode="audit"):
    return singular_value(cfg, s, n, mode=mode)


@pytest.mark.parametrize("kind", duffy.ALL_KINDS)
def test_scaling_invariance(kind):
    # uniform scaling multiplies values by lambda^(3-2s) for hat bases
    s = 0.6
    lam = 2.0
    v1 = _pair_value(standard_config(kind, scale=1.0), s, 6)
    v2 = _pair_value(standard_config(kind, scale=lam), s, 6)
    assert v2 == pytest.approx(lam ** (3 - 2 * s) * v1, rel=1e-10)


@pytest.mark.parametrize("kind", duffy.TT_KINDS)
def test_isometry_invariance(kind):
    s = 0.45
    cfg = standard_config(kind)
    base = _pair_value(cfg, s, 6)
    # a rigid rotation + translation
    th = 0.83
    Q = np.array([
        [math.cos(th), -math.sin(th), 0],
        [math.sin(th), math.cos(th), 0],
        [0, 0, 1.0],
    ]) @ np.array([
        [1, 0, 0],
        [0, math.cos(0.4), -math.sin(0.4)],
        [0, math.sin(0.4), math.cos(0.4)],
    ])
    shift = np.array([0.3, -1.2, 0.7])
    from fraclap.oracle import PairConfig

    rot = PairConfig(cfg.kind, cfg.verts1 @ Q.T + shift, cfg.verts2 @ Q.T + shift,
                     tuple(Q @ g for g in cfg.gi), tuple(Q @ g for g in cfg.gj),
                     cfg.v0i, cfg.v0j, Q @ cfg.direction, None)
    assert _pair_value(rot, s, 6) == pytest.approx(base, rel=1e-12)


def test_tt_symmetry_in_element_order():
    s = 0.35
    cfg = standard_config("tt-edge")
    a = duffy.singular_integral("tt-edge", s=s, n=7, verts1=cfg.verts1,
                                verts2=cfg.verts2, gi=cfg.gi, gj=cfg.gj)
    b = duffy.singular_integral("tt-edge", s=s, n=7, verts1=cfg.verts2,
                                verts2=cfg.verts1,
                                gi=(cfg.gi[1], cfg.gi[0]),
                                gj=(cfg.gj[1], cfg.gj[0]))
    assert a == pytest.approx(b, rel=1e-12)


def test_nonshared_vertex_permutation_invariance():
    # permuting the non-shared vertices of an aligned pair leaves the value
    # unchanged up to quadrature tolerance
    s = 0.5
    cfg = standard_config("tt-vertex")
    base = _pair_value(cfg, s, 12)
    perm = [0, 2, 3, 1]  # keep the shared vertex in front
    v2p = cfg.verts2[perm]
    from fraclap.oracle import PairConfig

    cfg2 = PairConfig(cfg.kind, cfg.verts1, v2p, cfg.gi, cfg.gj, cfg.v0i,
                      cfg.v0j, cfg.direction, None)
    assert _pair_value(cfg2, s, 12) == pytest.approx(base, rel=1e-8)


def test_zero_gradients_give_zero():
    for kind in duffy.ALL_KINDS:
        cfg = standard_config(kind)
        if kind.startswith("tt"):
            val = duffy.singular_integral(kind, s=0.5, n=4, verts1=cfg.verts1,
                                          verts2=cfg.verts2,
                                          gi=(np.zeros(3), np.zeros(3)),
                                          gj=(np.zeros(3), np.zeros(3)))
        else:
            val = duffy.singular_integral(kind, s=0.5, n=4,
                                          tet_verts=cfg.verts1,
                                          panel_verts=cfg.verts2,
                                          normal=cfg.normal,
                                          gi=np.zeros(3), gj=np.zeros(3))
        assert val == 0.0


def test_alignment_error_raised():
    cfg = standard_config("tt-face")
    bad = cfg.verts2.copy()
    bad[0] += 1e-3  # break the shared-vertex agreement
    with pytest.raises(AlignmentError):
        duffy.singular_integral("tt-face", s=0.5, n=3, verts1=cfg.verts1,
                                verts2=bad, gi=cfg.gi, gj=cfg.gj)


def test_exponential_convergence_all_kinds():
    # |Q^n - Q^16| decays loglinearly for every singular class
    s = 0.8
    for kind in duffy.ALL_KINDS:
        cfg = standard_config(kind)
        ref = _pair_value(cfg, s, 16)
        ns = np.arange(2, 9)
        errs = np.array([abs(_pair_value(cfg, s, int(n)) - ref) for n in ns])
        good = errs > 1e-14 * abs(ref)
        assert good.sum() >= 4
        slope, _ = np.polyfit(ns[good], np.log10(errs[good]), 1)
        assert slope < -0.4, (kind, errs)


# ---------------------------------------------------------------------------
# distant integrals
# ---------------------------------------------------------------------------

def _gauss_jacobi_simplex_pair(verts1, verts2, fvals, s, n):
    """Independent positive-distance quadrature: conical-product rule with
    Gauss-Jacobi weights per element (different node family than the
    production rule)."""
    from scipy.special import roots_jacobi, roots_legendre

    def simplex_rule(n):
        # x1 with weight x1^2 (area of the cross-section), then x2+x3 <= x1
        t1, w1 = roots_jacobi(n, 0.0, 2.0)    # weight (1+x)^2 on [-1,1]
        r1 = 0.5 * (t1 + 1.0)
        w1 = w1 / 8.0                          # ((1+x)/2)^2 dx/2 normalization
        t2, w2 = roots_jacobi(n, 0.0, 1.0)
        r2 = 0.5 * (t2 + 1.0)
        w2 = w2 / 4.0
        t3, w3 = roots_legendre(n)
        r3 = 0.5 * (t3 + 1.0)
        w3 = w3 / 2.0
        pts = []
        wts = []
        for a, wa in zip(r1, w1):
            for b, wb in zip(r2, w2):
                for c, wc in zip(r3, w3):
                    # x1 = a; the cross-section triangle {x2+x3 <= a}
                    x2 = a * b * c
                    x3 = a * b * (1 - c)
                    pts.append((a, x2, x3))
                    wts.append(wa * wb * wc)
        return np.array(pts), np.array(wts)

    X, W = simplex_rule(n)
    M1 = np.column_stack([verts1[1] - verts1[0], verts1[2] - verts1[1],
                          verts1[3] - verts1[1]])
    M2 = np.column_stack([verts2[1] - verts2[0], verts2[2] - verts2[1],
                          verts2[3] - verts2[1]])
    P1 = X @ M1.T + verts1[0]
    P2 = X @ M2.T + verts2[0]
    det1 = abs(np.linalg.det(M1))
    det2 = abs(np.linalg.det(M2))
    total = 0.0
    for p, wp in zip(P1, W):
        u = P2 - p
        r2 = (u**2).sum(axis=1)
        total += wp * np.sum(W * fvals(p, P2) * r2 ** (-(3 + 2 * s) / 2))
    return det1 * det2 * total


def test_distant_matches_independent_rule():
    # hat-product kernel on two unit tets at distance ~10
    s = 0.55
    s3 = math.sqrt(3) / 2
    v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s3, 0], [0.5, s3 / 3, 0.8]])
    v2 = v1 + np.array([10.0, 0.4, 0.2])
    g1 = hat_gradients(v1)
    g2 = hat_gradients(v2)
    G1 = np.vstack([g1[0], np.zeros(3)])
    G2 = np.vstack([np.zeros(3), g2[1]])
    V01 = np.array([1.0, 0.0])
    V02 = np.array([0.0, 0.0])
    got = duffy.tt_distant_matrix(v1, v2, G1, V01, G2, V02, s, 10,
                                  flavor="product")[0, 1]

    def f(p, P2):
        phi_i = 1.0 + (p - v1[0]) @ g1[0]
        phi_j = (P2 - v2[0]) @ g2[1]
        return phi_i * phi_j

    ref = _gauss_jacobi_simplex_pair(v1, v2, f, s, 10)
    assert got == pytest.approx(ref, rel=1e-10)


def test_distant_scaling_and_rotation():
    s = 0.7
    s3 = math.sqrt(3) / 2
    v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s3, 0], [0.5, s3 / 3, 0.8]])
    v2 = v1 + np.array([3.0, 0.0, 0.0])
    g1 = hat_gradients(v1)
    G1 = np.vstack([g1[0], g1[1]])
    V01 = np.array([1.0, 0.0])
    base = duffy.tt_distant_matrix(v1, v2, G1, V01, G1, V01, s, 8)[0, 1]
    lam = 2.0
    scaled = duffy.tt_distant_matrix(lam * v1, lam * v2, G1 / lam, V01,
                                     G1 / lam, V01, s, 8)[0, 1]
    assert scaled == pytest.approx(lam ** (3 - 2 * s) * base, rel=1e-12)
    th = 0.9
    Q = np.array([[math.cos(th), 0, math.sin(th)], [0, 1, 0],
                  [-math.sin(th), 0, math.cos(th)]])
    rot = duffy.tt_distant_matrix(v1 @ Q.T, v2 @ Q.T, G1 @ Q.T, V01,
                                  G1 @ Q.T, V01, s, 8)[0, 1]
    assert rot == pytest.approx(base, rel=1e-12)


def test_distant_rejects_touching():
    cfg = standard_config("tt-vertex")
    with pytest.raises(WrongCase):
        duffy.tt_distant_matrix(cfg.verts1, cfg.verts2,
                                np.zeros((1, 3)), np.zeros(1),
                                np.zeros((1, 3)), np.zeros(1), 0.5, 4)


def test_simplex_distance_helper():
    cfg = standard_config("tt-vertex")
    assert simplex_distance(cfg.verts1, cfg.verts2) == 0.0
    off = cfg.verts2 + np.array([-0.5, 0, 0])
    d = simplex_distance(cfg.verts1, off)
    assert d == pytest.approx(0.5, rel=1e-12)


# ---------------------------------------------------------------------------
# vertex-batch product grids agree with the stacked grids
# ---------------------------------------------------------------------------

def test_vertex_half_grids_match_full_table():
    n = 5
    XA, WA, XB, WB = duffy.vertex_half_grids(n)
    # total measure equals the eta-part of the vertex table
    _, _, JW = duffy.eta_grid("tt-vertex", n)
    assert WA.sum() * WB.sum() * 2 == pytest.approx(JW.sum(), rel=1e-13)
