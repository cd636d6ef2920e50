"""Independent brute-force references used by tests and acceptance.

Everything here deliberately avoids the singular transformation tables it
validates: the eps-separation oracle only uses positive-distance tensor
quadrature plus Richardson extrapolation, the identical-pair oracle uses
recursive refinement whose cross terms are themselves eps-validated classes,
and the panel flux oracle uses adaptive two-dimensional subdivision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import duffy
from .errors import OracleUnstable
from .kernels import hat_gradients
from .mesh import Mesh, _red_refine, classify_pair

DEFAULT_EPS = tuple(2.0**-k for k in range(3, 12))


# ---------------------------------------------------------------------------
# Touching configurations for the seven singular classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairConfig:
    """A canonically aligned touching configuration with basis data.

    For tt kinds: verts1/verts2 (4,3), gradient pairs gi/gj per side, first
    vertex values v0 per side, and a separating direction for the second
    element.  For tp kinds verts2 holds the panel (3,3) and normal is set.
    """

    kind: str
    verts1: np.ndarray
    verts2: np.ndarray
    gi: tuple
    gj: tuple
    v0i: tuple
    v0j: tuple
    direction: np.ndarray
    normal: np.ndarray = None


def _hat(verts, local):
    return hat_gradients(verts)[local]


def standard_config(kind: str, scale: float = 1.0) -> PairConfig:
    """A clean unit configuration of the requested touching class.

    Basis functions are global hats of the two-element patch: continuous,
    piecewise linear, one per chosen node.  The separating direction keeps
    the translated second element at positive distance for every eps > 0.
    """
    s2 = math.sqrt(3) / 2
    if kind == "tt-vertex":
        v1 = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 0, 1]], float)
        v2 = np.array([[0, 0, 0], [-1, 0, 0], [-1, -1, 0], [-1, 0, -1]], float)
        # phi_i: hat at the shared vertex; phi_j: hat at vertex b of t1
        gi = (_hat(v1, 0), _hat(v2, 0))
        gj = (_hat(v1, 1), np.zeros(3))
        cfg = PairConfig(kind, v1, v2, gi, gj, (1.0, 1.0), (0.0, 0.0),
                         direction=np.array([-1.0, 0, 0]))
    elif kind == "tt-edge":
        v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s2, 0], [0.5, s2 / 3, 0.8]], float)
        v2 = np.array([[0, 0, 0], [1, 0, 0], [0.5, -s2, 0], [0.5, -s2 / 3, -0.8]], float)
        gi = (_hat(v1, 0), _hat(v2, 0))       # hat at shared vertex a
        gj = (_hat(v1, 2), np.zeros(3))       # hat at t1's off-edge vertex
        cfg = PairConfig(kind, v1, v2, gi, gj, (1.0, 1.0), (0.0, 0.0),
                         direction=np.array([0.0, -1.0, 0]))
    elif kind == "tt-face":
        v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s2, 0], [0.5, s2 / 3, 0.8]], float)
        v2 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s2, 0], [0.5, s2 / 3, -0.8]], float)
        gi = (_hat(v1, 0), _hat(v2, 0))       # hat at shared vertex a
        gj = (_hat(v1, 3), np.zeros(3))       # hat at t1's apex
        cfg = PairConfig(kind, v1, v2, gi, gj, (1.0, 1.0), (0.0, 0.0),
                         direction=np.array([0.0, 0.0, -1.0]))
    elif kind == "tt-identical":
        v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s2, 0], [0.5, s2 / 3, 0.8]], float)
        gi = (_hat(v1, 0), _hat(v1, 0))
        gj = (_hat(v1, 1), _hat(v1, 1))
        cfg = PairConfig(kind, v1, v1.copy(), gi, gj, (1.0, 0.0), (1.0, 0.0),
                         direction=np.array([0.0, 0.0, 1.0]))
    elif kind == "tp-vertex":
        v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s2, 0], [0.5, s2 / 3, 0.8]], float)
        pan = np.array([[0, 0, 0], [-1, 0, 0], [-0.5, -s2, 0]], float)
        nrm = np.array([0.0, 0.0, 1.0])
        gi = _hat(v1, 3)   # hats at off-panel nodes vanish on the panel plane
        gj = _hat(v1, 1)
        cfg = PairConfig(kind, v1, pan, gi, gj, None, None,
                         direction=np.array([-1.0, 0.0, 0.0]), normal=nrm)
    elif kind == "tp-edge":
        v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s2, 0], [0.5, s2 / 3, 0.8]], float)
        pan = np.array([[0, 0, 0], [1, 0, 0], [0.5, -s2, 0]], float)
        nrm = np.array([0.0, 0.0, 1.0])
        gi = _hat(v1, 3)
        gj = _hat(v1, 3)
        cfg = PairConfig(kind, v1, pan, gi, gj, None, None,
                         direction=np.array([0.0, -1.0, 0.0]), normal=nrm)
    elif kind == "tp-face":
        v1 = np.array([[0, 0, 0], [1, 0, 0], [0.5, s2, 0], [0.5, s2 / 3, 0.8]], float)
        pan = v1[:3].copy()
        nrm = np.array([0.0, 0.0, -1.0])
        gi = _hat(v1, 3)
        gj = _hat(v1, 3)
        cfg = PairConfig(kind, v1, pan, gi, gj, None, None,
                         direction=np.array([0.0, 0.0, -1.0]), normal=nrm)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if scale != 1.0:
        if kind.startswith("tt"):
            gi_s = tuple(g / scale for g in cfg.gi)
            gj_s = tuple(g / scale for g in cfg.gj)
        else:
            gi_s = cfg.gi / scale
            gj_s = cfg.gj / scale
        cfg = PairConfig(cfg.kind, cfg.verts1 * scale, cfg.verts2 * scale,
                         gi_s, gj_s, cfg.v0i, cfg.v0j, cfg.direction, cfg.normal)
    return cfg


def singular_value(cfg: PairConfig, s, n, mode="audit"):
    """Value of the classified singular rule on a configuration."""
    if cfg.kind.startswith("tt"):
        G1 = np.vstack([cfg.gi[0], cfg.gj[0]])
        G2 = np.vstack([cfg.gi[1], cfg.gj[1]])
        return float(duffy.tt_pair_matrix(cfg.kind, cfg.verts1, cfg.verts2,
                                          G1, G2, s, n, mode=mode)[0, 1])
    G = np.vstack([cfg.gi, cfg.gj])
    return float(duffy.tp_pair_matrix(cfg.kind, cfg.verts1, cfg.verts2,
                                      cfg.normal, G, s, n, mode=mode)[0, 1])


def _distant_value(cfg: PairConfig, offset, s, n):
    if cfg.kind.startswith("tt"):
        G1 = np.vstack([cfg.gi[0], cfg.gj[0]])
        G2 = np.vstack([cfg.gi[1], cfg.gj[1]])
        V01 = np.array([cfg.v0i[0], cfg.v0j[0]])
        V02 = np.array([cfg.v0i[1], cfg.v0j[1]])
        V = duffy.tt_distant_matrix(cfg.verts1, cfg.verts2 + offset, G1, V01,
                                    G2, V02, s, n, flavor="k1")
        return float(V[0, 1])
    G = np.vstack([cfg.gi, cfg.gj])
    # the standard tp configurations use hats at non-first tet vertices, so
    # their value at the tet anchor is 0; only the panel is translated
    V0 = np.zeros(2)
    V = duffy.tp_distant_matrix(cfg.verts1, cfg.verts2 + offset, cfg.normal,
                                G, V0, s, n)
    return float(V[0, 1])


@dataclass
class EpsReference:
    value: float
    error_estimate: float
    eps: np.ndarray
    values: np.ndarray
    fit_residual: float


def eps_separation_reference(kind, s, eps_list=DEFAULT_EPS, n=16, scale=1.0,
                             config: PairConfig = None) -> EpsReference:
    """Extrapolated positive-distance reference for a touching class.

    Translates the second element by eps * h along the configuration's
    separating direction, integrates with the positive-distance tensor rule,
    and extrapolates eps -> 0 with the basis {1, e^p, e, e^(1+p), e^2},
    p = min(1, 2-2s).

    The translation scheme is numerically sound only when the near-touching
    set is a point or an edge; for the face-sharing classes the gap layer is
    two-dimensional and the fixed-order distant rule cannot resolve it, and
    an identical pair admits no disjoint translate at all.  Those classes
    are referenced by refinement_reference, which extrapolates the exact
    scaling recursion of red refinement and is grounded in the same
    positive-distance quadrature.
    """
    if kind in ("tt-identical", "tt-face", "tp-face", "tt-edge"):
        ref, est = refinement_reference(kind, s, config=config)
        return EpsReference(ref, est, np.array([]), np.array([]), 0.0)
    cfg = config or standard_config(kind, scale)
    v1 = cfg.verts1
    h = 0.5 * max(np.linalg.norm(v1[a] - v1[b])
                  for a in range(len(v1)) for b in range(len(v1)))
    eps = np.asarray(list(eps_list), float)
    if np.any(np.diff(eps) >= 0):
        raise OracleUnstable("eps list must decrease")
    vals = np.array([_distant_value(cfg, cfg.direction * (e * h), s, n)
                     for e in eps])
    p = min(1.0, 2.0 - 2.0 * s)
    powers = sorted(set([0.0, p, 1.0, 1.0 + p, 2.0, 3.0]))
    B = np.column_stack([eps**q for q in powers])
    coef, *_ = np.linalg.lstsq(B, vals, rcond=None)
    resid = float(np.max(np.abs(B @ coef - vals)))
    # refit on the smaller half for an extrapolation error estimate
    half = len(eps) // 2
    B2 = B[half:]
    coef2, *_ = np.linalg.lstsq(B2, vals[half:], rcond=None)
    est = abs(coef2[0] - coef[0]) + resid
    return EpsReference(float(coef[0]), float(est), eps, vals, resid)


# ---------------------------------------------------------------------------
# Scaling-recursion references by red refinement
# ---------------------------------------------------------------------------

def _classify_coords(v1, v2, tol=1e-12):
    d = np.linalg.norm(v1[:, None, :] - v2[None, :, :], axis=-1)
    pairs = [(i, j) for i in range(len(v1)) for j in range(len(v2))
             if d[i, j] < tol]
    kind = {0: "distant", 1: "vertex", 2: "edge", 3: "face",
            4: "identical"}[len(pairs)]
    s1 = [p[0] for p in pairs]
    s2 = [p[1] for p in pairs]
    p1 = s1 + [k for k in range(len(v1)) if k not in s1]
    p2 = s2 + [k for k in range(len(v2)) if k not in s2]
    return kind, p1, p2


def _tet_children(verts):
    v, tets = _red_refine(verts, [(0, 1, 2, 3)])
    m = Mesh(vertices=np.array(v), tets=np.array(tets),
             boundary=np.zeros(len(v), bool))
    return [m.vertices[m.tets[t]] for t in range(8)]


def _tri_children(verts):
    a, b, c = verts
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return [np.array(x) for x in ((a, ab, ca), (ab, b, bc), (ca, bc, c),
                                  (ab, bc, ca))]


_SAME_CLASS_RATIO = {
    # count of same-class child pairs times the exact value scaling 2^(2s-5)
    "tt-vertex": lambda s: 2.0 ** (2 * s - 5),
    "tt-edge": lambda s: 2.0 * 2.0 ** (2 * s - 5),
    "tt-face": lambda s: 4.0 * 2.0 ** (2 * s - 5),
    "tt-identical": lambda s: 8.0 * 2.0 ** (2 * s - 5),
    "tp-vertex": lambda s: 2.0 ** (2 * s - 5),
    "tp-edge": lambda s: 2.0 * 2.0 ** (2 * s - 5),
    "tp-face": lambda s: 4.0 * 2.0 ** (2 * s - 5),
}


def _tt_cross_and_same(klass, v1, v2, G1, G2, anchors, s, n, nd):
    (a1, va1), (a2, va2) = anchors
    cross = 0.0
    same = []
    c1 = _tet_children(v1)
    c2 = c1 if np.array_equal(v1, v2) else _tet_children(v2)
    for a in c1:
        for b in c2:
            kind, p1, p2 = _classify_coords(a, b)
            if kind == klass:
                same.append((a, b))
                continue
            if kind == "distant":
                V01 = np.array([va1[k] + G1[k] @ (a[0] - a1) for k in range(2)])
                V02 = np.array([va2[k] + G2[k] @ (b[0] - a2) for k in range(2)])
                V = duffy.tt_distant_matrix(a, b, G1, V01, G2, V02, s, nd,
                                            flavor="k1", check=False)
            else:
                V = duffy.tt_pair_matrix("tt-" + kind, a[p1], b[p2], G1, G2,
                                         s, n, check=False)
            cross += V[0, 1]
    return cross, same


def _tp_cross_and_same(klass, vt, vp, normal, G, anchor, s, n, nd):
    a1, va1 = anchor
    cross = 0.0
    same = []
    for a in _tet_children(vt):
        for b in _tri_children(vp):
            kind, p1, p2 = _classify_coords(a, b)
            if kind == klass:
                same.append((a, b))
                continue
            if kind == "distant":
                V0 = np.array([va1[k] + G[k] @ (a[0] - a1) for k in range(2)])
                V = duffy.tp_distant_matrix(a, b, normal, G, V0, s, nd,
                                            check=False)
            else:
                V = duffy.tp_pair_matrix("tp-" + kind, a[p1], b[p2], normal,
                                         G, s, n, check=False)
            cross += V[0, 1]
    return cross, same


def _shape_key(verts):
    """Translation+scale canonical key with order-canonical vertices."""
    v = np.asarray(verts, float)
    d = max(np.linalg.norm(v[i] - v[j]) for i in range(len(v)) for j in range(len(v)))
    v = v / d
    v = v - v.min(axis=0)
    order = np.lexsort((v[:, 2], v[:, 1], v[:, 0]))
    return tuple(np.round(v[order].ravel(), 9))


def identical_pair_reference(cfg: PairConfig, s, n: int = 12, nd: int = 12,
                             max_classes: int = 48):
    """Exact scaling-system reference for an identical pair.

    Red refinement of the configuration tet generates finitely many
    translation+scale shape classes (rotations never occur, so values with
    fixed basis gradients are class functions).  Writing the self-pair value
    of each class as its cross terms plus the exactly-scaled child self
    pairs yields a small linear system solved directly; the only
    approximation left is the quadrature of the validated cross terms.
    """
    def diam(v):
        return max(np.linalg.norm(v[a] - v[b]) for a in range(4) for b in range(4))

    G = np.vstack([cfg.gi[0], cfg.gj[0]])
    T = np.asarray(cfg.verts1, float)
    reps = [T]
    index = {_shape_key(T): 0}
    k = 0
    while k < len(reps):
        for c in _tet_children(reps[k]):
            key = _shape_key(c)
            if key not in index:
                if len(reps) >= max_classes:
                    raise OracleUnstable("shape family did not close")
                index[key] = len(reps)
                reps.append(c)
        k += 1
    nclass = len(reps)
    diams = [diam(r) for r in reps]
    M = np.zeros((nclass, nclass))
    X = np.zeros(nclass)
    for kk, rep in enumerate(reps):
        # anchoring both sides at the same point makes the affine values of
        # the difference form globally consistent, so the cross terms are
        # exact with zero anchor values
        anch = ((rep[0], [0.0, 0.0]), (rep[0], [0.0, 0.0]))
        cross, _ = _tt_cross_and_same("identical", rep, rep, G, G, anch,
                                      s, n, nd)
        X[kk] = cross
        for c in _tet_children(rep):
            j = index[_shape_key(c)]
            M[kk, j] += (diam(c) / diams[j]) ** (5.0 - 2.0 * s)
    V = np.linalg.solve(np.eye(nclass) - M, X)
    return float(V[0]), nclass


def refinement_reference(kind, s, levels: int = 4, n: int = 12, nd: int = 12,
                         config: PairConfig = None):
    """(value, error_estimate) from the red-refinement scaling recursion.

    One refinement writes the pair integral as validated cross terms (lower
    classes and positive-distance pairs) plus same-class child pairs whose
    values scale exactly by 2^(2s-5); most of those children are scaled
    translates of the parent, making the level sums geometric with the known
    ratio.  Levels are summed explicitly and the tail is extrapolated by
    Aitken acceleration of the ratio transient.
    """
    klass = kind.split("-")[1]
    cfg = config or standard_config(kind)
    if kind == "tt-identical":
        try:
            value, nclass = identical_pair_reference(cfg, s, n=n, nd=nd)
            lo, _ = identical_pair_reference(cfg, s, n=max(6, n - 3),
                                             nd=max(6, nd - 3))
            return value, abs(value - lo)
        except OracleUnstable:
            pass  # fall through to the level-sum extrapolation
    rho = _SAME_CLASS_RATIO[kind](s)
    if kind.startswith("tt"):
        G1 = np.vstack([cfg.gi[0], cfg.gj[0]])
        G2 = np.vstack([cfg.gi[1], cfg.gj[1]])
        anchors = ((cfg.verts1[0], [cfg.v0i[0], cfg.v0j[0]]),
                   (cfg.verts2[0], [cfg.v0i[1], cfg.v0j[1]]))
        frontier = [(np.asarray(cfg.verts1, float), np.asarray(cfg.verts2, float))]
        worker = lambda v1, v2, nn, nnd: _tt_cross_and_same(
            klass, v1, v2, G1, G2, anchors, s, nn, nnd)
    else:
        G = np.vstack([cfg.gi, cfg.gj])
        anchor = (cfg.verts1[0], [0.0, 0.0])
        frontier = [(np.asarray(cfg.verts1, float), np.asarray(cfg.verts2, float))]
        worker = lambda v1, v2, nn, nnd: _tp_cross_and_same(
            klass, v1, v2, cfg.normal, G, anchor, s, nn, nnd)
    C = []
    for L in range(levels):
        tot = 0.0
        nxt = []
        for v1, v2 in frontier:
            c, same = worker(v1, v2, max(6, n - L), max(6, nd - L))
            tot += c
            nxt.extend(same)
        C.append(tot)
        frontier = nxt
    if not (0.0 < rho < 1.0):
        raise OracleUnstable(f"scaling ratio {rho:.3f} outside (0, 1)")
    # C_L = A rho^L (1 + transient); Aitken-extrapolate D_L = C_L / rho^L
    D = [C[k] / rho ** (k + 1) for k in range(levels)]
    dD = np.diff(D)
    if len(dD) >= 2 and abs(dD[-2]) > 0:
        q = dD[-1] / dD[-2]
        A = D[-1] + dD[-1] * q / (1 - q) if 0 < abs(q) < 1 else D[-1]
    else:
        q = 0.0
        A = D[-1]
    tail = A * rho ** (levels + 1) / (1.0 - rho)
    value = sum(C) + tail
    est = abs(dD[-1] * rho ** levels) + abs(tail) * min(1.0, abs(q))
    return float(value), float(est)


def subdivision_additivity(verts, gi, gj, s, n=12):
    """(direct, summed, rel_err) for one tet against its 64 child pairs."""
    verts = np.asarray(verts, float)
    G = np.vstack([gi, gj])
    direct = duffy.tt_pair_matrix("tt-identical", verts, verts, G, G, s, n)[0, 1]
    v, tets = _red_refine(verts, [(0, 1, 2, 3)])
    m = Mesh(vertices=np.array(v), tets=np.array(tets),
             boundary=np.zeros(len(v), bool))
    total = 0.0
    for a in range(8):
        for b in range(8):
            case = classify_pair(m, a, b)
            v1 = m.vertices[m.tets[a][list(case.perm1)]]
            v2 = m.vertices[m.tets[b][list(case.perm2)]]
            total += duffy.tt_pair_matrix("tt-" + case.kind, v1, v2, G, G,
                                          s, n)[0, 1]
    rel = abs(direct - total) / max(abs(direct), 1e-300)
    return float(direct), float(total), float(rel)


# ---------------------------------------------------------------------------
# Adaptive panel flux reference
# ---------------------------------------------------------------------------

_TRI_RULE_PTS = np.array([
    [1 / 3, 1 / 3],
    [0.0597158717, 0.4701420641], [0.4701420641, 0.0597158717],
    [0.4701420641, 0.4701420641],
    [0.7974269853, 0.1012865073], [0.1012865073, 0.7974269853],
    [0.1012865073, 0.1012865073],
])
_TRI_RULE_W = np.array([
    0.225,
    0.1323941527, 0.1323941527, 0.1323941527,
    0.1259391805, 0.1259391805, 0.1259391805,
])


def _tri_quad(a, b, c, f):
    pts = (1 - _TRI_RULE_PTS[:, 0:1] - _TRI_RULE_PTS[:, 1:2]) * a \
        + _TRI_RULE_PTS[:, 0:1] * b + _TRI_RULE_PTS[:, 1:2] * c
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
    return area * float(np.dot(_TRI_RULE_W, f(pts)))


def _adaptive_tri(a, b, c, f, tol, depth=0):
    coarse = _tri_quad(a, b, c, f)
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    subs = ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))
    fine = sum(_tri_quad(*tri, f) for tri in subs)
    if abs(fine - coarse) <= tol or depth >= 12:
        return fine
    return sum(_adaptive_tri(*tri, f, tol / 4, depth + 1) for tri in subs)


def panel_flux_reference(point, panels, s, tol=1e-6):
    """Adaptive 2d quadrature of sum over panels of the normal-flux kernel.

    panels is an iterable of (vertices (3,3), unit normal).  The point must
    keep a positive distance from every panel.
    """
    x = np.asarray(point, float)
    total = 0.0
    for verts, n in panels:
        verts = np.asarray(verts, float)
        dist = np.linalg.norm(verts.mean(axis=0) - x)
        h = np.linalg.norm(verts - verts.mean(0), axis=1).max()
        if dist < 1e-6 * max(h, 1.0):
            raise OracleUnstable("evaluation point too close to a panel")
        nvec = np.asarray(n, float)

        def f(pts):
            u = pts - x
            r2 = (u**2).sum(axis=1)
            return (u @ nvec) * r2 ** (-(3.0 + 2.0 * s) / 2.0)

        total += _adaptive_tri(verts[0], verts[1], verts[2], f,
                               tol / max(len(panels), 1))
    return total


def icosphere(subdivisions: int = 3, radius: float = 1.0):
    """Triangulated sphere: list of (vertices, outward normal) panels."""
    phi = (1 + math.sqrt(5)) / 2
    raw = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], float)
    raw /= np.linalg.norm(raw[0])
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    tris = [raw[list(f)] for f in faces]
    for _ in range(subdivisions):
        out = []
        for t in tris:
            a, b, c = t
            ab = (a + b) / 2; bc = (b + c) / 2; ca = (c + a) / 2
            ab /= np.linalg.norm(ab); bc /= np.linalg.norm(bc); ca /= np.linalg.norm(ca)
            out += [np.array([a, ab, ca]), np.array([ab, b, bc]),
                    np.array([ca, bc, c]), np.array([ab, bc, ca])]
        tris = out
    panels = []
    for t in tris:
        v = t * radius
        n = np.cross(v[1] - v[0], v[2] - v[0])
        n /= np.linalg.norm(n)
        if np.dot(n, v.mean(axis=0)) < 0:
            n = -n
        panels.append((v, n))
    return panels


# ---------------------------------------------------------------------------
# Exact distance between convex element pairs (used by tests)
# ---------------------------------------------------------------------------

def _seg_seg_distance(p1, q1, p2, q2):
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    c = d1 @ r
    b = d1 @ d2
    denom = a * e - b * b
    s_ = np.clip((b * f - c * e) / denom, 0, 1) if denom > 1e-30 else 0.0
    t_ = (b * s_ + f) / e if e > 1e-30 else 0.0
    if t_ < 0:
        t_ = 0.0
        s_ = np.clip(-c / a, 0, 1) if a > 1e-30 else 0.0
    elif t_ > 1:
        t_ = 1.0
        s_ = np.clip((b - c) / a, 0, 1) if a > 1e-30 else 0.0
    return np.linalg.norm((p1 + s_ * d1) - (p2 + t_ * d2))


def _point_tri_distance(p, a, b, c):
    ab = b - a
    ac = c - a
    ap = p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return np.linalg.norm(ap)
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return np.linalg.norm(bp)
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return np.linalg.norm(p - (a + v * ab))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return np.linalg.norm(cp)
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return np.linalg.norm(p - (a + w * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return np.linalg.norm(p - (b + w * (c - b)))
    n = np.cross(ab, ac)
    return abs(ap @ n) / np.linalg.norm(n)


_TET_FACE_IDS = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
_TET_EDGE_IDS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def simplex_distance(verts1, verts2):
    """Distance between two tetrahedra (or a tet and a triangle)."""
    v1 = np.asarray(verts1, float)
    v2 = np.asarray(verts2, float)

    def faces(v):
        if len(v) == 4:
            return [v[list(f)] for f in _TET_FACE_IDS]
        return [v]

    def edges(v):
        if len(v) == 4:
            return [v[list(e)] for e in _TET_EDGE_IDS]
        return [v[[0, 1]], v[[1, 2]], v[[2, 0]]]

    best = math.inf
    for p in v1:
        for f in faces(v2):
            best = min(best, _point_tri_distance(p, *f))
    for p in v2:
        for f in faces(v1):
            best = min(best, _point_tri_distance(p, *f))
    for e1 in edges(v1):
        for e2 in edges(v2):
            best = min(best, _seg_seg_distance(e1[0], e1[1], e2[0], e2[1]))
    # overlap test: any vertex inside the other tet
    def inside(p, v):
        if len(v) < 4:
            return False
        T = np.column_stack([v[1] - v[0], v[2] - v[0], v[3] - v[0]])
        lam = np.linalg.solve(T, p - v[0])
        return lam.min() >= -1e-12 and lam.sum() <= 1 + 1e-12
    for p in v1:
        if inside(p, v2):
            return 0.0
    for p in v2:
        if inside(p, v1):
            return 0.0
    return float(best)
