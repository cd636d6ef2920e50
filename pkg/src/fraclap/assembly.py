"""Stiffness matrix and load vector assembly over classified element pairs.

The matrix entry for interior vertices (i, j) is

    a_ij = c/2 * sum over ordered tet pairs in Omega_ij^2 of the classified
           double integral of k1
         + c/(2s) * sum over tets carrying both basis functions and panels
           of the support-union boundary of the classified k2 integral,

which for disjoint supports reduces exactly to the far-field product
formula -c * int int phi_i phi_j k.  Assembly iterates unordered element
pairs once and scatters each pair's contributions into every entry whose
support union contains both elements; this shares the expensive kernel
grids between all basis pairs of an element pair and is algebraically
identical to the per-entry formula.

Determinism: work is split into chunks whose boundaries depend only on the
mesh, chunk results are reduced in chunk order, and every contribution
within a chunk is accumulated in a fixed order, so the assembled matrix is
bitwise identical for any worker count.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import duffy, quadrature
from .errors import SolverError
from .kernels import c_ds, hat_gradients
from .mesh import Mesh, classify_pair, classify_tet_panel, region_boundary_panels
from .quadrature import OrderPlan, calibrated_distant_order

MAT_MAGIC = b"FLAPMAT1"
VEC_MAGIC = b"FLAPVEC1"

_TT_KIND = {"identical": "tt-identical", "face": "tt-face", "edge": "tt-edge",
            "vertex": "tt-vertex"}
_TP_KIND = {"face": "tp-face", "edge": "tp-edge", "vertex": "tp-vertex"}


@dataclass
class AssemblyStats:
    pair_kinds: dict = field(default_factory=dict)
    tp_kinds: dict = field(default_factory=dict)
    kernel_evals: int = 0

    def bump(self, table, key, count=1):
        table[key] = table.get(key, 0) + count

    def merge(self, other: "AssemblyStats"):
        for k, v in other.pair_kinds.items():
            self.bump(self.pair_kinds, k, v)
        for k, v in other.tp_kinds.items():
            self.bump(self.tp_kinds, k, v)
        self.kernel_evals += other.kernel_evals


@dataclass
class StiffnessSystem:
    A: np.ndarray
    dof_vertices: np.ndarray          # row -> global vertex index
    s: float
    h: float
    plan: OrderPlan
    mode: str
    stats: AssemblyStats
    g: Optional[np.ndarray] = None

    @property
    def size(self):
        return len(self.dof_vertices)


# ---------------------------------------------------------------------------
# Precomputed mesh context (shared read-only with workers via fork)
# ---------------------------------------------------------------------------

class _MeshContext:
    def __init__(self, mesh: Mesh, s, plan: OrderPlan, mode, kind_orders, adaptive_far):
        self.mesh = mesh
        self.s = s
        self.plan = plan
        self.mode = mode
        self.adaptive_far = adaptive_far
        nt = mesh.num_tets
        self.verts = mesh.vertices[mesh.tets]                     # (nt, 4, 3)
        self.grads = np.array([hat_gradients(v) for v in self.verts])
        self.centroid = self.verts.mean(axis=1)
        self.radius = np.sqrt(((self.verts - self.centroid[:, None, :]) ** 2)
                              .sum(-1)).max(axis=1)
        diff = self.verts[:, :, None, :] - self.verts[:, None, :, :]
        self.diam = np.sqrt((diff**2).sum(-1).reshape(nt, -1).max(axis=1))
        self.h = mesh.mean_diameter()
        dof = -np.ones(mesh.num_vertices, dtype=np.int64)
        interior = mesh.interior_vertices
        dof[interior] = np.arange(len(interior))
        self.dof = dof
        self.interior = interior
        self.n_dof = len(interior)
        # tets sharing at least one vertex, per tet (sorted, excludes self)
        adj = [set() for _ in range(nt)]
        for v in range(mesh.num_vertices):
            inc = mesh.incidence[v]
            for t in inc:
                adj[t].update(inc.tolist())
        self.touching = [np.array(sorted(a - {t}), dtype=np.int64)
                         for t, a in enumerate(adj)]
        # orders per kind (overridable for studies)
        self.orders = {k: plan.n1 for k in _TT_KIND.values()}
        self.orders.update({k: plan.n2 for k in _TP_KIND.values()})
        self.orders["distant-tt"] = plan.n1
        self.orders["distant-tp"] = plan.n2
        if kind_orders:
            self.orders.update(kind_orders)


_CTX: Optional[_MeshContext] = None


def _chunk_rows(nt, target_chunks=64):
    """Contiguous row ranges of the triangular pair space, mesh-determined."""
    rows_per = max(1, nt // target_chunks)
    return [(lo, min(nt, lo + rows_per)) for lo in range(0, nt, rows_per)]


# ---------------------------------------------------------------------------
# Tet-tet phase
# ---------------------------------------------------------------------------

def _touching_pair_contribution(ctx, t1, t2, A, stats, case=None):
    """Classified singular contribution of one touching (or identical) pair."""
    mesh = ctx.mesh
    if case is None:
        case = classify_pair(mesh, t1, t2)
    stats.bump(stats.pair_kinds, case.kind)
    kind = _TT_KIND[case.kind]
    ids1 = mesh.tets[t1][list(case.perm1)]
    ids2 = mesh.tets[t2][list(case.perm2)]
    v1 = ctx.verts[t1][list(case.perm1)]
    v2 = ctx.verts[t2][list(case.perm2)]
    g1 = ctx.grads[t1][list(case.perm1)]
    g2 = ctx.grads[t2][list(case.perm2)]

    cand = sorted(set(ids1.tolist()) | set(ids2.tolist()))
    cand = [v for v in cand if ctx.dof[v] >= 0]
    if not cand:
        return
    nc = len(cand)
    G1 = np.zeros((nc, 3))
    G2 = np.zeros((nc, 3))
    in1 = np.zeros(nc, dtype=bool)
    in2 = np.zeros(nc, dtype=bool)
    l1 = {int(v): k for k, v in enumerate(ids1)}
    l2 = {int(v): k for k, v in enumerate(ids2)}
    for r, v in enumerate(cand):
        if v in l1:
            G1[r] = g1[l1[v]]
            in1[r] = True
        if v in l2:
            G2[r] = g2[l2[v]]
            in2[r] = True
    n = ctx.orders[kind]
    V = duffy.tt_pair_matrix(kind, v1, v2, G1, G2, ctx.s, n, mode=ctx.mode)
    stats.kernel_evals += duffy.case_table(kind).num_subdomains * n ** duffy.case_table(kind).k_eta
    mult = 1.0 if t1 == t2 else 2.0
    factor = 0.5 * mult
    mask = (in1[:, None] | in1[None, :]) & (in2[:, None] | in2[None, :])
    rows = ctx.dof[np.array(cand)]
    for r in range(nc):
        for q in range(nc):
            if mask[r, q]:
                A[rows[r], rows[q]] += factor * V[r, q]


_BATCH_ENTRIES = 2**21
_CAL_GAP_ARR = np.array(quadrature._CAL_GAPS)
_CAL_TT_ARR = np.array(quadrature._CAL_TT)
_CAL_TP_ARR = np.array(quadrature._CAL_TP)


def _orders_for_gaps(gaps, n_touch, rho, table):
    """Vectorized calibrated order selection (see quadrature module)."""
    tol = (2.0 * rho) ** (-2 * n_touch) / quadrature._CAL_SAFETY
    rows = np.searchsorted(_CAL_GAP_ARR, gaps, side="right") - 1
    inside = rows >= 0
    ok = table[np.clip(rows, 0, None)] <= tol
    has = ok.any(axis=1)
    first = np.argmax(ok, axis=1) + 2
    n = np.where(inside & has, np.minimum(first, n_touch), n_touch)
    return n.astype(np.int64)


def _distant_pairs_contribution(ctx, t1_arr, t2_arr, A, stats):
    """Batched far contributions of distant pairs (cross-block product form)."""
    if len(t1_arr) == 0:
        return
    mesh = ctx.mesh
    s = ctx.s
    # directional support bound: distance along the centroid line minus the
    # per-pair support radii in that direction (tighter than spheres)
    dc = ctx.centroid[t2_arr] - ctx.centroid[t1_arr]
    dist_c = np.linalg.norm(dc, axis=1)
    u = dc / np.maximum(dist_c, 1e-300)[:, None]
    rel1 = ctx.verts[t1_arr] - ctx.centroid[t1_arr][:, None, :]
    rel2 = ctx.verts[t2_arr] - ctx.centroid[t2_arr][:, None, :]
    r1 = np.einsum("bvk,bk->bv", rel1, u).max(axis=1)
    r2d = -np.einsum("bvk,bk->bv", rel2, u).min(axis=1)
    d = dist_c - r1 - r2d
    hpair = np.maximum(ctx.diam[t2_arr], ctx.diam[t1_arr])
    n_ref = ctx.orders["distant-tt"]
    if ctx.adaptive_far:
        nd = _orders_for_gaps(d / hpair, n_ref, ctx.plan.rho1, _CAL_TT_ARR)
    else:
        nd = np.full(len(t2_arr), n_ref, dtype=np.int64)
    stats.bump(stats.pair_kinds, "distant", len(t2_arr))
    expo = -(3.0 + 2.0 * s) / 2.0
    N = ctx.n_dof
    flat = A.reshape(-1)
    for n in np.unique(nd):
        sel = nd == n
        g1 = t1_arr[sel]
        g2 = t2_arr[sel]
        X, W = duffy.simplex_grid(3, int(n))
        lam = duffy.barycentric_grid(3, int(n))
        m = len(W)
        WL = W[:, None] * lam
        maxb = max(1, _BATCH_ENTRIES // (m * m))
        for lo in range(0, len(g1), maxb):
            s1 = g1[lo:lo + maxb]
            s2 = g2[lo:lo + maxb]
            B = len(s1)
            v1 = ctx.verts[s1]
            v2 = ctx.verts[s2]
            M1 = np.stack([v1[:, 1] - v1[:, 0], v1[:, 2] - v1[:, 1],
                           v1[:, 3] - v1[:, 1]], axis=2)
            M2 = np.stack([v2[:, 1] - v2[:, 0], v2[:, 2] - v2[:, 1],
                           v2[:, 3] - v2[:, 1]], axis=2)
            det12 = np.abs(np.linalg.det(M1)) * np.abs(np.linalg.det(M2))
            P1 = np.einsum("pk,bjk->bpj", X, M1) + v1[:, 0][:, None, :]
            P2 = np.einsum("pk,bjk->bpj", X, M2) + v2[:, 0][:, None, :]
            # |x-y|^2 through one batched gemm instead of materializing x-y
            r2 = np.matmul(P1, np.swapaxes(P2, 1, 2))
            r2 *= -2.0
            r2 += (P1**2).sum(-1)[:, :, None]
            r2 += (P2**2).sum(-1)[:, None, :]
            K = r2**expo
            # cross block C[b, p, q] = sum (W lam)_:p K (W lam)_:q
            T = K @ WL                                   # (B, m, 4)
            C = np.matmul(WL.T[None, :, :], T)           # (B, 4, 4)
            vals = -det12[:, None, None] * C
            stats.kernel_evals += B * m * m
            dof1 = ctx.dof[mesh.tets[s1]]
            dof2 = ctx.dof[mesh.tets[s2]]
            rows = np.broadcast_to(dof1[:, :, None], (B, 4, 4))
            cols = np.broadcast_to(dof2[:, None, :], (B, 4, 4))
            ok = (rows >= 0) & (cols >= 0)
            r = rows[ok]
            q = cols[ok]
            v = vals[ok]
            # ordered tet pairs (t1,t2) and (t2,t1) contribute equally:
            # c/2 * 2 = 1 times into both (i,j) and (j,i)
            np.add.at(flat, r * N + q, v)
            np.add.at(flat, q * N + r, v)


def _vertex_pairs_contribution(ctx, pairs, A, stats):
    """Batched vertex-touching pairs through the product-grid factorization.

    Both subdomains of the common-vertex table factor into independent
    grids on the two elements, so the kernel matrix is a pairwise block and
    the basis contractions reduce to 4x4 hat-space blocks per element pair.
    The denominators are bounded below on this table, which makes the
    gemm-based |x-y|^2 evaluation safe here.
    """
    if not pairs:
        return
    mesh = ctx.mesh
    s = ctx.s
    n = ctx.orders["tt-vertex"]
    XA, WA, XB, WB = duffy.vertex_half_grids(n)
    nA, nB = len(WA), len(WB)
    pref = duffy.prefactor("tt-vertex", s, ctx.mode)
    expo = -(3.0 + 2.0 * s) / 2.0
    maxb = max(1, _BATCH_ENTRIES // (nA * nB))
    for lo in range(0, len(pairs), maxb):
        chunk = pairs[lo:lo + maxb]
        B = len(chunk)
        t1s = np.array([p[0] for p in chunk])
        t2s = np.array([p[1] for p in chunk])
        perm1 = np.array([p[2] for p in chunk])
        perm2 = np.array([p[3] for p in chunk])
        v1 = ctx.verts[t1s[:, None], perm1]           # (B, 4, 3) aligned
        v2 = ctx.verts[t2s[:, None], perm2]
        g1 = ctx.grads[t1s[:, None], perm1]           # aligned hat gradients
        g2 = ctx.grads[t2s[:, None], perm2]
        M1 = np.stack([v1[:, 1] - v1[:, 0], v1[:, 2] - v1[:, 1],
                       v1[:, 3] - v1[:, 1]], axis=2)
        M2 = np.stack([v2[:, 1] - v2[:, 0], v2[:, 2] - v2[:, 1],
                       v2[:, 3] - v2[:, 1]], axis=2)
        det12 = np.abs(np.linalg.det(M1)) * np.abs(np.linalg.det(M2))
        # basis eta-factors in hat space, per grid side and element
        A1g = np.einsum("bjk,bcj->bkc", M1, g1)       # (B, 3, 4) = M^T G^T
        A2g = np.einsum("bjk,bcj->bkc", M2, g2)
        H11 = np.zeros((B, 4, 4))
        H22 = np.zeros((B, 4, 4))
        H12 = np.zeros((B, 4, 4))
        for sub in (0, 1):
            if sub == 0:
                Pa = np.einsum("pk,bkj->bpj", XA, np.swapaxes(M1, 1, 2))
                Pb = np.einsum("pk,bkj->bpj", XB, np.swapaxes(M2, 1, 2))
                Fa = XA @ A1g                          # (B, nA, 4) on t1
                Fb = XB @ A2g                          # (B, nB, 4) on t2
            else:
                Pa = np.einsum("pk,bkj->bpj", XA, np.swapaxes(M2, 1, 2))
                Pb = np.einsum("pk,bkj->bpj", XB, np.swapaxes(M1, 1, 2))
                Fa = XA @ A2g                          # on t2
                Fb = XB @ A1g                          # on t1
            K = np.matmul(Pa, np.swapaxes(Pb, 1, 2))
            K *= -2.0
            K += (Pa**2).sum(-1)[:, :, None]
            K += (Pb**2).sum(-1)[:, None, :]
            K **= expo
            K *= WA[None, :, None]
            K *= WB[None, None, :]
            S1 = K.sum(axis=2)
            S2 = K.sum(axis=1)
            AA = np.matmul(np.swapaxes(Fa, 1, 2), S1[:, :, None] * Fa)
            BB = np.matmul(np.swapaxes(Fb, 1, 2), S2[:, :, None] * Fb)
            AB = np.matmul(np.swapaxes(Fa, 1, 2), np.matmul(K, Fb))
            if sub == 0:
                H11 += AA
                H22 += BB
                H12 += AB
            else:
                H22 += AA
                H11 += BB
                H12 += np.swapaxes(AB, 1, 2)
            stats.kernel_evals += B * nA * nB
        stats.bump(stats.pair_kinds, "vertex", B)
        ids1 = mesh.tets[t1s[:, None], perm1]
        ids2 = mesh.tets[t2s[:, None], perm2]
        for b in range(B):
            # hat-pair quadratic form: slot k < 4 is t1's hat k, else t2's;
            # the shared vertex occupies slot 0 on both sides
            H = np.empty((8, 8))
            H[:4, :4] = H11[b]
            H[4:, 4:] = H22[b]
            H[:4, 4:] = -H12[b]
            H[4:, :4] = -H12[b].T
            cand = {}
            for k, vtx in enumerate(ids1[b]):
                if ctx.dof[vtx] >= 0:
                    cand.setdefault(int(vtx), []).append(k)
            for k, vtx in enumerate(ids2[b]):
                if ctx.dof[vtx] >= 0:
                    cand.setdefault(int(vtx), []).append(4 + k)
            verts_c = sorted(cand)
            W = np.zeros((8, len(verts_c)))
            in1 = np.zeros(len(verts_c), bool)
            in2 = np.zeros(len(verts_c), bool)
            for c, vtx in enumerate(verts_c):
                for slot in cand[vtx]:
                    W[slot, c] = 1.0
                    if slot < 4:
                        in1[c] = True
                    else:
                        in2[c] = True
            V = pref * det12[b] * (W.T @ H @ W)
            mask = (in1[:, None] | in1[None, :]) & (in2[:, None] | in2[None, :])
            rows_d = ctx.dof[np.array(verts_c)]
            for r in range(len(verts_c)):
                for q in range(len(verts_c)):
                    if mask[r, q]:
                        A[rows_d[r], rows_d[q]] += V[r, q]


def _tt_chunk_worker(rows):
    ctx = _CTX
    A = np.zeros((ctx.n_dof, ctx.n_dof))
    stats = AssemblyStats()
    nt = ctx.mesh.num_tets
    pair_t1 = []
    pair_t2 = []
    vertex_pairs = []
    for t1 in range(rows[0], rows[1]):
        touch = ctx.touching[t1]
        touch_ge = touch[touch >= t1]
        _touching_pair_contribution(ctx, t1, t1, A, stats)
        for t2 in touch_ge:
            case = classify_pair(ctx.mesh, t1, int(t2))
            if case.kind == "vertex":
                vertex_pairs.append((t1, int(t2), case.perm1, case.perm2))
            else:
                _touching_pair_contribution(ctx, t1, int(t2), A, stats,
                                            case=case)
        t2_all = np.arange(t1 + 1, nt, dtype=np.int64)
        distant = np.setdiff1d(t2_all, touch_ge, assume_unique=True)
        pair_t1.append(np.full(len(distant), t1, dtype=np.int64))
        pair_t2.append(distant)
    _vertex_pairs_contribution(ctx, vertex_pairs, A, stats)
    t1_arr = np.concatenate(pair_t1) if pair_t1 else np.zeros(0, np.int64)
    t2_arr = np.concatenate(pair_t2) if pair_t2 else np.zeros(0, np.int64)
    _distant_pairs_contribution(ctx, t1_arr, t2_arr, A, stats)
    return A, stats


# ---------------------------------------------------------------------------
# Tet-panel phase (per interior adjacent entry)
# ---------------------------------------------------------------------------

def _tp_entry_value(ctx, i, j):
    """Boundary-term contribution sum for one adjacent entry (i, j).

    Touching panels use the classified singular rules; all positive-distance
    panels of one tet are concatenated per order and integrated in a single
    vectorized flux pass.
    """
    mesh = ctx.mesh
    s = ctx.s
    star_i = set(mesh.incidence[i].tolist())
    star_j = set(mesh.incidence[j].tolist())
    region = np.array(sorted(star_i | star_j), dtype=np.int64)
    both = sorted(star_i & star_j)
    if not both:
        return 0.0, AssemblyStats()
    panels = region_boundary_panels(mesh, region)
    stats = AssemblyStats()
    total = 0.0
    expo = -(3.0 + 2.0 * s) / 2.0
    for t in both:
        ids_t = mesh.tets[t]
        verts_t = ctx.verts[t]
        grads_t = ctx.grads[t]
        ids_list = ids_t.tolist()
        li = ids_list.index(i)
        lj = ids_list.index(j)
        gi, gj = grads_t[li], grads_t[lj]
        tet_set = set(ids_list)
        M_t = np.column_stack([verts_t[1] - verts_t[0], verts_t[2] - verts_t[1],
                               verts_t[3] - verts_t[1]])
        det_t = abs(np.linalg.det(M_t))
        by_order = {}
        for rp in panels:
            shared = len(tet_set & set(rp.vertex_ids))
            if shared == 0:
                stats.bump(stats.tp_kinds, "distant")
                pv = rp.panel.vertices
                cent_p = pv.mean(axis=0)
                rad_p = np.sqrt(((pv - cent_p) ** 2).sum(-1)).max()
                dlb = np.linalg.norm(cent_p - ctx.centroid[t]) - rad_p - ctx.radius[t]
                n = (calibrated_distant_order(ctx.orders["distant-tp"],
                                              ctx.plan.rho2, dlb,
                                              max(ctx.diam[t], 2 * rad_p), "tp")
                     if ctx.adaptive_far else ctx.orders["distant-tp"])
                by_order.setdefault(int(n), []).append(rp.panel)
            else:
                case = classify_tet_panel(mesh, t, rp.vertex_ids)
                stats.bump(stats.tp_kinds, case.kind)
                kind = _TP_KIND[case.kind]
                n = ctx.orders[kind]
                tv = verts_t[list(case.perm_t)]
                pv = mesh.vertices[np.array(rp.vertex_ids)[list(case.perm_tau)]]
                G = np.vstack([gi, gj])
                V = duffy.tp_pair_matrix(kind, tv, pv, rp.panel.n, G, s, int(n),
                                         mode=ctx.mode)
                tab = duffy.case_table(kind)
                stats.kernel_evals += tab.num_subdomains * n**tab.k_eta
                total += V[0, 1]
        if not by_order:
            continue
        # concatenated positive-distance flux per order group
        for n, group in sorted(by_order.items()):
            X, WX = duffy.simplex_grid(3, n)
            Y, WY = duffy.simplex_grid(2, n)
            lam3 = duffy.barycentric_grid(3, n)
            Px = X @ M_t.T + verts_t[0]
            Fi = lam3[:, li]
            Fj = lam3[:, lj]
            pts = []
            wgt = []
            nrm = []
            for pan in group:
                Mtau = np.column_stack([pan.b - pan.a, pan.c - pan.b])
                area2 = np.linalg.norm(duffy._cross3(Mtau[:, 0], Mtau[:, 1]))
                pts.append(Y @ Mtau.T + pan.a)
                wgt.append(WY * area2)
                nrm.append(np.broadcast_to(pan.n, (len(WY), 3)))
            Py = np.vstack(pts)
            Wq = np.concatenate(wgt)
            Nq = np.vstack(nrm)
            U = Py[None, :, :] - Px[:, None, :]
            r2 = np.einsum("pqk,pqk->pq", U, U)
            numer = np.einsum("pqk,qk->pq", U, Nq)
            flux = (numer * r2**expo) @ Wq
            total += det_t * float(np.sum(WX * flux * Fi * Fj))
            stats.kernel_evals += len(Wq) * len(WX)
    return total, stats


def _tp_chunk_worker(entries):
    ctx = _CTX
    A = np.zeros((ctx.n_dof, ctx.n_dof))
    stats = AssemblyStats()
    half_inv_s = 1.0 / (2.0 * ctx.s)
    for i, j in entries:
        val, st = _tp_entry_value(ctx, i, j)
        stats.merge(st)
        ri, rj = ctx.dof[i], ctx.dof[j]
        A[ri, rj] += half_inv_s * val
        if ri != rj:
            A[rj, ri] += half_inv_s * val
    return A, stats


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def _run_chunks(worker, chunks, threads):
    """Map worker over chunks, reducing results in chunk order."""
    if threads <= 1 or len(chunks) <= 1:
        results = map(worker, chunks)
        out = None
        stats = AssemblyStats()
        for A, st in results:
            out = A if out is None else out + A
            stats.merge(st)
        return out, stats
    import multiprocessing as mp

    with mp.get_context("fork").Pool(processes=threads) as pool:
        out = None
        stats = AssemblyStats()
        for A, st in pool.imap(worker, chunks):
            out = A if out is None else out + A
            stats.merge(st)
    return out, stats


def assemble_stiffness(mesh: Mesh, s: float, plan: OrderPlan, mode: str = "audit",
                       threads: int = 1, kind_orders=None,
                       adaptive_far: bool = True) -> StiffnessSystem:
    """Assemble the dense symmetric stiffness matrix.

    kind_orders overrides the per-class Gauss orders (keys like 'tt-face',
    'distant-tt'); adaptive_far lowers the order of well-separated pairs
    according to their distance (the touching bound is the worst case).
    """
    global _CTX
    ctx = _MeshContext(mesh, s, plan, mode, kind_orders, adaptive_far)
    if ctx.n_dof < 1:
        raise SolverError("mesh has no interior vertices")
    _CTX = ctx
    try:
        tt_chunks = _chunk_rows(mesh.num_tets)
        A_tt, stats = _run_chunks(_tt_chunk_worker, tt_chunks, threads)

        entries = []
        for i in ctx.interior:
            nbrs = set()
            for t in mesh.incidence[i]:
                nbrs.update(int(v) for v in mesh.tets[t])
            for j in sorted(nbrs):
                if j >= i and ctx.dof[j] >= 0:
                    entries.append((int(i), int(j)))
        per = max(1, len(entries) // 64)
        tp_chunks = [entries[k:k + per] for k in range(0, len(entries), per)]
        A_tp, st2 = _run_chunks(_tp_chunk_worker, tp_chunks, threads)
        stats.merge(st2)
    finally:
        _CTX = None

    c = c_ds(s)
    A = c * (A_tt + A_tp)
    return StiffnessSystem(A=A, dof_vertices=ctx.interior.copy(), s=s,
                           h=ctx.h, plan=plan, mode=mode, stats=stats)


def assemble_load(mesh: Mesh, f=None) -> np.ndarray:
    """Load vector over interior vertices.

    f None or a constant gives the exact value c * sum vol/4 over incident
    tets; a callable is integrated with an order-4 tensor rule per tet.
    """
    interior = mesh.interior_vertices
    dof = -np.ones(mesh.num_vertices, dtype=np.int64)
    dof[interior] = np.arange(len(interior))
    g = np.zeros(len(interior))
    if f is None or np.isscalar(f):
        const = 1.0 if f is None else float(f)
        for t in range(mesh.num_tets):
            verts = mesh.vertices[mesh.tets[t]]
            M = np.column_stack([verts[1] - verts[0], verts[2] - verts[1],
                                 verts[3] - verts[1]])
            vol = abs(np.linalg.det(M)) / 6.0
            for v in mesh.tets[t]:
                if dof[v] >= 0:
                    g[dof[v]] += const * vol / 4.0
        return g
    X, W = duffy.simplex_grid(3, 4)
    lam = np.column_stack([1.0 - X[:, 0], X[:, 0] - X[:, 1] - X[:, 2],
                           X[:, 1], X[:, 2]])
    for t in range(mesh.num_tets):
        verts = mesh.vertices[mesh.tets[t]]
        M = np.column_stack([verts[1] - verts[0], verts[2] - verts[1],
                             verts[3] - verts[1]])
        det = abs(np.linalg.det(M))
        pts = X @ M.T + verts[0]
        fv = np.array([f(p) for p in pts])
        for local, v in enumerate(mesh.tets[t]):
            if dof[v] >= 0:
                g[dof[v]] += det * np.sum(W * fv * lam[:, local])
    return g


def pair_worklist(mesh: Mesh):
    """Classify every ordered tet pair; histogram sums to num_tets^2."""
    hist = {"identical": 0, "face": 0, "edge": 0, "vertex": 0, "distant": 0}
    nt = mesh.num_tets
    shared_count = {4: "identical", 3: "face", 2: "edge", 1: "vertex", 0: "distant"}
    idsets = [set(mesh.tets[t].tolist()) for t in range(nt)]
    for t1 in range(nt):
        hist["identical"] += 1
        for t2 in range(t1 + 1, nt):
            kind = shared_count[len(idsets[t1] & idsets[t2])]
            hist[kind] += 2
    return hist


# ---------------------------------------------------------------------------
# Binary dumps
# ---------------------------------------------------------------------------

def write_matrix(path, A):
    A = np.ascontiguousarray(A, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAT_MAGIC)
        fh.write(struct.pack("<Q", A.shape[0]))
        fh.write(A.tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAT_MAGIC:
            raise IOError(f"bad matrix magic {magic!r}")
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(8 * n * n), dtype="<f8")
    return data.reshape(n, n).copy()


def write_vector(path, v):
    v = np.ascontiguousarray(v, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(VEC_MAGIC)
        fh.write(struct.pack("<Q", v.shape[0]))
        fh.write(v.tobytes())


def read_vector(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != VEC_MAGIC:
            raise IOError(f"bad vector magic {magic!r}")
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(8 * n), dtype="<f8")
    return data.copy()


def write_sidecar(path, system: StiffnessSystem, extra=None):
    meta = {
        "s": system.s,
        "h": system.h,
        "n1": system.plan.n1,
        "n2": system.plan.n2,
        "rho1": system.plan.rho1,
        "rho2": system.plan.rho2,
        "l": system.plan.l,
        "prefactor_mode": system.mode,
        "pair_kinds": system.stats.pair_kinds,
        "tp_kinds": system.stats.tp_kinds,
        "kernel_evals": system.stats.kernel_evals,
    }
    if extra:
        meta.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
