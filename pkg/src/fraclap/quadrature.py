"""Gauss-Legendre rules on [0,1], tensor quadrature, and order selection.

Rules are cached in a thread-safe table and returned as immutable arrays.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import IntegrandError, InvalidOrder, InvalidParameter

MAX_ORDER = 64

_cache_lock = threading.Lock()
_rule_cache: dict[int, "GaussRule"] = {}


@dataclass(frozen=True)
class GaussRule:
    """n-point Gauss-Legendre rule on [0,1]; exact up to degree 2n-1."""

    n: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class OrderPlan:
    """Gauss orders for touching element pairs.

    n1 applies to tetrahedron-tetrahedron integrals, n2 to
    tetrahedron-panel integrals; rho1/rho2 are the assumed analyticity
    ellipse parameters and l the smoothness index they were derived for.
    """

    n1: int
    n2: int
    rho1: float
    rho2: float
    l: float


def _legendre_newton_polish(x, n):
    """One Newton step on P_n for nodes given on (-1, 1)."""
    # recurrence for P_n and P_n'
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    if n == 0:
        return x
    if n == 1:
        pn, dpn = p1, p0
    else:
        pn = p1
        dpn = n * (x * p1 - p0) / (x**2 - 1.0)
    return x - pn / dpn


def gauss_rule(n: int) -> GaussRule:
    """Gauss-Legendre nodes/weights mapped from [-1,1] to [0,1]."""
    if not (1 <= n <= MAX_ORDER):
        raise InvalidOrder(f"order {n} outside [1, {MAX_ORDER}]")
    with _cache_lock:
        rule = _rule_cache.get(n)
    if rule is not None:
        return rule
    x, w = np.polynomial.legendre.leggauss(n)
    if n > 1:
        x = _legendre_newton_polish(x, n)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.flags.writeable = False
    weights.flags.writeable = False
    rule = GaussRule(n=n, nodes=nodes, weights=weights)
    with _cache_lock:
        _rule_cache[n] = rule
    return rule


def tensor_grid(orders):
    """Tensor nodes (P, k) and combined weights (P,) on [0,1]^k, lexicographic."""
    rules = [gauss_rule(n) for n in orders]
    grids = np.meshgrid(*[r.nodes for r in rules], indexing="ij")
    pts = np.column_stack([g.reshape(-1) for g in grids])
    w = np.ones(1)
    for r in rules:
        w = np.multiply.outer(w, r.weights).reshape(-1)
    return pts, w


def tensor_integrate(f, orders) -> float:
    """Tensor Gauss quadrature of f over [0,1]^k.

    f is called pointwise with a length-k array; evaluation order is the
    lexicographic order of the tensor grid, so results are reproducible.
    """
    orders = list(orders)
    if len(orders) > 6:
        raise InvalidOrder("tensor quadrature supports at most 6 axes")
    pts, w = tensor_grid(orders)
    total = 0.0
    for p, wp in zip(pts, w):
        v = f(p)
        if not math.isfinite(v):
            raise IntegrandError("integrand returned a non-finite value", node=p)
        total += wp * v
    return total


def order_plan(h: float, l: float, s: float, rho1: float = 0.75, rho2: float = 0.75) -> OrderPlan:
    """Smallest tensor orders that keep the quadrature consistency error
    at the size of the discretization error.

    n1 >= (3+l+s)|log h| / (2 log 2*rho1) and
    n2 >= (2+l+s)|log h| / (2 log 2*rho2), clamped to [2, 64].
    """
    if not (0.0 < h < 1.0):
        raise InvalidParameter(f"h = {h} outside (0, 1)")
    if not (0.0 < s < 1.0):
        raise InvalidParameter(f"s = {s} outside (0, 1)")
    if not (l > s):
        raise InvalidParameter(f"need smoothness l > s, got l = {l}, s = {s}")
    if rho1 <= 0.5 or rho2 <= 0.5:
        raise InvalidParameter("rho parameters must exceed 1/2")
    loga = abs(math.log(h))
    n1 = math.ceil(0.5 * (3.0 + l + s) * loga / math.log(2.0 * rho1))
    n2 = math.ceil(0.5 * (2.0 + l + s) * loga / math.log(2.0 * rho2))
    clamp = lambda n: max(2, min(MAX_ORDER, n))
    return OrderPlan(n1=clamp(n1), n2=clamp(n2), rho1=rho1, rho2=rho2, l=l)


def distant_order(n_touch: int, rho: float, dist: float, h: float) -> int:
    """Order for a positive-distance pair, decayed from the touching order.

    The analyticity ellipse of the transformed integrand widens roughly like
    rho + dist/(2h); keeping (2 rho_d)^(-2 n_d) at the touching target
    (2 rho)^(-2 n_touch) gives n_d = n_touch * log(2 rho)/log(2 rho_d).
    dist may be any lower bound for the true distance (underestimating the
    distance only raises the order).
    """
    if dist <= 0.0:
        return n_touch
    rho_d = rho + 0.5 * dist / h
    n = math.ceil(n_touch * math.log(2.0 * rho) / math.log(2.0 * rho_d))
    return max(2, min(n_touch, n))


# Measured relative quadrature errors of the positive-distance tensor rules
# on a shape-regular pair at separation gap*h, per order n = 2..8, at
# s = 0.8 (the worst order of the studied range).  Regenerated by
# tests/test_calibration.py; used to pick the cheapest order meeting the
# touching-rule error target.
_CAL_GAPS = (0.25, 0.375, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0)
_CAL_TT = (
    (0.2052, 0.06583, 0.01028, 0.001153, 0.0001249, 1.569e-05, 2.08e-06),
    (0.1915, 0.04514, 0.004547, 0.0003238, 2.403e-05, 2.165e-06, 1.984e-07),
    (0.1807, 0.03187, 0.002246, 0.0001132, 6.585e-06, 4.705e-07, 3.211e-08),
    (0.1612, 0.01732, 0.000708, 2.241e-05, 9.515e-07, 4.438e-08, 1.763e-09),
    (0.144, 0.01037, 0.0002841, 6.631e-06, 2.148e-07, 6.724e-09, 1.725e-10),
    (0.117, 0.004557, 7.046e-05, 1.061e-06, 2.082e-08, 3.462e-10, 4.862e-12),
    (0.09772, 0.002395, 2.444e-05, 2.596e-07, 3.34e-09, 3.491e-11, 3.231e-13),
    (0.07301, 0.0009035, 4.999e-06, 3.03e-08, 2.028e-10, 1.092e-12, 5.738e-15),
    (0.05811, 0.0004346, 1.521e-06, 5.924e-09, 2.427e-11, 8.017e-14, 1.189e-15),
    (0.04119, 0.0001482, 2.63e-07, 5.222e-10, 1.038e-12, 4.572e-15, 2.552e-15),
    (0.03187, 6.733e-05, 7.22e-08, 8.654e-11, 1.025e-13, 2.795e-15, 2.096e-15),
    (0.02194, 2.156e-05, 1.108e-08, 6.342e-12, 4.663e-15, 3.681e-15, 1.963e-15),
    (0.01672, 9.465e-06, 2.847e-09, 9.507e-13, 2.682e-15, 3.755e-15, 2.146e-15),
)
_CAL_TP = (
    (0.2529, 0.06483, 0.006045, 0.0006571, 0.0005035, 0.0001252, 3.313e-05),
    (0.1541, 0.02346, 0.001346, 0.0002219, 5.77e-05, 3.952e-06, 6.718e-07),
    (0.1336, 0.01183, 0.0006146, 4.858e-05, 6.958e-06, 3.879e-07, 5.879e-08),
    (0.1465, 0.006116, 0.0002007, 7.796e-06, 3.314e-07, 2.814e-08, 1.716e-09),
    (0.1553, 0.006115, 0.0001168, 2.236e-06, 5.01e-08, 1.615e-09, 1.19e-10),
    (0.1614, 0.004239, 6.464e-05, 6.766e-07, 5.674e-09, 6.778e-11, 6.546e-13),
    (0.163, 0.002762, 2.882e-05, 2.537e-07, 2.144e-09, 1.516e-11, 9.282e-14),
    (0.1642, 0.001295, 6.435e-06, 3.423e-08, 2.089e-10, 1.092e-12, 3.75e-15),
    (0.1649, 0.0007074, 1.889e-06, 6.562e-09, 2.73e-11, 8.748e-14, 2.553e-15),
    (0.1656, 0.0002882, 2.96e-07, 5.606e-10, 1.214e-12, 2.494e-15, 1.19e-15),
    (0.166, 0.0001506, 7.579e-08, 9.506e-11, 1.238e-13, 3.114e-15, 2.336e-15),
    (0.1663, 6.052e-05, 1.083e-08, 7.818e-12, 4.499e-15, 2.454e-15, 1.227e-15),
    (0.1665, 3.195e-05, 3.187e-09, 1.344e-12, 2.847e-15, 3.416e-15, 1.423e-15),
)
_CAL_SAFETY = 1.25


def calibrated_distant_order(n_touch: int, rho: float, dist: float, h: float,
                             pair: str = "tt") -> int:
    """Order for a positive-distance pair from the measured error tables.

    Picks the cheapest order whose calibrated relative error (times a
    safety factor) stays below the touching-rule target (2 rho)^(-2 n_touch).
    dist may be a lower bound (conservative: a smaller gap row is used).
    Orders above the table range extrapolate with the last measured ratio.
    """
    if dist <= 0.0 or h <= 0.0:
        return n_touch
    gap = dist / h
    if gap < _CAL_GAPS[0]:
        return n_touch
    table = _CAL_TT if pair == "tt" else _CAL_TP
    row = 0
    for k, g in enumerate(_CAL_GAPS):
        if g <= gap:
            row = k
        else:
            break
    errs = table[row]
    tol = (2.0 * rho) ** (-2 * n_touch) / _CAL_SAFETY
    for k, e in enumerate(errs):
        if e <= tol:
            return min(n_touch, k + 2)
    # extrapolate beyond n = 8 using the last reliable decay ratio
    e_last = max(errs[-1], 1e-15)
    ratio = max(errs[-1] / max(errs[-2], 1e-300), 1e-3)
    ratio = min(ratio, 0.5)
    extra = math.ceil(math.log(tol / e_last) / math.log(ratio))
    return min(n_touch, 8 + max(1, extra))
