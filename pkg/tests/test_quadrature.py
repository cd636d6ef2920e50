import math

import numpy as np
import pytest

from fraclap.errors import IntegrandError, InvalidOrder, InvalidParameter
from fraclap.quadrature import (
    OrderPlan,
    distant_order,
    gauss_rule,
    order_plan,
    tensor_integrate,
)


def test_one_point_rule_is_midpoint():
    r = gauss_rule(1)
    assert r.nodes == pytest.approx([0.5])
    assert r.weights == pytest.approx([1.0])


def test_two_point_rule():
    r = gauss_rule(2)
    lo, hi = (3 - math.sqrt(3)) / 6, (3 + math.sqrt(3)) / 6
    assert r.nodes == pytest.approx([lo, hi], abs=1e-15)
    assert r.weights == pytest.approx([0.5, 0.5], abs=1e-15)


def test_cubic_exactness_with_two_points():
    r = gauss_rule(2)
    assert abs(np.sum(r.weights * r.nodes**3) - 0.25) <= 1e-15


def test_weights_normalized_and_nodes_increasing():
    for n in (1, 2, 3, 5, 8, 13, 21, 34, 64):
        r = gauss_rule(n)
        assert np.sum(r.weights) == pytest.approx(1.0, abs=5e-15)
        assert np.all(np.diff(r.nodes) > 0)
        assert np.all((r.nodes > 0) & (r.nodes < 1))


def test_monomial_exactness_up_to_degree():
    # exact for degree <= 2n-1 and measurably inexact at 2n
    for n in range(1, 9):
        r = gauss_rule(n)
        for p in range(2 * n):
            exact = 1.0 / (p + 1)
            got = float(np.sum(r.weights * r.nodes**p))
            assert abs(got - exact) <= 5 * np.finfo(float).eps * abs(exact) + 5e-16
        p = 2 * n
        got = float(np.sum(r.weights * r.nodes**p))
        assert abs(got - 1.0 / (p + 1)) > 1e-10


def test_order_bounds():
    with pytest.raises(InvalidOrder):
        gauss_rule(0)
    with pytest.raises(InvalidOrder):
        gauss_rule(65)


def test_tensor_constant():
    for k in (1, 2, 3, 4):
        assert tensor_integrate(lambda x: 1.0, [2] * k) == pytest.approx(1.0, abs=1e-14)


def test_tensor_separable_product():
    val = tensor_integrate(lambda x: x[0] * x[1] * x[2], [2, 2, 2])
    assert val == pytest.approx(1 / 8, abs=1e-15)


def test_tensor_exponential():
    val = tensor_integrate(lambda x: math.exp(x[0] + x[1]), [8, 8])
    assert val == pytest.approx((math.e - 1.0) ** 2, abs=1e-12)


def test_tensor_axis_permutation_invariance():
    f = lambda x: math.exp(-((x[0] - 0.3) ** 2) - (x[1] - 0.3) ** 2 - (x[2] - 0.3) ** 2)
    a = tensor_integrate(f, [4, 5, 6])
    b = tensor_integrate(f, [6, 5, 4])
    assert a == pytest.approx(b, rel=1e-9)


def test_tensor_nan_raises():
    def bad(x):
        return float("nan") if x[0] > 0.5 else 1.0

    with pytest.raises(IntegrandError) as e:
        tensor_integrate(bad, [4])
    assert e.value.node is not None


def test_order_plan_reference_values():
    # ceil(0.5 * 4.5 * |log 0.1| / log 1.5) = 13 and the n2 analog = 10
    plan = order_plan(0.1, l=1.0, s=0.5, rho1=0.75, rho2=0.75)
    assert plan.n1 == 13
    assert plan.n2 == 10


def test_order_plan_monotone_in_h():
    p1 = order_plan(0.1, l=1.0, s=0.5)
    p2 = order_plan(0.05, l=1.0, s=0.5)
    assert p2.n1 > p1.n1


def test_order_plan_satisfies_inequalities():
    for h in (0.3, 0.1, 0.02):
        for s in (0.2, 0.5, 0.8):
            l = min(1.0, s + 0.5 - 1e-3)
            plan = order_plan(h, l=l, s=s)
            loga = abs(math.log(h))
            assert plan.n1 >= 0.5 * (3 + l + s) * loga / math.log(1.5) - 1e-12
            assert plan.n2 >= 0.5 * (2 + l + s) * loga / math.log(1.5) - 1e-12


def test_order_plan_domain_errors():
    with pytest.raises(InvalidParameter):
        order_plan(1.5, l=1.0, s=0.5)
    with pytest.raises(InvalidParameter):
        order_plan(0.1, l=0.4, s=0.5)
    with pytest.raises(InvalidParameter):
        order_plan(0.1, l=1.0, s=0.5, rho1=0.4)


def test_distant_order_decays_and_clamps():
    assert distant_order(12, 0.75, 0.0, 1.0) == 12
    assert distant_order(12, 0.75, 100.0, 1.0) == 2
    mid = distant_order(12, 0.75, 1.0, 1.0)
    assert 2 <= mid < 12
