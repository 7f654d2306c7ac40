import numpy as np
import pytest

from robust_pob.portfolio import (PortfolioParams, build_portfolio_model, disturbance_bounds,
                                  naive_rebalance_income)


def test_naive_income_matches_reported_value():
    assert naive_rebalance_income() == pytest.approx(-17.675, abs=1e-3)


def test_naive_income_degenerate_chains():
    one = dict(pi=[1.0], P=[[1.0]], gamma=[0.001, 0.005])
    assert naive_rebalance_income(PortfolioParams(r_bar=np.zeros((1, 2)), **one)) == 0.0
    r = np.array([[0.02, 0.05]])
    expected = 3 * np.sum(-r[0] / (1 + r[0]) * 100.0)
    assert naive_rebalance_income(PortfolioParams(r_bar=r, **one)) == pytest.approx(expected)


def test_disturbance_bound_first_stage():
    q = disturbance_bounds(PortfolioParams())
    # asset 1: (0.001 (100 + 10 + 10))^2
    assert q[0, 0] == pytest.approx(0.0144)
    assert q[0, 1] == pytest.approx((0.005 * 120) ** 2)


def test_disturbance_bound_unit_growth_limit():
    p = PortfolioParams(r_bar=np.zeros((2, 2)))
    q = disturbance_bounds(p)
    for t in range(3):
        assert q[t] == pytest.approx(p.gamma ** 2 * (100 + (t + 1) * 10 + 10) ** 2)


def test_model_structure():
    model, ell, specs, U = build_portfolio_model()
    assert np.allclose(model.A[0, 0], np.diag([1.02, 1.01]))
    assert np.allclose(model.B[2, 1], np.diag([1.02, 1.05]))
    assert np.allclose(model.C, np.eye(2)) and np.allclose(model.Dd, 0)
    assert model.n_e == 0 and model.n_zeta == 6
    assert ell.s == 6
    assert len(specs.avg_quad) == 4


def test_income_spec_encodes_squared_shortfall(rng):
    model, _, specs, U = build_portfolio_model()
    income = specs.avg_quad[0]
    w = rng.standard_normal(model.n_w)
    u_total = w[6:].sum()
    assert income.value(w) + U ** 2 == pytest.approx((U - u_total) ** 2)
    assert income.gamma + U ** 2 == pytest.approx(0.3)
    pos = specs.avg_quad[2]
    x2 = w[2:4]
    assert pos.value(w) - pos.gamma == pytest.approx(np.sum((x2 - 100.0) ** 2) - 10.0)
