import math

import numpy as np
import pytest

from robust_pob import conic, randgen
from robust_pob.coefficients import enumerate_M_V
from robust_pob.model import DimensionError, Ellitope, PobPolicy
from robust_pob.simulate import maximize_over_ellitope
from robust_pob.specs import SpecAvgQuad, SpecMeanQuad, SpecSet
from robust_pob.synthesis import (critical_level, default_eps, sdp_upper_bound, synthesize,
                                  tightness_factor)


def test_tightness_factor_values():
    assert tightness_factor(1) == 1.0
    l3 = math.log(3)
    assert math.isclose(tightness_factor(2), 2 * l3 + 2 * math.sqrt(l3) + 1)
    with pytest.raises(ValueError):
        tightness_factor(0)


def test_critical_level():
    assert critical_level(3.0, 1.0, 1, 1e-9) == 3.0
    th = tightness_factor(3)
    assert math.isclose(critical_level(5.0, 1.0, 3, 0.0), 4.0 / th + 1.0)
    assert default_eps(10.0) == pytest.approx(1.1e-8)


def test_sdp_bound_is_exact_for_one_ellipsoid():
    # max x^T A x over the unit ball equals the largest eigenvalue
    A = np.diag([3.0, -1.0, 0.5])
    val, _ = sdp_upper_bound(A, np.zeros(3), [np.eye(3)])
    assert val == pytest.approx(3.0, abs=1e-6)
    # linear objective over a ball of radius 1/2: max 2 b^T x = ||b||
    val, _ = sdp_upper_bound(np.zeros((2, 2)), np.array([3.0, 4.0]), [4 * np.eye(2)])
    assert val == pytest.approx(5.0, abs=1e-6)


def _instance(rng, N=2, m=2, s=2):
    model = randgen.random_model(rng, N, m, n_x=2, n_u=1, n_y=1)
    ell = randgen.random_ellitope(rng, model.n_zeta, s)
    A = np.zeros((model.n_w, model.n_w))
    A[:model.n_x * N, :model.n_x * N] = np.eye(model.n_x * N)
    return model, ell, A


def _worst_case(model, pol, A, beta, ell, seed=0):
    """Max over the ellitope of the exact expectation, via path sums and multi-start search."""
    M, V = enumerate_M_V(model, pol, A)
    Vz = V[1:, 1:]
    b = V[0, 1:] + M[:, 1:].T @ beta
    c = V[0, 0] + 2 * beta @ M[:, 0]
    val, _ = maximize_over_ellitope(Vz, b, ell, starts=32, seed=seed)
    return val + c


def test_free_bound_is_a_sound_upper_bound(rng):
    model, ell, A = _instance(rng)
    beta = np.zeros(model.n_w)
    res = synthesize(model, ell, SpecSet(avg_quad=(SpecAvgQuad(A, beta, None, "x"),)), T=1)
    assert res.feasible
    gamma = res.gammas[0]
    worst = _worst_case(model, res.policy, A, beta, ell)
    assert worst <= gamma + 1e-6 * (1 + abs(gamma))
    assert gamma <= tightness_factor(ell.s) * worst + 1e-3 * (1 + abs(worst))


def test_feasible_fixed_bound_holds_on_the_ellitope(rng):
    model, ell, A = _instance(rng)
    beta = np.zeros(model.n_w)
    free = synthesize(model, ell, SpecSet(avg_quad=(SpecAvgQuad(A, beta, None),)), T=1)
    level = 1.2 * free.gammas[0]
    res = synthesize(model, ell, SpecSet(avg_quad=(SpecAvgQuad(A, beta, level),)), T=1)
    assert res.status == conic.FEASIBLE
    assert _worst_case(model, res.policy, A, beta, ell) <= level + 1e-6 * (1 + level)


def test_negative_bound_on_psd_quadratic_is_infeasible(rng):
    model, ell, A = _instance(rng)
    spec = SpecAvgQuad(A, np.zeros(model.n_w), -1e6)
    res = synthesize(model, ell, SpecSet(avg_quad=(spec,)), T=0)
    assert res.status == conic.INFEASIBLE
    assert not res.feasible and res.policy is None
    assert len(res.gamma_minus) == 1 and np.isfinite(res.gamma_minus[0])
    # the worst case at the reported policy exceeds the critical level
    pol = PobPolicy.for_model(model, 0, res.chi)
    assert _worst_case(model, pol, A, spec.beta, ell) > res.gamma_minus[0]


def test_single_ellipsoid_critical_level_equals_bound(rng):
    model, ell, A = _instance(rng, s=1)
    res = synthesize(model, ell, SpecSet(avg_quad=(SpecAvgQuad(A, np.zeros(model.n_w), -5.0),)), T=0)
    assert res.status == conic.INFEASIBLE
    assert res.gamma_minus[0] == -5.0


def test_mean_trajectory_bound(rng):
    model, ell, A = _instance(rng)
    free = synthesize(model, ell, SpecSet(mean_quad=(SpecMeanQuad(A, np.zeros(model.n_w), None),)),
                      T=1)
    assert free.feasible
    M, _ = enumerate_M_V(model, free.policy)
    val, _ = maximize_over_ellitope(M[:, 1:].T @ A @ M[:, 1:], M[:, 1:].T @ A @ M[:, 0], ell,
                                    starts=32)
    assert val + M[:, 0] @ A @ M[:, 0] <= free.gammas[0] + 1e-6 * (1 + free.gammas[0])


def test_input_validation(rng):
    model, ell, A = _instance(rng)
    spec = SpecSet(avg_quad=(SpecAvgQuad(A, np.zeros(model.n_w), 1.0),))
    with pytest.raises(ValueError):
        synthesize(model, ell, spec, T=2)
    with pytest.raises(DimensionError):
        synthesize(model, Ellitope((np.eye(2),)), spec, T=0)
    with pytest.raises(ValueError):
        synthesize(model, ell, SpecSet(), T=0)
