import numpy as np
import pytest

from robust_pob import randgen
from robust_pob.simulate import rollout, sample_scenario
from robust_pob.stacked import (build_stacked, purified_outputs_stacked, state_transition,
                                trajectory_affine_maps)


def test_state_transition_composes(rng):
    model = randgen.random_model(rng, 4, 2)
    path = (0, 1, 1, 0)
    Phi = state_transition(model, path, 4, 1)
    assert np.allclose(Phi, model.A[3, 0] @ model.A[2, 1] @ model.A[1, 1])
    assert np.allclose(state_transition(model, path, 2, 2), np.eye(2))
    with pytest.raises(ValueError):
        state_transition(model, path, 1, 2)


@pytest.mark.parametrize("x0_known", [False, True])
def test_affine_maps_reproduce_rollout(rng, x0_known):
    model = randgen.random_model(rng, 4, 2, n_x=3, n_u=2, n_y=2, x0_known=x0_known)
    pol = randgen.random_policy(rng, model, 2)
    ell = randgen.random_ellitope(rng, model.n_zeta, 2)
    for k in range(5):
        sc = sample_scenario(model, ell, 11, k)
        tr = rollout(model, pol, sc)
        b, Bd, Bs = trajectory_affine_maps(build_stacked(model, sc.theta, pol))
        assert np.allclose(tr.w, b + Bd @ sc.zeta + Bs @ sc.epsilon, atol=1e-12)


def test_stacked_purified_outputs_match_rollout(rng):
    model = randgen.random_model(rng, 3, 2, n_y=2)
    pol = randgen.random_policy(rng, model, 1)
    sc = sample_scenario(model, randgen.random_ellitope(rng, model.n_zeta, 1), 3, 0)
    st = build_stacked(model, sc.theta, pol)
    v = purified_outputs_stacked(st, model, sc.zeta, sc.epsilon)
    assert np.allclose(v, rollout(model, pol, sc).v.ravel(), atol=1e-12)


def test_policy_matrix_is_block_lower_triangular(rng):
    model = randgen.random_model(rng, 3, 2, n_u=2, n_y=1)
    st = build_stacked(model, (1, 0, 1), randgen.random_policy(rng, model, 1))
    H = st.H
    for t in range(3):
        assert np.all(H[2 * t: 2 * t + 2, t + 1:] == 0)
