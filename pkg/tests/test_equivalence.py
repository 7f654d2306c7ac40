import numpy as np
import pytest

from robust_pob import randgen
from robust_pob.equivalence import (ObPolicy, memory_counterexample, ob_to_pob, pob_to_ob,
                                    rollout_ob)
from robust_pob.simulate import rollout, sample_scenario


def test_conversions_reproduce_controls(rng):
    model = randgen.random_model(rng, 3, 2, n_x=2, n_u=2, n_y=2)
    ell = randgen.random_ellitope(rng, model.n_zeta, 2)
    pob = randgen.random_policy(rng, model, 2)
    ob = pob_to_ob(model, pob)
    assert isinstance(ob, ObPolicy)
    for k in range(10):
        sc = sample_scenario(model, ell, 2, k)
        assert np.allclose(rollout_ob(model, ob, sc).u, rollout(model, pob, sc).u, atol=1e-10)


def test_round_trip_recovers_coefficients(rng):
    model = randgen.random_model(rng, 4, 2, n_x=2, n_u=1, n_y=1)
    pob = randgen.random_policy(rng, model, 3)
    back = ob_to_pob(model, pob_to_ob(model, pob))
    assert np.allclose(back.chi, pob.chi, atol=1e-9)


def test_first_step_coefficients_coincide(rng):
    """At t = 0 the noise-free model output is zero, so v_0 = y_0."""
    model = randgen.random_model(rng, 2, 2)
    pob = randgen.random_policy(rng, model, 1)
    ob = pob_to_ob(model, pob)
    assert np.allclose(ob.K[0], pob.K[0])


def test_conversion_needs_full_memory(rng):
    model = randgen.random_model(rng, 3, 2)
    with pytest.raises(ValueError):
        pob_to_ob(model, randgen.random_policy(rng, model, 1))


def test_memory_zero_counterexample():
    ex = memory_counterexample()
    y_a, y_b = ex["y"]
    assert np.allclose(y_a, y_b)
    assert ex["theta1"][0] == ex["theta1"][1]
    u_a, u_b = ex["u1"]
    assert u_a != pytest.approx(u_b)
