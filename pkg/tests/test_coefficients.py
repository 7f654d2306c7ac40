import numpy as np
import pytest

from robust_pob import randgen
from robust_pob.coefficients import (assemble_M, assemble_V, enumerate_M_V, factor_gram,
                                     path_coefficients, psd_sqrt)
from robust_pob.model import DimensionError, all_paths, path_probability


@pytest.mark.parametrize("T", [0, 1, 2])
@pytest.mark.parametrize("x0_known", [False, True])
def test_M_and_V_match_path_sums(rng, T, x0_known):
    model = randgen.random_model(rng, 3, 2, n_x=2, n_u=1, n_y=2, x0_known=x0_known)
    A = randgen.random_psd(rng, model.n_w)
    M = assemble_M(model, T)
    V = assemble_V(model, T, A)
    for _ in range(3):
        pol = randgen.random_policy(rng, model, T)
        M_ref, V_ref = enumerate_M_V(model, pol, A)
        assert np.allclose(M(pol.chi), M_ref, atol=1e-10)
        assert np.allclose(V(pol.chi), V_ref, atol=1e-10)


def test_noise_trace_can_be_excluded(rng):
    model = randgen.random_model(rng, 2, 2)
    A = np.eye(model.n_w)
    pol = randgen.random_policy(rng, model, 1)
    V = assemble_V(model, 1, A, include_noise_trace=False)
    _, V_ref = enumerate_M_V(model, pol, A, include_noise_trace=False)
    assert np.allclose(V(pol.chi), V_ref, atol=1e-10)


def test_stochastic_channel_gives_noise_map(rng):
    model = randgen.random_model(rng, 2, 1, n_e=2)
    pol = randgen.random_policy(rng, model, 0)
    Ms = assemble_M(model, 0, channel="stochastic")
    _, Bs = path_coefficients(model, pol, (0, 0))
    assert np.allclose(Ms(pol.chi), Bs, atol=1e-12)


def test_V_structure(rng):
    model = randgen.random_model(rng, 3, 2)
    V = assemble_V(model, 1, randgen.random_psd(rng, model.n_w))
    assert np.allclose(V.V0, V.V0.T)
    assert np.allclose(V.gram, V.gram.T)
    assert V.gram_min_eig >= -1e-8
    chi = rng.standard_normal(V.dim)
    Z = V.Z(chi)
    assert np.allclose(Z.T @ Z, V.exact_quadratic_part(chi), atol=1e-9)
    with pytest.raises(DimensionError):
        V(chi[:-1])


def test_M_is_probability_weighted_sum(rng):
    model = randgen.random_model(rng, 2, 2)
    pol = randgen.random_policy(rng, model, 1)
    total = sum(path_probability(model.chain, p) * path_coefficients(model, pol, p)[0]
                for p in all_paths(2, 2))
    assert np.allclose(assemble_M(model, 1)(pol.chi), total)


def test_factor_gram_low_rank_paths_agree(rng):
    G = rng.standard_normal((300, 4))
    gram = G @ G.T
    R, lam_min = factor_gram(gram)
    assert R.shape[0] == 4
    assert np.allclose(R.T @ R, gram, atol=1e-8)
    assert lam_min > -1e-8


def test_psd_sqrt_clips_negative_part():
    S = np.diag([4.0, -1e-14, 0.0])
    assert np.allclose(psd_sqrt(S), np.diag([2.0, 0.0, 0.0]))
