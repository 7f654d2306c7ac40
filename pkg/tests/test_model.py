import itertools

import numpy as np
import pytest

from robust_pob.model import (DimensionError, Ellitope, MarkovChain, MjlsModel, PobPolicy,
                              all_paths, dim_of_policy, history_index, history_of, index_history,
                              path_probability)


def test_chain_rejects_row_stochastic_matrix():
    with pytest.raises(ValueError):
        MarkovChain(np.array([0.5, 0.5]), np.array([[0.9, 0.1], [0.5, 0.5]]))


def test_chain_rejects_bad_shape():
    with pytest.raises(DimensionError):
        MarkovChain(np.array([0.5, 0.5]), np.eye(3))


def test_marginals_follow_column_convention():
    chain = MarkovChain(np.array([0.1, 0.9]), np.array([[0.2, 0.3], [0.8, 0.7]]))
    marg = chain.marginals(3)
    assert np.allclose(marg[0], [0.1, 0.9])
    assert np.allclose(marg[1], [0.2 * 0.1 + 0.3 * 0.9, 0.8 * 0.1 + 0.7 * 0.9])
    assert np.allclose(marg.sum(axis=1), 1.0)


def test_path_probabilities_sum_to_one():
    chain = MarkovChain(np.array([0.2, 0.3, 0.5]), np.full((3, 3), 1 / 3))
    assert np.isclose(sum(path_probability(chain, p) for p in all_paths(3, 4)), 1.0)
    assert np.isclose(path_probability(chain, (2, 0)), 0.5 / 3)


def test_history_indexing_is_lexicographic_oldest_first():
    assert history_index((1, 0), 2) == 2
    assert history_index((0, 1), 2) == 1
    for hist in itertools.product(range(3), repeat=3):
        assert index_history(history_index(hist, 3), 3, 3) == hist
    assert history_of((0, 1, 1, 0), 3, 1) == (1, 0)
    assert history_of((0, 1, 1, 0), 0, 2) == (0,)


@pytest.mark.parametrize("N,T,m,n_u,n_y,expected", [
    (1, 0, 1, 1, 1, 2),
    (2, 1, 2, 1, 1, 2 * 2 + 4 * 3),
    (3, 0, 2, 2, 1, 2 * (2 * 2 + 2 * 3 + 2 * 4)),
])
def test_dim_of_policy_small_cases(N, T, m, n_u, n_y, expected):
    assert dim_of_policy(N, T, m, n_u, n_y) == expected


def test_dim_of_policy_rejects_long_memory():
    with pytest.raises(ValueError):
        dim_of_policy(3, 3, 2, 1, 1)


def test_policy_chi_round_trip(rng):
    chi = rng.standard_normal(dim_of_policy(4, 2, 2, 2, 1))
    pol = PobPolicy.from_chi(chi, 4, 2, 2, 2, 1)
    assert np.array_equal(pol.chi, chi)
    assert pol.K[3].shape == (8, 2, 5)
    with pytest.raises(DimensionError):
        PobPolicy.from_chi(chi[:-1], 4, 2, 2, 2, 1)


def test_policy_accessors_slice_blocks():
    pol = PobPolicy.from_chi(np.arange(dim_of_policy(2, 1, 2, 1, 2), dtype=float), 2, 1, 2, 1, 2)
    K = pol.coefficients(1, (1, 0))
    assert np.array_equal(pol.h(1, (1, 0)), K[:, 0])
    assert np.array_equal(pol.H(1, 1, (1, 0)), K[:, 3:5])


def test_model_dimensions_and_known_initial_state():
    chain = MarkovChain.single_mode()
    m = MjlsModel.from_arrays(chain, A=np.eye(2)[None, None].repeat(3, 0), B=np.ones((2, 1)),
                              C=np.eye(2), Bd=np.eye(2))
    assert (m.N, m.m, m.n_x, m.n_u, m.n_y, m.n_d) == (3, 1, 2, 1, 2, 2)
    assert m.n_w == 3 * 2 + 3 * 1
    assert m.n_zeta == 2 + 3 * 2
    pinned = MjlsModel.from_arrays(chain, A=np.eye(2)[None, None].repeat(3, 0), B=np.ones((2, 1)),
                                   C=np.eye(2), Bd=np.eye(2), x0_known=[1.0, 2.0])
    assert pinned.n_zeta == 6
    z, d = pinned.split_zeta(np.arange(6.0))
    assert np.array_equal(z, [1.0, 2.0]) and d.shape == (3, 2)


def test_model_rejects_mismatched_matrices():
    with pytest.raises((DimensionError, ValueError)):
        MjlsModel.from_arrays(MarkovChain.single_mode(), A=np.eye(2)[None, None], B=np.ones((3, 1)),
                              C=np.eye(2))


def test_ellitope_validation_and_membership():
    ell = Ellitope((np.diag([1.0, 0.0]), np.diag([0.0, 4.0])))
    assert ell.s == 2 and ell.dim == 2
    assert ell.contains(np.array([1.0, 0.5]))
    assert not ell.contains(np.array([1.0, 0.6]))
    with pytest.raises(ValueError):
        Ellitope((np.diag([1.0, 0.0]),))
    with pytest.raises(ValueError):
        Ellitope((np.diag([1.0, -1.0]), np.eye(2)))
