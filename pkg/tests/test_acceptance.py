"""The eight acceptance criteria at their stated tolerances.

Each test prints one ``criterion k: PASS|FAIL`` line; the same lines are
repeated in the terminal summary.
"""
import itertools
import json
import time

import numpy as np

from robust_pob import cli, expectation, randgen, verify
from robust_pob.coefficients import assemble_V
from robust_pob.model import (Ellitope, MarkovChain, MjlsModel, PobPolicy, dim_of_policy,
                              history_length, path_probability)
from robust_pob.io import load_model, load_policy, load_specs
from robust_pob.portfolio import PortfolioParams, naive_rebalance_income
from robust_pob.simulate import (Scenario, closed_form_moments, maximize_over_ellitope, rng_stream,
                                 rollout, rollout_batch, sample_noise, sample_uncertainty)
from robust_pob.specs import SpecCovBound, SpecSet
from robust_pob.synthesis import sdp_upper_bound, synthesize, tightness_factor


def test_criterion_1_recursions_match_enumeration(acceptance):
    t0 = time.perf_counter()
    res = verify.recursion_suite(seed=101, n=200, max_N=6, max_m=3)
    elapsed = time.perf_counter() - t0
    acceptance(1, res.worst <= 1e-10 and elapsed <= 30.0,
               f"200 instances, worst rel. error {res.worst:.2e}, {elapsed:.1f}s")


def _best_time(fn, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def test_criterion_2_linear_recursion_scales_polynomially(acceptance):
    rng = np.random.default_rng(2)
    chain = randgen.random_chain(rng, 2)
    timings = {}
    for N in (20, 40):
        seq = expectation.random_factor_sequence(rng, N, 2, 1, N // 2, dims=[2] * (N + 1))
        expectation.expected_product_linear(chain, seq)  # warm-up
        timings[N] = _best_time(lambda: expectation.expected_product_linear(chain, seq))
    ratio = timings[40] / timings[20]
    acceptance(2, ratio <= 2.5, f"t(40)/t(20) = {ratio:.2f}")


def test_criterion_3_s_lemma_sandwich(acceptance):
    rng = np.random.default_rng(3)
    worst = {"lower": -np.inf, "upper": -np.inf, "s1": -np.inf}
    for k in range(50):
        n = int(rng.integers(1, 5))
        s = int(rng.integers(1, 4))
        ell = randgen.random_ellitope(rng, n, s)
        G = rng.uniform(-1, 1, size=(n, n))
        A = (G + G.T) / 2
        b = rng.uniform(-1, 1, size=n)
        sdp, _ = sdp_upper_bound(A, b, ell.Qs)
        opt, x = maximize_over_ellitope(A, b, ell, starts=64, seed=k)
        assert ell.contains(x, tol=1e-9)
        worst["lower"] = max(worst["lower"], opt - sdp)
        worst["upper"] = max(worst["upper"], sdp - tightness_factor(s) * opt)
        if s == 1:
            worst["s1"] = max(worst["s1"], abs(sdp - opt) - 1e-4 * (1 + abs(opt)))
    ok = worst["lower"] <= 1e-6 and worst["upper"] <= 1e-6 and worst["s1"] <= 0
    acceptance(3, ok, "max(Opt-SDP)={lower:.2e}, max(SDP-Theta Opt)={upper:.2e}, "
                      "s=1 excess={s1:.2e}".format(**worst))


def _path_averaged_portfolio_values(model, policy, zeta, U_tar, x_tar):
    """Probability-weighted income deviation and tracking errors over all 8 paths."""
    income, track = 0.0, np.zeros(model.N)
    for path in itertools.product(range(model.m), repeat=model.N):
        p = path_probability(model.chain, path)
        tr = rollout(model, policy, Scenario(path, zeta, np.zeros(model.n_eps)))
        income += p * (U_tar - tr.u.sum()) ** 2
        track += p * ((tr.x[1:] - x_tar) ** 2).sum(axis=1)
    return np.concatenate([[income], track])


def test_criterion_4_portfolio_example(acceptance, tmp_path):
    t0 = time.perf_counter()
    U = naive_rebalance_income()
    code = cli.main(["portfolio-example", "--out", str(tmp_path), "--memory", "2"])
    rep = json.loads((tmp_path / "report.json").read_text())
    model = load_model(tmp_path / "model.json")
    policy = load_policy(tmp_path / "policy.json")
    _, ellitope = load_specs(tmp_path / "specs.json")
    params = PortfolioParams()
    levels = np.array([params.income_level, *params.position_levels])
    worst = np.full(4, -np.inf)
    for k in range(20):
        zeta = sample_uncertainty(ellitope, rng_stream(404, k), "boundary")
        assert np.isclose(ellitope.levels(zeta).max(), 1.0)
        vals = _path_averaged_portfolio_values(model, policy, zeta, rep["U_tar"], params.x_tar)
        worst = np.maximum(worst, vals - levels)
    elapsed = time.perf_counter() - t0
    ok = (abs(U + 17.675) <= 1e-3 and code == 0 and rep["synthesis"]["status"] == "feasible"
          and worst.max() <= 1e-6 and elapsed <= 120.0)
    acceptance(4, ok, f"U_tar={U:.4f}, exit {code}, worst excess over (0.3, 5, 10, 20) = "
                      f"{', '.join(f'{w:.3g}' for w in worst)}, {elapsed:.1f}s")


def test_criterion_5_purified_outputs_do_not_depend_on_policy(acceptance):
    res = verify.invariance_suite(seed=5, n=100, policies=5)
    acceptance(5, res.worst <= 1e-10, f"100 scenarios x 5 policies, max deviation {res.worst:.2e}")


def test_criterion_6_pob_ob_equivalence(acceptance):
    res = verify.equivalence_suite(seed=6, n=20, scenarios=10)
    acceptance(6, res.worst <= 1e-8, f"20 models, both directions and round trips, "
                                     f"max rel. control gap {res.worst:.2e}")


def test_criterion_7_covariance_steering(acceptance):
    N = 3
    A = np.array([[1.0, 0.2], [0.0, 1.0]])
    model = MjlsModel.from_arrays(
        MarkovChain.single_mode(), A=np.stack([A[None]] * N), B=np.array([[0.0], [0.2]]),
        C=np.eye(2), Bd=np.zeros((2, 1)), Bs=np.array([[0.1], [0.3]]),
        Ds=np.array([[0.05], [0.05]]), Sigma0=0.1 * np.eye(2))
    assert model.m == 1 and model.n_x == 2 and model.n_e == 1
    zeta = np.zeros(model.n_zeta)
    Q = np.zeros((2, model.n_w))
    Q[:, 2 * N - 2: 2 * N] = np.eye(2)  # terminal state x_N
    _, S_open = closed_form_moments(model, PobPolicy.for_model(model, 0), zeta)
    target = 0.3 * Q @ S_open @ Q.T + 0.01 * np.eye(2)
    res = synthesize(model, Ellitope((np.eye(model.n_zeta),)),
                     SpecSet(cov_bound=(SpecCovBound(Q, target, "terminal"),)), T=0)
    assert res.feasible
    _, S = closed_form_moments(model, res.policy, zeta)
    margin = float(np.linalg.eigvalsh(target - Q @ S @ Q.T).min())
    K = 100_000
    rng = rng_stream(7, 0)
    tr = rollout_batch(model, res.policy, np.zeros((K, N), dtype=int), np.zeros((K, model.n_zeta)),
                       sample_noise(model, rng, K))
    err = float(np.linalg.norm(np.cov(tr.w.T) - S) / np.linalg.norm(S))
    acceptance(7, margin >= -1e-7 and err <= 0.05,
               f"min eig of bound gap {margin:.3e}, sample covariance rel. error {err:.3%}")


def _enumerated_dim(N, T, m, n_u, n_y):
    total = 0
    for t in range(N):
        for _hist in itertools.product(range(m), repeat=history_length(t, T)):
            total += n_u * (1 + (t + 1) * n_y)
    return total


def test_criterion_8_structure(acceptance):
    mismatches = 0
    for N in range(1, 7):
        for T in range(N):
            for m in range(1, 4):
                for n_u, n_y in ((1, 1), (2, 3)):
                    if dim_of_policy(N, T, m, n_u, n_y) != _enumerated_dim(N, T, m, n_u, n_y):
                        mismatches += 1
    rng = np.random.default_rng(8)
    model = randgen.random_model(rng, 3, 2, n_x=2, n_u=1, n_y=1)
    V = assemble_V(model, 1, randgen.random_psd(rng, model.n_w))
    worst = np.inf
    for _ in range(100):
        c1, c2 = rng.uniform(-1, 1, size=(2, V.dim))
        mu = rng.random()
        gap = mu * V(c1) + (1 - mu) * V(c2) - V(mu * c1 + (1 - mu) * c2)
        worst = min(worst, float(np.linalg.eigvalsh(gap).min()))
    acceptance(8, mismatches == 0 and worst >= -1e-9,
               f"{mismatches} dimension mismatches, convexity min eig {worst:.2e}")
