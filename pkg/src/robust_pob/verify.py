"""Randomised oracle suites shared by the ``verify`` command and the tests.

Each suite draws instances from a seeded generator, compares a production
routine against an independent oracle and reports the worst discrepancy.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import coefficients, expectation, randgen, simulate, synthesis
from .equivalence import ObPolicy, ob_to_pob, pob_to_ob, rollout_ob
from .stacked import build_stacked, trajectory_affine_maps

SIZES = {
    "small": dict(recursion=100, assembly=10, sandwich=12, rollout=20, invariance=20, equivalence=5),
    "medium": dict(recursion=200, assembly=40, sandwich=50, rollout=100, invariance=100,
                   equivalence=20),
}


@dataclass
class SuiteResult:
    name: str
    instances: int
    worst: float
    tolerance: float
    seconds: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst <= self.tolerance)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def recursion_suite(seed: int, n: int, max_N: int = 6, max_m: int = 3) -> SuiteResult:
    """Linear and quadratic recursions against exhaustive path sums."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(n):
        N = int(rng.integers(1, max_N + 1))
        m = int(rng.integers(1, max_m + 1))
        T = int(rng.integers(0, N))
        tau = int(rng.integers(0, N))
        chain = randgen.random_chain(rng, m)
        right = expectation.random_factor_sequence(rng, N, m, T, tau)
        lin = expectation.expected_product_linear(chain, right)
        worst = max(worst, _rel(lin, expectation.brute_force_expectation(chain, right)))
        left = expectation.random_factor_sequence(rng, N, m, T, tau)
        S = rng.uniform(-1, 1, size=(left.factors[-1].shape[-2], right.factors[-1].shape[-2]))
        quad = expectation.expected_product_quadratic(chain, left, S, right)
        worst = max(worst, _rel(quad, expectation.brute_force_expectation(chain, right, S, left)))
    return SuiteResult("recursion-vs-enumeration", n, worst, 1e-10, time.perf_counter() - t0)


def assembly_suite(seed: int, n: int) -> SuiteResult:
    """``M`` and ``V`` from the recursions against per-path sums at random policies."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(n):
        N = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        model = randgen.random_model(rng, N, m, n_x=int(rng.integers(1, 3)), x0_known=bool(k % 2),
                                     noise=bool(k % 3))
        T = int(rng.integers(0, N))
        A = randgen.random_psd(rng, model.n_w)
        M = coefficients.assemble_M(model, T)
        V = coefficients.assemble_V(model, T, A)
        pol = randgen.random_policy(rng, model, T)
        M_ref, V_ref = coefficients.enumerate_M_V(model, pol, A)
        worst = max(worst, _rel(M(pol.chi), M_ref), _rel(V(pol.chi), V_ref))
    return SuiteResult("assembly-vs-enumeration", n, worst, 1e-9, time.perf_counter() - t0)


def sandwich_suite(seed: int, n: int, starts: int = 64) -> SuiteResult:
    """Semidefinite bound against a multi-start maximiser over random ellitopes.

    The discrepancy is the largest excess over the three allowances
    ``Opt <= SDP + 1e-6``, ``SDP <= Theta(s) Opt + 1e-6`` and, for
    ``s = 1``, ``|SDP - Opt| <= 1e-4 (1 + |Opt|)``; it must not be positive.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = -np.inf
    for k in range(n):
        dim = int(rng.integers(1, 5))
        s = int(rng.integers(1, 4))
        ell = randgen.random_ellitope(rng, dim, s)
        A = randgen.random_psd(rng, dim) if k % 2 == 0 else _sym(rng, dim)
        b = rng.uniform(-1, 1, size=dim)
        sdp, _ = synthesis.sdp_upper_bound(A, b, ell.Qs)
        opt, _ = simulate.maximize_over_ellitope(A, b, ell, starts=starts, seed=seed + k)
        theta = synthesis.tightness_factor(s)
        viol = max(opt - sdp - 1e-6, sdp - theta * opt - 1e-6)
        if s == 1:
            viol = max(viol, abs(sdp - opt) - 1e-4 * (1 + abs(opt)))
        worst = max(worst, viol)
    return SuiteResult("s-lemma-sandwich", n, float(worst), 0.0, time.perf_counter() - t0)


def _sym(rng, n):
    G = rng.uniform(-1, 1, size=(n, n))
    return (G + G.T) / 2


def rollout_suite(seed: int, n: int) -> SuiteResult:
    """Online rollouts against the stacked trajectory maps."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(n):
        model = randgen.random_model(rng, int(rng.integers(1, 6)), int(rng.integers(1, 4)),
                                     n_x=int(rng.integers(1, 4)), n_u=int(rng.integers(1, 3)),
                                     n_y=int(rng.integers(1, 3)), x0_known=bool(k % 2))
        T = int(rng.integers(0, model.N))
        pol = randgen.random_policy(rng, model, T)
        ell = randgen.random_ellitope(rng, model.n_zeta, 2)
        sc = simulate.sample_scenario(model, ell, seed, k)
        tr = simulate.rollout(model, pol, sc)
        b, Bd, Bs = trajectory_affine_maps(build_stacked(model, sc.theta, pol))
        w = b + Bd @ sc.zeta + Bs @ sc.epsilon
        worst = max(worst, float(np.abs(tr.w - w).max() / (1 + np.abs(w).max())))
    return SuiteResult("rollout-vs-stacked-maps", n, worst, 1e-10, time.perf_counter() - t0)


def invariance_suite(seed: int, n: int, policies: int = 5) -> SuiteResult:
    """Purified outputs do not depend on the policy."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(n):
        model = randgen.random_model(rng, int(rng.integers(1, 6)), int(rng.integers(1, 4)),
                                     n_x=2, n_u=2, n_y=2)
        ell = randgen.random_ellitope(rng, model.n_zeta, 2)
        sc = simulate.sample_scenario(model, ell, seed, k)
        vs = []
        for _ in range(policies):
            pol = randgen.random_policy(rng, model, int(rng.integers(0, model.N)), scale=2.0)
            vs.append(simulate.rollout(model, pol, sc).v)
        worst = max(worst, max(float(np.abs(v - vs[0]).max()) for v in vs))
    return SuiteResult("purified-output-invariance", n * policies, worst, 1e-10,
                       time.perf_counter() - t0)


def equivalence_suite(seed: int, n: int, scenarios: int = 10) -> SuiteResult:
    """Conversions in both directions reproduce the controls of the source policy.

    Each model gets a random POB policy and a random OB policy.  Both are
    converted, converted back, and rolled out on shared scenarios.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(n):
        N = int(rng.integers(1, 5))
        model = randgen.random_model(rng, N, 2, n_x=2, n_u=int(rng.integers(1, 3)), n_y=2)
        ell = randgen.random_ellitope(rng, model.n_zeta, 2)
        pob = randgen.random_policy(rng, model, N - 1)
        ob = pob_to_ob(model, pob)
        pob_back = ob_to_pob(model, ob)
        ob_src = ObPolicy.from_chi(randgen.random_policy(rng, model, N - 1).chi, model.N, N - 1,
                                   model.m, model.n_u, model.n_y)
        pob_src = ob_to_pob(model, ob_src)
        ob_back = pob_to_ob(model, pob_src)
        for i in range(scenarios):
            sc = simulate.sample_scenario(model, ell, seed + 1, k * scenarios + i)
            u0 = simulate.rollout(model, pob, sc).u
            for u in (rollout_ob(model, ob, sc).u, simulate.rollout(model, pob_back, sc).u):
                worst = max(worst, float(np.abs(u - u0).max() / (1 + np.abs(u0).max())))
            u1 = rollout_ob(model, ob_src, sc).u
            for u in (simulate.rollout(model, pob_src, sc).u, rollout_ob(model, ob_back, sc).u):
                worst = max(worst, float(np.abs(u - u1).max() / (1 + np.abs(u1).max())))
    return SuiteResult("pob-ob-equivalence", n, worst, 1e-8, time.perf_counter() - t0)


def run_all(seed: int = 0, sizes: str = "small") -> dict:
    cfg = SIZES[sizes]
    suites = [
        recursion_suite(seed, cfg["recursion"]),
        assembly_suite(seed + 1, cfg["assembly"]),
        sandwich_suite(seed + 2, cfg["sandwich"]),
        rollout_suite(seed + 3, cfg["rollout"]),
        invariance_suite(seed + 4, cfg["invariance"]),
        equivalence_suite(seed + 5, cfg["equivalence"]),
    ]
    return {"seed": seed, "sizes": sizes, "passed": all(s.passed for s in suites),
            "suites": [s.to_dict() for s in suites]}
