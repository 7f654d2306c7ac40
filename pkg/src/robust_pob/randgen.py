"""Random instances for oracle checks and the verify command."""
from __future__ import annotations

import numpy as np

from .model import Ellitope, MarkovChain, MjlsModel, PobPolicy


def random_chain(rng: np.random.Generator, m: int) -> MarkovChain:
    pi = rng.random(m) + 0.05
    P = rng.random((m, m)) + 0.05
    return MarkovChain(pi / pi.sum(), P / P.sum(axis=0))


def random_model(rng: np.random.Generator, N: int, m: int, n_x: int = 2, n_u: int = 1,
                 n_y: int = 1, n_d: int = 1, n_e: int = 1, scale: float = 1.0,
                 x0_known: bool = False, noise: bool = True) -> MjlsModel:
    """Model with entries uniform in ``[-scale, scale]``."""
    chain = random_chain(rng, m)

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    S = u(n_x, n_x)
    Sigma0 = S @ S.T / max(1, n_x) if noise else np.zeros((n_x, n_x))
    return MjlsModel(
        A=u(N, m, n_x, n_x), B=u(N, m, n_x, n_u), Bd=u(N, m, n_x, n_d),
        Bs=u(N, m, n_x, n_e) if noise else np.zeros((N, m, n_x, n_e)),
        C=u(N, m, n_y, n_x), Dd=u(N, m, n_y, n_d),
        Ds=u(N, m, n_y, n_e) if noise else np.zeros((N, m, n_y, n_e)),
        Sigma0=Sigma0, chain=chain,
        x0_known=u(n_x) if x0_known else None,
    )


def random_policy(rng: np.random.Generator, model: MjlsModel, T: int, scale: float = 1.0) -> PobPolicy:
    pol = PobPolicy.for_model(model, T)
    return PobPolicy.for_model(model, T, rng.uniform(-scale, scale, size=pol.dim))


def random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    r = n if rank is None else rank
    G = rng.standard_normal((n, r))
    return G @ G.T / max(1, r)


def random_ellitope(rng: np.random.Generator, n: int, s: int) -> Ellitope:
    """``s`` PSD matrices of random rank whose sum is positive definite."""
    while True:
        Qs = [random_psd(rng, n, int(rng.integers(1, n + 1))) for _ in range(s)]
        if np.linalg.eigvalsh(sum(Qs)).min() > 1e-3:
            return Ellitope(tuple(Qs))
