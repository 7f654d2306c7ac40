"""Multiperiod portfolio selection with regime switching.

Holdings ``x_t`` in ``n`` assets evolve as
``x_{t+1} = diag(1 + rbar(theta_t)) (x_t + u_t) + d_t`` where ``d_t``
collects the deviation of the actual returns from their baseline values.
The deviations are bounded per asset and per stage, which gives an
ellitope of ``n N`` axis-aligned ellipsoids on the disturbance trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Ellitope, MarkovChain, MjlsModel
from .specs import SpecAvgQuad, SpecSet, tracking_spec


@dataclass(frozen=True)
class PortfolioParams:
    r_bar: np.ndarray = field(default_factory=lambda: np.array([[0.02, 0.01], [0.02, 0.05]]))
    gamma: np.ndarray = field(default_factory=lambda: np.array([0.001, 0.005]))
    x_tar: np.ndarray = field(default_factory=lambda: np.array([100.0, 100.0]))
    alpha: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0]))
    pi: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.9]))
    P: np.ndarray = field(default_factory=lambda: np.array([[0.2, 0.3], [0.8, 0.7]]))
    N: int = 3
    income_level: float = 0.3
    position_levels: tuple = (5.0, 10.0, 20.0)
    mode_names: tuple = ("b", "g")

    def __post_init__(self):
        for name in ("r_bar", "gamma", "x_tar", "alpha", "pi", "P"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.r_bar.ndim != 2:
            raise ValueError("r_bar must be indexed (mode, asset)")
        if np.any(self.gamma < 0) or np.any(self.alpha < 0):
            raise ValueError("gamma and alpha must be nonnegative")
        if len(self.position_levels) != self.N:
            raise ValueError("need one position level per stage")

    @property
    def n(self) -> int:
        return self.r_bar.shape[1]

    @property
    def m(self) -> int:
        return self.r_bar.shape[0]


def disturbance_bounds(params: PortfolioParams) -> np.ndarray:
    """``q[t, i]``, the bound on ``d_t[i]^2``."""
    M = (1 + params.r_bar).max(axis=0)
    q = np.zeros((params.N, params.n))
    for t in range(params.N):
        geo = np.where(np.isclose(M, 1.0), t + 1.0,
                       (M ** (t + 1) - 1) / np.where(np.isclose(M, 1.0), 1.0, M - 1))
        q[t] = params.gamma ** 2 * (M ** t * np.abs(params.x_tar) + geo * params.alpha
                                    + params.alpha) ** 2
    return q


def naive_rebalance_income(params: PortfolioParams = PortfolioParams()) -> float:
    """Expected income of the rebalancing rule that keeps ``x_t = x_tar`` at baseline returns."""
    chain = MarkovChain(params.pi, params.P)
    marg = chain.marginals(params.N)          # (N, m)
    per_mode = -params.r_bar / (1 + params.r_bar) @ np.diag(params.x_tar)  # (m, n)
    return float(np.sum(marg @ per_mode))


def build_portfolio_model(params: PortfolioParams = PortfolioParams()):
    """Return ``(model, ellitope, specs, U_tar)`` for the portfolio problem."""
    N, n, m = params.N, params.n, params.m
    chain = MarkovChain(params.pi, params.P)
    D = np.stack([np.diag(1 + params.r_bar[k]) for k in range(m)])
    model = MjlsModel.from_arrays(
        chain, A=np.broadcast_to(D, (N,) + D.shape), B=D, C=np.eye(n), Bd=np.eye(n),
        Dd=np.zeros((n, n)), x0_known=params.x_tar)

    q = disturbance_bounds(params)
    Qs = []
    for t in range(N):
        for i in range(n):
            Q = np.zeros((N * n, N * n))
            Q[t * n + i, t * n + i] = 1.0 / q[t, i]
            Qs.append(Q)
    ellitope = Ellitope(tuple(Qs))

    U_tar = naive_rebalance_income(params)
    n_w = model.n_w
    u_rows = N * n + np.arange(N * n)
    ones_u = np.zeros(n_w)
    ones_u[u_rows] = 1.0
    # E[(U_tar - sum u)^2] <= rho  <=>  E[w^T (1 1^T) w - 2 U_tar <1, w>] <= rho - U_tar^2
    income = SpecAvgQuad(np.outer(ones_u, ones_u), -U_tar * ones_u,
                         params.income_level - U_tar ** 2, label="income")
    positions = [tracking_spec(n_w, np.arange(t * n, (t + 1) * n), params.x_tar,
                               params.position_levels[t], label=f"position[t={t + 1}]")
                 for t in range(N)]
    specs = SpecSet(avg_quad=(income, *positions))
    return model, ellitope, specs, U_tar
