"""Path-conditional stacked operators and the bi-affine trajectory maps.

For a fixed switching path the closed loop is linear in the exogenous
signals.  The block matrices built here connect the initial state,
disturbances and noise to the state, control and purified-output
trajectories.  State rows are indexed by ``x_1 .. x_N`` and input columns by
``0 .. N-1``, so block ``(k, j)`` of ``B_stack`` is ``Gamma[k, j+1] B_j`` for
``j < k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DimensionError, MjlsModel, PobPolicy, history_of


def state_transition(model: MjlsModel, path: Sequence[int], t: int, tau: int) -> np.ndarray:
    """``A_{t-1}[theta_{t-1}] ... A_tau[theta_tau]``, identity when ``t == tau``."""
    if t < tau:
        raise ValueError(f"state_transition needs t >= tau, got t={t}, tau={tau}")
    if tau < 0 or t > model.N:
        raise ValueError(f"times must lie in [0, {model.N}]")
    out = np.eye(model.n_x)
    for s in range(tau, t):
        out = model.A[s, path[s]] @ out
    return out


@dataclass(frozen=True)
class StackedOperators:
    path: tuple
    A: np.ndarray
    B: np.ndarray
    Bd: np.ndarray
    Bs: np.ndarray
    C: np.ndarray
    Dd: np.ndarray
    Ds: np.ndarray
    h: np.ndarray
    H: np.ndarray
    x0_known: np.ndarray | None = None


def _transitions(model, path):
    """``G[k][j] = Gamma[k, j]`` for ``0 <= j <= k <= N``."""
    N, n_x = model.N, model.n_x
    G = [[None] * (N + 1) for _ in range(N + 1)]
    for j in range(N + 1):
        G[j][j] = np.eye(n_x)
        for k in range(j + 1, N + 1):
            G[k][j] = model.A[k - 1, path[k - 1]] @ G[k - 1][j]
    return G


def _input_to_state(model, path, G, mats):
    N, n_x = model.N, model.n_x
    k_in = mats.shape[3]
    out = np.zeros((N * n_x, N * k_in))
    for k in range(1, N + 1):
        for j in range(k):
            out[(k - 1) * n_x: k * n_x, j * k_in: (j + 1) * k_in] = G[k][j + 1] @ mats[j, path[j]]
    return out


def _input_to_output(model, path, G, Bmats, Dmats):
    N, n_x, n_y = model.N, model.n_x, model.n_y
    k_in = Bmats.shape[3]
    out = np.zeros((N * n_y, N * k_in))
    for k in range(N):
        C_k = model.C[k, path[k]]
        out[k * n_y:(k + 1) * n_y, k * k_in:(k + 1) * k_in] = Dmats[k, path[k]]
        for j in range(k):
            out[k * n_y:(k + 1) * n_y, j * k_in:(j + 1) * k_in] = C_k @ G[k][j + 1] @ Bmats[j, path[j]]
    return out


def build_stacked(model: MjlsModel, path: Sequence[int], policy: PobPolicy | None = None) -> StackedOperators:
    path = tuple(int(i) for i in path)
    N, n_x, n_u, n_y = model.N, model.n_x, model.n_u, model.n_y
    if len(path) != N:
        raise DimensionError(f"path must have length N={N}")
    G = _transitions(model, path)
    A_st = np.vstack([G[k][0] for k in range(1, N + 1)]) if N else np.zeros((0, n_x))
    C_st = np.vstack([model.C[k, path[k]] @ G[k][0] for k in range(N)])
    B_st = _input_to_state(model, path, G, model.B)
    Bd_st = _input_to_state(model, path, G, model.Bd)
    Bs_st = _input_to_state(model, path, G, model.Bs)
    Dd_st = _input_to_output(model, path, G, model.Bd, model.Dd)
    Ds_st = _input_to_output(model, path, G, model.Bs, model.Ds)

    h = np.zeros(N * n_u)
    H = np.zeros((N * n_u, N * n_y))
    if policy is not None:
        if (policy.N, policy.m, policy.n_u, policy.n_y) != (N, model.m, n_u, n_y):
            raise DimensionError("policy dimensions do not match the model")
        for t in range(N):
            K = policy.coefficients(t, history_of(path, t, policy.T))
            h[t * n_u:(t + 1) * n_u] = K[:, 0]
            H[t * n_u:(t + 1) * n_u, : (t + 1) * n_y] = K[:, 1:]
    return StackedOperators(path, A_st, B_st, Bd_st, Bs_st, C_st, Dd_st, Ds_st, h, H,
                            model.x0_known)


def trajectory_affine_maps(st: StackedOperators):
    """Return ``(b, Bd_cal, Bs_cal)`` with ``w = b + Bd_cal zeta + Bs_cal eps``.

    The initial-state column block of both maps is ``B H C + A``: the
    initial state reaches the trajectory through the free response and
    through the purified outputs.  When the model pins the initial state,
    its contribution is folded into ``b`` and ``zeta`` holds only the
    disturbances.
    """
    BH = st.B @ st.H
    x_init = np.vstack([BH @ st.C + st.A, st.H @ st.C])
    b = np.concatenate([st.B @ st.h, st.h])
    d_block = np.vstack([BH @ st.Dd + st.Bd, st.H @ st.Dd])
    s_block = np.vstack([BH @ st.Ds + st.Bs, st.H @ st.Ds])
    if st.x0_known is not None:
        b = b + x_init @ st.x0_known
        Bd_cal = d_block
    else:
        Bd_cal = np.hstack([x_init, d_block])
    Bs_cal = np.hstack([x_init, s_block])
    return b, Bd_cal, Bs_cal


def purified_outputs_stacked(st: StackedOperators, model: MjlsModel, zeta, eps) -> np.ndarray:
    """Stacked ``v`` from the exogenous signals alone."""
    z, d = model.split_zeta(zeta)
    s0, e = model.split_eps(eps)
    return st.C @ (z + s0) + st.Dd @ d.ravel() + st.Ds @ e.ravel()
