"""Conversion between policies affine in purified outputs and in raw outputs.

With full switching memory (``T = N - 1``) both families describe the same
set of closed loops.  Along a fixed history every signal of the noise-free
model is affine in the past outputs of either kind, so the conversion is a
forward induction over time.  The induction maps of a history prefix are
shared by all its extensions and are memoised per prefix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimensionError, MarkovChain, MjlsModel, PobPolicy, history_index
from .simulate import Scenario, Trajectory, rollout


@dataclass(frozen=True)
class ObPolicy(PobPolicy):
    """``u_t = g_t[hist] + sum_j G_j^t[hist] y_j``, stored like :class:`PobPolicy`."""

    basis = "outputs"

    def g(self, t, hist):
        return self.h(t, hist)

    def G(self, t, j, hist):
        return self.H(t, j, hist)


def _check(model: MjlsModel, policy: PobPolicy):
    if (policy.N, policy.m, policy.n_u, policy.n_y) != (model.N, model.m, model.n_u, model.n_y):
        raise DimensionError("policy dimensions do not match the model")
    if policy.T != model.N - 1:
        raise ValueError("conversion needs full switching memory T = N - 1")


def _convert(model: MjlsModel, src: PobPolicy, to_purified: bool):
    """Forward induction shared by both directions.

    Every signal is an affine map of the features ``[1; s_0; ...; s_{N-1}]``
    where ``s`` are the source outputs (purified outputs when the source is
    a POB policy, raw outputs otherwise).  Along a history prefix we track
    the noise-free state ``x_hat`` and the target outputs.
    """
    N, n_x, n_u, n_y, m = model.N, model.n_x, model.n_u, model.n_y, model.m
    n_f = 1 + N * n_y
    K = [np.zeros(src.table_shape(t)) for t in range(N)]

    def sel(j):
        E = np.zeros((n_y, n_f))
        E[:, 1 + j * n_y: 1 + (j + 1) * n_y] = np.eye(n_y)
        return E

    # prefix -> (x_hat_t map, list of target-output maps up to t-1)
    frontier = {(): (np.zeros((n_x, n_f)), [])}
    for t in range(N):
        nxt = {}
        for prefix, (Xh, targets) in frontier.items():
            for i in range(m):
                hist = prefix + (i,)
                yhat = model.C[t, i] @ Xh
                # target output at t: v_t = y_t - yhat_t, or y_t = v_t + yhat_t
                tgt = sel(t) - yhat if to_purified else sel(t) + yhat
                Kt = src.coefficients(t, hist)
                U = np.zeros((n_u, n_f))
                U[:, 0] = Kt[:, 0]
                for j in range(t + 1):
                    U += Kt[:, 1 + j * n_y: 1 + (j + 1) * n_y] @ sel(j)
                # express U in terms of the target family
                all_t = targets + [tgt]
                K[t][history_index(hist, m)] = _reexpress(U, all_t, n_y, n_f)
                nxt[hist] = (model.A[t, i] @ Xh + model.B[t, i] @ U, all_t)
        frontier = nxt
    return K


def _reexpress(U, maps, n_y, n_f):
    """Coefficients of ``U`` (a map of the source features) in the target outputs.

    ``maps[j]`` expresses target output ``j`` through source features and is
    block lower triangular with identity on source block ``j``, so the
    inversion is a back substitution.
    """
    t = len(maps) - 1
    out = np.zeros((U.shape[0], 1 + (t + 1) * n_y))
    R = U.copy()
    for j in range(t, -1, -1):
        blk = R[:, 1 + j * n_y: 1 + (j + 1) * n_y].copy()
        out[:, 1 + j * n_y: 1 + (j + 1) * n_y] = blk
        R -= blk @ maps[j]
    out[:, 0] = R[:, 0]
    return out


def ob_to_pob(model: MjlsModel, ob: ObPolicy) -> PobPolicy:
    """POB policy producing the same controls as ``ob`` on every scenario."""
    _check(model, ob)
    K = _convert(model, ob, to_purified=True)
    return PobPolicy(ob.N, ob.T, ob.m, ob.n_u, ob.n_y, tuple(K))


def pob_to_ob(model: MjlsModel, pob: PobPolicy) -> ObPolicy:
    """OB policy producing the same controls as ``pob`` on every scenario."""
    _check(model, pob)
    K = _convert(model, pob, to_purified=False)
    return ObPolicy(pob.N, pob.T, pob.m, pob.n_u, pob.n_y, tuple(K))


def rollout_ob(model: MjlsModel, ob: ObPolicy, sc: Scenario):
    """Closed loop under an output-affine policy."""
    N, n_x, n_u, n_y = model.N, model.n_x, model.n_u, model.n_y
    th = sc.theta
    if model.x0_known is not None:
        z, d = model.x0_known, sc.zeta.reshape(N, model.n_d)
    else:
        z, d = sc.zeta[:n_x], sc.zeta[n_x:].reshape(N, model.n_d)
    s0, e = sc.epsilon[:n_x], sc.epsilon[n_x:].reshape(N, model.n_e)
    x = np.zeros((N + 1, n_x))
    xh = np.zeros((N + 1, n_x))
    u = np.zeros((N, n_u))
    y = np.zeros((N, n_y))
    v = np.zeros((N, n_y))
    x[0] = z + s0
    for t in range(N):
        i = th[t]
        y[t] = model.C[t, i] @ x[t] + model.Dd[t, i] @ d[t] + model.Ds[t, i] @ e[t]
        v[t] = y[t] - model.C[t, i] @ xh[t]
        hist = tuple(th[max(0, t - ob.T): t + 1])
        Kt = ob.coefficients(t, hist)
        u[t] = Kt[:, 0] + Kt[:, 1:] @ y[:t + 1].ravel()
        x[t + 1] = model.A[t, i] @ x[t] + model.B[t, i] @ u[t] + model.Bd[t, i] @ d[t] + model.Bs[t, i] @ e[t]
        xh[t + 1] = model.A[t, i] @ xh[t] + model.B[t, i] @ u[t]
    return Trajectory(np.asarray(th), x, u, y, v, xh)


def memory_counterexample():
    """Two scenarios separating a memory-0 POB policy from every memory-0 OB policy.

    The scalar plant has ``x_1 = a[theta_0] x_0 + b[theta_0] u_0 + d_0`` with
    ``(a, b) = (1, 1)`` in mode 0 and ``(2, 2)`` in mode 1.  The POB policy
    ``u_0 = v_0``, ``u_1 = v_1`` gives ``u_1 = y_1 - b[theta_0] y_0``.  The
    two scenarios share ``theta_1``, ``y_0`` and ``y_1`` but differ in
    ``theta_0``, so any OB policy with memory 0 (which sees only
    ``theta_1``, ``y_0`` and ``y_1`` at time 1) issues the same ``u_1`` in
    both, while the POB policy does not.
    """
    chain = MarkovChain(np.array([0.5, 0.5]), np.full((2, 2), 0.5))
    a = np.array([[[1.0]], [[2.0]]])
    model = MjlsModel.from_arrays(chain, A=np.stack([a, a]), B=a, C=np.eye(1), Bd=np.eye(1))
    pob = PobPolicy(2, 0, 2, 1, 1, (np.array([[[0.0, 1.0]], [[0.0, 1.0]]]),
                                    np.array([[[0.0, 0.0, 1.0]], [[0.0, 0.0, 1.0]]])))
    # x_0 = 1 in both; d_0 chosen so that y_1 = 4 in both
    sc = [Scenario((0, 0), np.array([1.0, 2.0, 0.0]), np.zeros(1)),
          Scenario((1, 0), np.array([1.0, 0.0, 0.0]), np.zeros(1))]
    trs = [rollout(model, pob, s) for s in sc]
    return {
        "model": model, "policy": pob, "scenarios": sc,
        "y": [tr.y.ravel() for tr in trs], "u1": [float(tr.u[1, 0]) for tr in trs],
        "theta1": [s.theta[1] for s in sc],
    }
