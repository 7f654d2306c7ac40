"""Sampling, closed-loop rollouts and exact or empirical specification values."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .coefficients import psd_sqrt
from .model import (DimensionError, Ellitope, MarkovChain, MjlsModel, PobPolicy, all_paths,
                    history_index, history_length, path_probability)
from .specs import SpecAvgQuad
from .stacked import build_stacked, trajectory_affine_maps


def rng_stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for scenario ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


# ---------------------------------------------------------------------------
# sampling


def sample_path(chain: MarkovChain, rng: np.random.Generator, N: int) -> tuple:
    theta = [int(rng.choice(chain.m, p=chain.pi))]
    for _ in range(N - 1):
        theta.append(int(rng.choice(chain.m, p=chain.P[:, theta[-1]])))
    return tuple(theta)


def sample_paths(chain: MarkovChain, rng: np.random.Generator, N: int, size: int) -> np.ndarray:
    """``size`` paths at once by inverse-CDF sampling, shape ``(size, N)``."""
    out = np.empty((size, N), dtype=int)
    u = rng.random((size, N))
    out[:, 0] = np.searchsorted(np.cumsum(chain.pi), u[:, 0], side="right")
    cdf = np.cumsum(chain.P, axis=0)  # column j: CDF of next mode given j
    for t in range(1, N):
        cols = cdf[:, out[:, t - 1]].T
        out[:, t] = (u[:, t:t + 1] > cols).sum(axis=1)
    return np.minimum(out, chain.m - 1)


def whitener(ellitope: Ellitope) -> np.ndarray:
    lam, U = np.linalg.eigh(sum(ellitope.Qs))
    return (U / np.sqrt(lam)) @ U.T


def sample_uncertainty(ellitope: Ellitope, rng: np.random.Generator, mode: str = "boundary",
                       size: Optional[int] = None) -> np.ndarray:
    """Points of the ellitope along directions uniform after whitening.

    ``boundary`` places each point where the most active constraint reaches 1;
    ``interior`` scales that ray by ``U^{1/n}`` with ``U`` uniform.
    """
    if mode not in ("boundary", "interior"):
        raise ValueError("mode must be 'boundary' or 'interior'")
    n = ellitope.dim
    k = 1 if size is None else size
    S = whitener(ellitope)
    g = rng.standard_normal((k, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    dirs = g @ S.T
    levels = np.stack([np.einsum("ki,ij,kj->k", dirs, Q, dirs) for Q in ellitope.Qs], axis=1)
    ray = 1.0 / np.sqrt(levels.max(axis=1))
    if mode == "interior":
        ray = ray * rng.random(k) ** (1.0 / n)
    out = dirs * ray[:, None]
    return out[0] if size is None else out


def sample_noise(model: MjlsModel, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """``eps = [s0; e_0; ...]`` with ``s0 ~ N(0, Sigma0)`` and ``e_t ~ N(0, I)``."""
    k = 1 if size is None else size
    g = rng.standard_normal((k, model.n_eps))
    L = psd_sqrt(model.Sigma0)
    g[:, :model.n_x] = g[:, :model.n_x] @ L.T
    return g[0] if size is None else g


@dataclass(frozen=True)
class Scenario:
    theta: tuple
    zeta: np.ndarray
    epsilon: np.ndarray
    seed: Optional[int] = None
    index: Optional[int] = None


def sample_scenario(model: MjlsModel, ellitope: Optional[Ellitope], seed: int, index: int,
                    mode: str = "boundary", zeta=None) -> Scenario:
    """Scenario drawn from the stream ``(seed, index)``; a fixed ``zeta`` may be supplied."""
    rng = rng_stream(seed, index)
    theta = sample_path(model.chain, rng, model.N)
    if zeta is None:
        zeta = sample_uncertainty(ellitope, rng, mode) if ellitope is not None else np.zeros(model.n_zeta)
    eps = sample_noise(model, rng)
    return Scenario(theta, np.asarray(zeta, dtype=float), eps, seed, index)


# ---------------------------------------------------------------------------
# rollouts


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop signals; arrays carry a leading batch axis when batched."""

    theta: np.ndarray
    x: np.ndarray      # (..., N+1, n_x)
    u: np.ndarray      # (..., N, n_u)
    y: np.ndarray      # (..., N, n_y)
    v: np.ndarray      # (..., N, n_y)
    x_hat: np.ndarray  # (..., N+1, n_x)

    @property
    def w(self) -> np.ndarray:
        """``[x_1; ...; x_N; u_0; ...; u_{N-1}]``."""
        lead = self.x.shape[:-2]
        return np.concatenate([self.x[..., 1:, :].reshape(lead + (-1,)),
                               self.u.reshape(lead + (-1,))], axis=-1)


def _gather(arr, t, theta):
    """``arr[t, theta[:, t]]`` for a batch of paths."""
    return arr[t][theta[:, t]]


def rollout_batch(model: MjlsModel, policy: Optional[PobPolicy], theta, zeta, eps,
                  controls: Optional[Callable] = None) -> Trajectory:
    """Simulate the plant and its noise-free model online for a batch of scenarios.

    ``controls(t, theta, v_hist)`` may replace the policy; it receives the
    purified outputs ``v_0..v_t`` with shape ``(K, t+1, n_y)`` and returns
    ``u_t`` of shape ``(K, n_u)``.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=int))
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    K = theta.shape[0]
    N, n_x, n_u, n_y = model.N, model.n_x, model.n_u, model.n_y
    if theta.shape != (K, N) or zeta.shape != (K, model.n_zeta) or eps.shape != (K, model.n_eps):
        raise DimensionError("scenario dimensions do not match the model")
    if theta.size and (theta.min() < 0 or theta.max() >= model.m):
        raise ValueError("mode index out of range")
    if policy is not None and (policy.N, policy.m, policy.n_u, policy.n_y) != (N, model.m, n_u, n_y):
        raise DimensionError("policy dimensions do not match the model")
    if model.x0_known is not None:
        z = np.broadcast_to(model.x0_known, (K, n_x))
        d = zeta.reshape(K, N, model.n_d)
    else:
        z = zeta[:, :n_x]
        d = zeta[:, n_x:].reshape(K, N, model.n_d)
    s0 = eps[:, :n_x]
    e = eps[:, n_x:].reshape(K, N, model.n_e)

    x = np.zeros((K, N + 1, n_x))
    xh = np.zeros((K, N + 1, n_x))
    u = np.zeros((K, N, n_u))
    y = np.zeros((K, N, n_y))
    v = np.zeros((K, N, n_y))
    x[:, 0] = z + s0
    for t in range(N):
        C = _gather(model.C, t, theta)
        y[:, t] = (np.einsum("kij,kj->ki", C, x[:, t])
                   + np.einsum("kij,kj->ki", _gather(model.Dd, t, theta), d[:, t])
                   + np.einsum("kij,kj->ki", _gather(model.Ds, t, theta), e[:, t]))
        v[:, t] = y[:, t] - np.einsum("kij,kj->ki", C, xh[:, t])
        if controls is not None:
            u[:, t] = controls(t, theta, v[:, :t + 1])
        elif policy is not None:
            L = history_length(t, policy.T)
            idx = np.zeros(K, dtype=int)
            for s in range(t + 1 - L, t + 1):
                idx = idx * model.m + theta[:, s]
            Kt = policy.K[t][idx]                     # (K, n_u, 1 + (t+1) n_y)
            feats = np.concatenate([np.ones((K, 1)), v[:, :t + 1].reshape(K, -1)], axis=1)
            u[:, t] = np.einsum("kij,kj->ki", Kt, feats)
        A = _gather(model.A, t, theta)
        B = _gather(model.B, t, theta)
        Bu = np.einsum("kij,kj->ki", B, u[:, t])
        x[:, t + 1] = (np.einsum("kij,kj->ki", A, x[:, t]) + Bu
                       + np.einsum("kij,kj->ki", _gather(model.Bd, t, theta), d[:, t])
                       + np.einsum("kij,kj->ki", _gather(model.Bs, t, theta), e[:, t]))
        xh[:, t + 1] = np.einsum("kij,kj->ki", A, xh[:, t]) + Bu
    return Trajectory(theta, x, u, y, v, xh)


def rollout(model: MjlsModel, policy: Optional[PobPolicy], scenario: Scenario,
            controls: Optional[Callable] = None) -> Trajectory:
    """Single-scenario rollout; arrays have no batch axis."""
    tr = rollout_batch(model, policy, [scenario.theta], [scenario.zeta], [scenario.epsilon], controls)
    return Trajectory(tr.theta[0], tr.x[0], tr.u[0], tr.y[0], tr.v[0], tr.x_hat[0])


# ---------------------------------------------------------------------------
# exact values


def path_moments(model: MjlsModel, policy: PobPolicy, zeta, path):
    """Conditional mean and covariance of ``w`` given the path."""
    st = build_stacked(model, path, policy)
    b, Bd, Bs = trajectory_affine_maps(st)
    mu = b + Bd @ np.asarray(zeta, dtype=float)
    Sigma = Bs @ model.Sigma_eps @ Bs.T
    return mu, Sigma


def exact_spec_value(model: MjlsModel, policy: PobPolicy, spec: SpecAvgQuad, zeta) -> float:
    """``E[<A w, w> + 2 <beta, w>]`` by enumerating every switching path."""
    model.check_enumerable()
    total = 0.0
    for path in all_paths(model.m, model.N):
        p = path_probability(model.chain, path)
        if p == 0.0:
            continue
        mu, Sigma = path_moments(model, policy, zeta, path)
        total += p * (mu @ spec.A @ mu + 2 * spec.beta @ mu + np.sum(spec.A * Sigma))
    return float(total)


def exact_mean(model: MjlsModel, policy: PobPolicy, zeta) -> np.ndarray:
    model.check_enumerable()
    out = np.zeros(model.n_w)
    for path in all_paths(model.m, model.N):
        p = path_probability(model.chain, path)
        if p:
            out += p * path_moments(model, policy, zeta, path)[0]
    return out


def closed_form_moments(model: MjlsModel, policy: PobPolicy, zeta):
    """``(mu_w, Sigma_w)`` for a single-mode model."""
    if model.m != 1:
        raise ValueError("closed-form moments need a single-mode model (m = 1)")
    return path_moments(model, policy, zeta, (0,) * model.N)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    samples: int


def monte_carlo_spec(model: MjlsModel, policy: PobPolicy, spec: SpecAvgQuad, zeta, samples: int,
                     seed: int, batch: int = 20000) -> McEstimate:
    """Sample average of ``<A w, w> + 2 <beta, w>`` over paths and noise at fixed ``zeta``."""
    vals = []
    for start in range(0, samples, batch):
        k = min(batch, samples - start)
        rng = rng_stream(seed, start)
        theta = sample_paths(model.chain, rng, model.N, k)
        eps = sample_noise(model, rng, k)
        tr = rollout_batch(model, policy, theta, np.broadcast_to(zeta, (k, model.n_zeta)), eps)
        w = tr.w
        vals.append(np.einsum("ki,ij,kj->k", w, spec.A, w) + 2 * w @ spec.beta)
    v = np.concatenate(vals)
    return McEstimate(float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)), int(v.size))


# ---------------------------------------------------------------------------
# multi-start maximiser over an ellitope


def maximize_over_ellitope(A, b, ellitope: Ellitope, starts: int = 64, seed: int = 0,
                           c=None) -> tuple:
    """Best local maximum of ``x^T A x + 2 b^T x`` over the ellitope from ``starts`` starts.

    Each start is a boundary or interior sample; SLSQP climbs from it under
    the constraints ``x^T Q_i x <= c_i``.  Returns ``(value, argmax)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    Qs = ellitope.Qs
    c = np.ones(len(Qs)) if c is None else np.asarray(c, dtype=float)
    rng = np.random.default_rng(seed)

    def f(x):
        return -(x @ A @ x + 2 * b @ x)

    def g(x):
        return -(2 * A @ x + 2 * b)

    cons = [{"type": "ineq", "fun": (lambda x, Q=Q, ci=ci: ci - x @ Q @ x),
             "jac": (lambda x, Q=Q: -2 * Q @ x)} for Q, ci in zip(Qs, c)]
    best_val, best_x = -np.inf, None
    scale = np.sqrt(c.min())
    for k in range(starts):
        x0 = sample_uncertainty(ellitope, rng, "boundary" if k % 2 == 0 else "interior") * scale
        res = minimize(f, x0, jac=g, constraints=cons, method="SLSQP",
                       options={"maxiter": 500, "ftol": 1e-14})
        x = res.x
        lev = np.array([x @ Q @ x for Q in Qs]) / c
        if lev.max() > 1.0:
            x = x / np.sqrt(lev.max())  # pull back onto the set
        val = -f(x)
        if val > best_val:
            best_val, best_x = val, x
    return float(best_val), best_x
