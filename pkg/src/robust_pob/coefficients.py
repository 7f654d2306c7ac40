"""Assembly of the affine map ``M(chi)`` and the matrix-convex form ``V(chi)``.

Both are expectations over the switching path of products of per-time
factors.  Everything here is expressed as a *lifted* linear chain whose
factor at time ``s`` depends on ``theta_s`` (plus one history window for
policy slots), so the backward recursions of :mod:`expectation` apply.

A slot of the policy addresses ``(t, hist, a, rho)``: row ``a`` of the
coefficient block ``[h_t, H_0^t, ..., H_t^t]`` and its column ``rho``.
Because purified outputs do not depend on the policy, its derivative is

    dF/dchi_k = 1[theta_[t,T] = hist] * P_t e_a e_rho^T R_t

where ``R_t`` maps the exogenous input to ``[1, v_0, ..., v_t]`` (past
modes) and ``P_t`` is the open-loop response of ``w`` to ``u_t`` (current
and future modes).

Two input channels share this machinery.  The deterministic channel takes
``[1, zeta]`` and the stochastic one takes ``epsilon = (s_0, e_0..)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expectation import (FactorSequence, expected_product_linear,
                          expected_product_quadratic, expected_product_windowed)
from .model import (DimensionError, MjlsModel, PobPolicy, all_paths, history_index,
                    history_length, path_probability)
from .stacked import build_stacked, trajectory_affine_maps


def psd_sqrt(S, tol: float = 1e-12) -> np.ndarray:
    """Symmetric square root with eigenvalues below ``tol`` clipped to zero."""
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return S.copy()
    lam, U = np.linalg.eigh((S + S.T) / 2)
    lam = np.where(lam > tol, lam, 0.0)
    return (U * np.sqrt(lam)) @ U.T


@dataclass(frozen=True)
class Channel:
    """How one exogenous input vector enters the system."""

    n_in: int
    has_const: bool
    S0: np.ndarray            # initial state as a map of the input
    offsets: tuple            # start of the time-t block in the input
    width: int                # size of each time block
    Bch: np.ndarray           # (N, m, n_x, width)
    Dch: np.ndarray           # (N, m, n_y, width)
    pre: Optional[np.ndarray] = None   # optional right factor (e.g. a covariance root)

    def selector(self, t):
        E = np.zeros((self.width, self.n_in))
        E[:, self.offsets[t]: self.offsets[t] + self.width] = np.eye(self.width)
        return E

    @property
    def n_cols(self) -> int:
        return self.n_in if self.pre is None else self.pre.shape[1]


def deterministic_channel(model: MjlsModel) -> Channel:
    n_x, n_d, N = model.n_x, model.n_d, model.N
    n_in = 1 + model.n_zeta
    S0 = np.zeros((n_x, n_in))
    if model.x0_known is not None:
        S0[:, 0] = model.x0_known
        base = 1
    else:
        S0[:, 1:1 + n_x] = np.eye(n_x)
        base = 1 + n_x
    offsets = tuple(base + t * n_d for t in range(N))
    return Channel(n_in, True, S0, offsets, n_d, model.Bd, model.Dd)


def stochastic_channel(model: MjlsModel, whiten: bool = False) -> Channel:
    n_x, n_e, N = model.n_x, model.n_e, model.N
    n_in = model.n_eps
    S0 = np.zeros((n_x, n_in))
    S0[:, :n_x] = np.eye(n_x)
    offsets = tuple(n_x + t * n_e for t in range(N))
    pre = psd_sqrt(model.Sigma_eps) if whiten else None
    return Channel(n_in, False, S0, offsets, n_e, model.Bs, model.Ds, pre)


# ---------------------------------------------------------------------------
# lifted chains


def _w_x_slot(model, k):
    """Rows of ``w`` holding ``x_k`` (``k = 1..N``)."""
    return slice((k - 1) * model.n_x, k * model.n_x)


def _w_u_slot(model, t):
    base = model.N * model.n_x
    return slice(base + t * model.n_u, base + (t + 1) * model.n_u)


def _pre_state(model, ch):
    """Map from the input to the lifted past state ``[in; delta_0]``."""
    M = np.vstack([np.eye(ch.n_in), ch.S0])
    return M if ch.pre is None else M @ ch.pre


def _past_step(model, ch, j, i):
    """``[in; delta_j; v_0..v_{j-1}] -> [in; delta_{j+1}; v_0..v_j]`` in mode ``i``."""
    n_in, n_x, n_y = ch.n_in, model.n_x, model.n_y
    p = n_in + n_x + j * n_y
    out = np.zeros((p + n_y, p))
    E = ch.selector(j)
    out[:n_in, :n_in] = np.eye(n_in)
    out[n_in:n_in + n_x, :n_in] = ch.Bch[j, i] @ E
    out[n_in:n_in + n_x, n_in:n_in + n_x] = model.A[j, i]
    out[n_in + n_x:p, n_in + n_x:p] = np.eye(j * n_y)
    out[p:, :n_in] = ch.Dch[j, i] @ E
    out[p:, n_in:n_in + n_x] = model.C[j, i]
    return out


def _features(model, ch, t, i):
    """Map from the past state at ``t`` to ``[1, v_0, ..., v_t]``."""
    n_in, n_x, n_y = ch.n_in, model.n_x, model.n_y
    p = n_in + n_x + t * n_y
    Phi = np.zeros((1 + (t + 1) * n_y, p))
    if ch.has_const:
        Phi[0, 0] = 1.0
    Phi[1:1 + t * n_y, n_in + n_x:p] = np.eye(t * n_y)
    Phi[1 + t * n_y:, :n_in] = ch.Dch[t, i] @ ch.selector(t)
    Phi[1 + t * n_y:, n_in:n_in + n_x] = model.C[t, i]
    return Phi


def _injection(model, ch, t, i):
    """Batched ``(n_u, n_rho, n_x + n_w, p_t)`` response to slot ``(a, rho)``."""
    n_x, n_u, n_w = model.n_x, model.n_u, model.n_w
    Phi = _features(model, ch, t, i)
    out_vec = np.zeros((n_u, n_x + n_w))
    B = model.B[t, i]
    out_vec[:, :n_x] = B.T
    out_vec[:, n_x:][:, _w_x_slot(model, t + 1)] = B.T
    out_vec[:, n_x:][:, _w_u_slot(model, t)] = np.eye(n_u)
    return out_vec[:, None, :, None] * Phi[None, :, None, :]


def _future_step(model, j, i):
    """``[x_j; w] -> [x_{j+1}; w + slot(x_{j+1})]`` in mode ``i``."""
    n_x, n_w = model.n_x, model.n_w
    A = model.A[j, i]
    out = np.eye(n_x + n_w)
    out[:n_x, :n_x] = A
    out[n_x:, :n_x][_w_x_slot(model, j + 1)] = A
    return out


def _output(model):
    n_x, n_w = model.n_x, model.n_w
    return np.hstack([np.zeros((n_w, n_x)), np.eye(n_w)])


def slot_chain(model: MjlsModel, ch: Channel, t: int, hist: tuple, T: int, batch_pos: int = 0,
               batch_ndim: int = 2):
    """Windowed factor list for the slot group ``(t, hist)``.

    Returns a list of ``(array, window)`` pairs whose product is
    ``dF/dchi`` for every ``(a, rho)`` of the group, gated by the history
    indicator.  The ``(n_u, n_rho)`` batch axes are placed at position
    ``batch_pos`` among ``batch_ndim`` batch axes so two groups can be
    combined by broadcasting.
    """
    m, N = model.m, model.N
    L = history_length(t, T)
    factors = []
    pre = _pre_state(model, ch)
    for s in range(N):
        if s < t:
            arr = np.stack([_past_step(model, ch, s, i) for i in range(m)])
            if s == 0:
                arr = arr @ pre
            factors.append((arr, 1))
        elif s == t:
            inj = np.stack([_injection(model, ch, t, i) for i in range(m)])
            if t == 0:
                inj = inj @ pre
            if t == N - 1:
                inj = _output(model) @ inj
            arr = np.zeros((m ** L,) + inj.shape[1:])
            h_idx = history_index(hist, m)
            arr[h_idx] = inj[hist[-1]]
            shape = (arr.shape[0],) + (1,) * batch_pos + arr.shape[1:3] \
                + (1,) * (batch_ndim - batch_pos - 2) + arr.shape[3:]
            factors.append((arr.reshape(shape), L))
        else:
            arr = np.stack([_future_step(model, s, i) for i in range(m)])
            if s == N - 1:
                arr = _output(model) @ arr
            factors.append((arr, 1))
    return factors


def open_loop_chain(model: MjlsModel, ch: Channel):
    """Factors of ``G``: response of ``w`` to the input with zero policy."""
    m, N = model.m, model.N
    n_in, n_x, n_w = ch.n_in, model.n_x, model.n_w
    pre = np.vstack([np.eye(n_in), ch.S0, np.zeros((n_w, n_in))])
    if ch.pre is not None:
        pre = pre @ ch.pre
    factors = []
    for s in range(N):
        mats = []
        E = ch.selector(s)
        for i in range(m):
            f = np.eye(n_in + n_x + n_w)
            f[n_in:n_in + n_x, :n_in] = ch.Bch[s, i] @ E
            f[n_in:n_in + n_x, n_in:n_in + n_x] = model.A[s, i]
            rows = slice(n_in + n_x + (s * n_x), n_in + n_x + (s + 1) * n_x)
            f[rows, :n_in] = ch.Bch[s, i] @ E
            f[rows, n_in:n_in + n_x] = model.A[s, i]
            mats.append(f)
        arr = np.stack(mats)
        if s == 0:
            arr = arr @ pre
        if s == N - 1:
            arr = np.hstack([np.zeros((n_w, n_in + n_x)), np.eye(n_w)]) @ arr
        factors.append((arr, 1))
    return factors


def _as_sequence(factors, tau, T, m):
    """Wrap a window list as a :class:`FactorSequence` with its window at ``tau``."""
    out = []
    for s, (arr, w) in enumerate(factors):
        L = min(T + 1, s + 1) if s == tau else 1
        if w == L:
            out.append(arr)
        elif w == 1:
            idx = np.arange(m ** L) % m
            out.append(arr[idx])
        else:
            raise DimensionError("window layout does not match tau")
    return FactorSequence(tuple(out), tau=tau, T=T)


def slot_groups(model: MjlsModel, T: int):
    """``(t, hist, offset)`` for every group, in ``chi`` order."""
    out, pos = [], 0
    m, n_u, n_y = model.m, model.n_u, model.n_y
    for t in range(model.N):
        L = history_length(t, T)
        size = n_u * (1 + (t + 1) * n_y)
        for hist in itertools.product(range(m), repeat=L):
            out.append((t, hist, pos))
            pos += size
    return out


# ---------------------------------------------------------------------------
# M


@dataclass(frozen=True)
class AffineMapM:
    """``M(chi) = M0 + sum_k chi_k Mk`` with ``Mk`` of shape ``(K, n_w, n_c)``."""

    M0: np.ndarray
    Mk: np.ndarray

    @property
    def dim(self) -> int:
        return self.Mk.shape[0]

    def __call__(self, chi) -> np.ndarray:
        chi = np.asarray(chi, dtype=float)
        if chi.shape != (self.dim,):
            raise DimensionError(f"chi must have length {self.dim}")
        return self.M0 + np.tensordot(chi, self.Mk, axes=(0, 0))


def assemble_M(model: MjlsModel, T: int, channel: str = "deterministic") -> AffineMapM:
    """Expected trajectory map, one linear recursion per slot group."""
    if not 0 <= T < model.N:
        raise ValueError("memory must satisfy 0 <= T <= N-1")
    ch = deterministic_channel(model) if channel == "deterministic" else stochastic_channel(model)
    m, n_u = model.m, model.n_u
    G = open_loop_chain(model, ch)
    M0 = expected_product_linear(model.chain, _as_sequence(G, 0, 0, m))
    groups = slot_groups(model, T)
    K = sum(n_u * (1 + (t + 1) * model.n_y) for t, _, _ in groups)
    Mk = np.zeros((K, model.n_w, ch.n_cols))
    for t, hist, off in groups:
        seq = _as_sequence(slot_chain(model, ch, t, hist, T), t, T, m)
        val = expected_product_linear(model.chain, seq)
        n_rho = val.shape[1]
        Mk[off: off + n_u * n_rho] = val.reshape(n_u * n_rho, model.n_w, ch.n_cols)
    return AffineMapM(M0, Mk)


# ---------------------------------------------------------------------------
# V


@dataclass(frozen=True)
class QuadraticFormV:
    """``V(chi) = V0 + sum_k chi_k Lk + Z(chi)^T Z(chi)``.

    ``gram`` has shape ``(K*n_c, K*n_c)`` over index pairs ``(slot, column)``
    and ``R`` satisfies ``gram ~= R^T R``; ``Z(chi)[:, c] = sum_k chi_k R[:, k*n_c + c]``.
    """

    V0: np.ndarray
    L: np.ndarray
    gram: np.ndarray
    R: np.ndarray
    gram_min_eig: float

    @property
    def n_c(self) -> int:
        return self.V0.shape[0]

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    def R_by_slot(self) -> np.ndarray:
        """``R`` reshaped to ``(K, r, n_c)``."""
        r = self.R.shape[0]
        return self.R.reshape(r, self.dim, self.n_c).transpose(1, 0, 2)

    def Z(self, chi) -> np.ndarray:
        return np.tensordot(np.asarray(chi, dtype=float), self.R_by_slot(), axes=(0, 0))

    def __call__(self, chi) -> np.ndarray:
        chi = np.asarray(chi, dtype=float)
        if chi.shape != (self.dim,):
            raise DimensionError(f"chi must have length {self.dim}")
        K, n_c = self.dim, self.n_c
        G4 = self.gram.reshape(K, n_c, K, n_c)
        quad = np.einsum("k,kalb,l->ab", chi, G4, chi)
        out = self.V0 + np.tensordot(chi, self.L, axes=(0, 0)) + quad
        return (out + out.T) / 2

    def exact_quadratic_part(self, chi) -> np.ndarray:
        K, n_c = self.dim, self.n_c
        return np.einsum("k,kalb,l->ab", chi, self.gram.reshape(K, n_c, K, n_c), chi)


def _check_psd(A, name, tol=1e-8):
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, A.T, atol=1e-10 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValueError(f"{name} must be symmetric")
    if A.size and np.linalg.eigvalsh((A + A.T) / 2).min() < -tol * max(1.0, np.abs(A).max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return (A + A.T) / 2


def _group_compatible(t, h, s, g, T):
    """False when the two history indicators can never both be one."""
    if t == s:
        return h == g
    start_t, start_s = t - len(h) + 1, s - len(g) + 1
    for time in range(max(start_t, start_s), t + 1):
        if h[time - start_t] != g[time - start_s]:
            return False
    return True


def _noise_active(model):
    return model.n_eps > 0 and np.abs(model.Sigma_eps).max(initial=0.0) > 0


DENSE_EIG_LIMIT = 1500


def factor_gram(gram: np.ndarray, tol: float = 1e-12):
    """Eigen-factor a PSD Gram matrix as ``R^T R``, clipping tiny eigenvalues.

    Returns ``(R, min_eig)``.  Small matrices use a dense symmetric
    eigendecomposition.  Large ones are first compressed by a pivoted
    Cholesky factorization ``C^T C`` (cost linear in the size for bounded
    rank); the eigendecomposition of the small matrix ``C C^T`` then gives
    the nonzero eigenpairs, and ``R`` has orthogonal rows in both cases.
    """
    n = gram.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = max(1.0, float(np.abs(np.diag(gram)).max()))
    if n <= DENSE_EIG_LIMIT:
        lam, U = np.linalg.eigh(gram)
        keep = lam > tol * max(1.0, float(lam.max()))
        return (U[:, keep] * np.sqrt(lam[keep])).T, float(lam.min())
    from scipy.linalg import lapack
    c, piv, rank, info = lapack.dpstrf(gram, tol=tol * scale, lower=0)
    if info < 0:
        raise ValueError("pivoted Cholesky failed on the Gram matrix")
    U = np.triu(c)[:rank]
    C = np.zeros((rank, n))
    C[:, piv - 1] = U
    lam, V = np.linalg.eigh(C @ C.T)
    keep = lam > tol * max(1.0, float(lam.max()))
    R = V[:, keep].T @ C
    resid = np.diag(gram) - np.einsum("ij,ij->j", C, C)
    return R, float(min(lam.min(initial=0.0), resid.min(initial=0.0)))


def assemble_V(model: MjlsModel, T: int, A_spec, include_noise_trace: bool = True) -> QuadraticFormV:
    """``E[(F+G)^T A (F+G)]`` plus the noise trace in the constant corner."""
    if not 0 <= T < model.N:
        raise ValueError("memory must satisfy 0 <= T <= N-1")
    A_spec = _check_psd(A_spec, "A_spec")
    if A_spec.shape != (model.n_w, model.n_w):
        raise DimensionError(f"A_spec must be {model.n_w}x{model.n_w}")
    chain, m, n_u = model.chain, model.m, model.n_u
    det = deterministic_channel(model)
    n_c = det.n_in
    groups = slot_groups(model, T)
    K = sum(n_u * (1 + (t + 1) * model.n_y) for t, _, _ in groups)

    G = open_loop_chain(model, det)
    V0 = expected_product_quadratic(chain, _as_sequence(G, 0, 0, m), A_spec,
                                    _as_sequence(G, 0, 0, m))
    L = np.zeros((K, n_c, n_c))
    for t, hist, off in groups:
        fac = slot_chain(model, det, t, hist, T)
        cross = expected_product_quadratic(chain, _as_sequence(fac, t, T, m), A_spec,
                                           _as_sequence(G, t, T, m))
        n_rho = cross.shape[1]
        cross = cross.reshape(n_u * n_rho, n_c, n_c)
        L[off: off + n_u * n_rho] = cross + np.swapaxes(cross, -1, -2)

    gram4 = np.zeros((K, n_c, K, n_c))
    _fill_gram(model, chain, groups, T, A_spec, det, gram4, trace=False)

    if include_noise_trace and _noise_active(model):
        sto = stochastic_channel(model, whiten=True)
        Gs = open_loop_chain(model, sto)
        Y0 = expected_product_quadratic(chain, _as_sequence(Gs, 0, 0, m), A_spec,
                                        _as_sequence(Gs, 0, 0, m))
        V0 = V0.copy()
        V0[0, 0] += np.trace(Y0)
        for t, hist, off in groups:
            fac = slot_chain(model, sto, t, hist, T)
            cross = expected_product_quadratic(chain, _as_sequence(fac, t, T, m), A_spec,
                                               _as_sequence(Gs, t, T, m))
            n_rho = cross.shape[1]
            tr = np.trace(cross, axis1=-2, axis2=-1).reshape(n_u * n_rho)
            L[off: off + n_u * n_rho, 0, 0] += 2.0 * tr
        _fill_gram(model, chain, groups, T, A_spec, sto, gram4, trace=True)

    gram = gram4.reshape(K * n_c, K * n_c)
    gram = (gram + gram.T) / 2
    R, min_eig = factor_gram(gram)
    return QuadraticFormV((V0 + V0.T) / 2, L, gram, R, min_eig)


def _fill_gram(model, chain, groups, T, A_spec, ch, gram4, trace):
    n_u = model.n_u
    chains = [slot_chain(model, ch, t, h, T, batch_pos=0, batch_ndim=4) for t, h, _ in groups]
    rights = [slot_chain(model, ch, t, h, T, batch_pos=2, batch_ndim=4) for t, h, _ in groups]
    for i, (t, h, off_i) in enumerate(groups):
        for j in range(i, len(groups)):
            s, g, off_j = groups[j]
            if not _group_compatible(t, h, s, g, T):
                continue
            val = expected_product_windowed(chain, rights[j], A_spec, chains[i])
            # val[a, rho, b, sigma, c, c']
            nr_i, nr_j = val.shape[1], val.shape[3]
            ki = slice(off_i, off_i + n_u * nr_i)
            kj = slice(off_j, off_j + n_u * nr_j)
            if trace:
                tr = np.trace(val, axis1=-2, axis2=-1).reshape(n_u * nr_i, n_u * nr_j)
                gram4[ki, 0, kj, 0] += tr
                if j != i:
                    gram4[kj, 0, ki, 0] += tr.T
            else:
                blk = val.transpose(0, 1, 4, 2, 3, 5).reshape(
                    n_u * nr_i, val.shape[4], n_u * nr_j, val.shape[5])
                gram4[ki, :, kj, :] += blk
                if j != i:
                    gram4[kj, :, ki, :] += blk.transpose(2, 3, 0, 1)


# ---------------------------------------------------------------------------
# exhaustive cross-check


def path_coefficients(model: MjlsModel, policy: PobPolicy, path):
    """``(F+G, B_s)`` for one path: the maps from ``[1, zeta]`` and ``eps`` to ``w``."""
    st = build_stacked(model, path, policy)
    b, Bd_cal, Bs_cal = trajectory_affine_maps(st)
    return np.hstack([b[:, None], Bd_cal]), Bs_cal


def enumerate_M_V(model: MjlsModel, policy: PobPolicy, A_spec=None, include_noise_trace=True,
                  limit: int = 4096):
    """Direct path sums of ``M(chi)`` and ``V(chi)``; a test oracle for small chains."""
    model.check_enumerable(limit)
    n_c = 1 + model.n_zeta
    M = np.zeros((model.n_w, n_c))
    V = np.zeros((n_c, n_c)) if A_spec is not None else None
    Sig = model.Sigma_eps
    for path in all_paths(model.m, model.N):
        p = path_probability(model.chain, path)
        if p == 0.0:
            continue
        FG, Bs = path_coefficients(model, policy, path)
        M += p * FG
        if A_spec is not None:
            V += p * FG.T @ A_spec @ FG
            if include_noise_trace:
                V[0, 0] += p * np.trace(Bs.T @ A_spec @ Bs @ Sig)
    return M, V
