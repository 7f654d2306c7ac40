"""Expectations of long matrix products over a Markov chain.

A factor sequence is a list of ``N`` arrays.  Factor ``s`` has shape
``(m**L, *batch, rows, cols)`` where ``L`` is the length of the mode window
it depends on (``L = 1`` for an ordinary single-mode factor).  Windows at
time ``s`` cover ``theta_{s-L+1} .. theta_s`` and are truncated at time
zero, so a window factor at time ``s`` holds ``m**min(L, s+1)`` matrices in
lexicographic order.  Extra batch axes broadcast through every product,
which lets one pass evaluate many slot derivatives at once.

The product is ordered with the latest factor on the left:
``f_{N-1} ... f_1 f_0``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ENUMERATION_LIMIT, DimensionError, EnumerationTooLarge, MarkovChain


@dataclass(frozen=True)
class FactorSequence:
    """Factors ``f_0 .. f_{N-1}`` with one history-dependent factor at ``tau``.

    ``factors[tau]`` has ``m**min(T+1, tau+1)`` leading entries indexed by
    the truncated history; every other factor has ``m`` leading entries.
    """

    factors: tuple
    tau: int = 0
    T: int = 0

    def __post_init__(self):
        fs = tuple(np.asarray(f, dtype=float) for f in self.factors)
        if not fs:
            raise DimensionError("factor sequence is empty")
        object.__setattr__(self, "factors", fs)
        if not 0 <= self.tau < len(fs):
            raise ValueError("tau out of range")
        if self.T < 0:
            raise ValueError("memory must be nonnegative")

    @property
    def N(self) -> int:
        return len(self.factors)

    def window(self, s: int) -> int:
        if s == self.tau:
            return min(self.T + 1, s + 1)
        return 1

    def check(self, m: int):
        for s, f in enumerate(self.factors):
            if f.ndim < 3:
                raise DimensionError(f"factor {s} needs shape (modes, ..., rows, cols)")
            if f.shape[0] != m ** self.window(s):
                raise DimensionError(
                    f"factor {s} has {f.shape[0]} entries, expected {m ** self.window(s)}")
        for s in range(1, self.N):
            if self.factors[s].shape[-1] != self.factors[s - 1].shape[-2]:
                raise DimensionError(f"factors {s} and {s - 1} do not compose")

    def windows(self):
        return [(f, self.window(s)) for s, f in enumerate(self.factors)]


def _normalize(arrs):
    """Give every array the same number of batch axes (inserted after axis 0)."""
    nb = max(a.ndim - 3 for a in arrs)
    out = []
    for a in arrs:
        extra = nb - (a.ndim - 3)
        out.append(a.reshape((a.shape[0],) + (1,) * extra + a.shape[1:]) if extra else a)
    return out


def _T(a):
    return np.swapaxes(a, -1, -2)


def _mix(P, g):
    """``out[i] = sum_j P[j, i] g[j]`` over the leading axis."""
    return np.tensordot(P.T, g, axes=(1, 0))


def expected_product_linear(chain: MarkovChain, seq: FactorSequence) -> np.ndarray:
    """``E[f_{N-1} ... f_tau[theta_[tau,T]] ... f_0]`` by backward recursion.

    The tail beyond ``tau`` is collapsed one mode at a time, the history
    window ending at ``tau`` is summed explicitly, and the recursion then
    continues down to time zero.
    """
    m, N, tau = chain.m, seq.N, seq.tau
    seq.check(m)
    fs = _normalize(list(seq.factors))
    P = chain.P

    g = None  # conditional expectation of f_{N-1} ... f_{s+1} given theta_s
    for s in range(N - 2, tau - 1, -1):
        prod = fs[s + 1] if g is None else g @ fs[s + 1]
        g = _mix(P, prod)

    L = seq.window(tau)
    w0 = tau - L + 1
    f_tau = fs[tau]
    acc = None
    for idx, win in enumerate(itertools.product(range(m), repeat=L)):
        term = f_tau[idx] if g is None else g[win[-1]] @ f_tau[idx]
        weight = 1.0
        for k in range(L - 2, -1, -1):
            term = term @ fs[w0 + k][win[k]]
            weight *= P[win[k + 1], win[k]]
        if w0 == 0:
            contrib = (chain.pi[win[0]] * weight) * term
            acc = contrib if acc is None else acc + contrib
        else:
            col = (P[win[0], :] * weight).reshape((m,) + (1,) * term.ndim)
            contrib = col * term[None]
            acc = contrib if acc is None else acc + contrib
    if w0 == 0:
        return acc

    g = acc  # g_{w0-1}
    for s in range(w0 - 2, -1, -1):
        g = _mix(P, g @ fs[s + 1])
    return np.tensordot(chain.pi, g @ fs[0], axes=(0, 0))


def expected_product_quadratic(chain: MarkovChain, left: FactorSequence, S,
                               right: FactorSequence) -> np.ndarray:
    """``E[(q_{N-1} ... q_0)^T S (f_{N-1} ... f_0)]`` with a shared history factor."""
    m = chain.m
    if left.N != right.N or left.tau != right.tau or left.T != right.T:
        raise DimensionError("left and right sequences need the same N, tau and T")
    left.check(m)
    right.check(m)
    N, tau = right.N, right.tau
    S = np.asarray(S, dtype=float)
    allf = _normalize(list(left.factors) + list(right.factors))
    qs, fs = allf[:N], allf[N:]
    if S.shape[-2] != qs[-1].shape[-2] or S.shape[-1] != fs[-1].shape[-2]:
        raise DimensionError("S does not match the outermost factors")
    P = chain.P

    nb = fs[0].ndim - 3
    g = np.broadcast_to(S, (m,) + (1,) * nb + S.shape)
    for s in range(N - 2, tau - 1, -1):
        g = _mix(P, _T(qs[s + 1]) @ g @ fs[s + 1])

    L = right.window(tau)
    w0 = tau - L + 1
    acc = None
    for idx, win in enumerate(itertools.product(range(m), repeat=L)):
        lq = qs[tau][idx]
        rf = fs[tau][idx]
        weight = 1.0
        for k in range(L - 2, -1, -1):
            lq = lq @ qs[w0 + k][win[k]]
            rf = rf @ fs[w0 + k][win[k]]
            weight *= P[win[k + 1], win[k]]
        term = _T(lq) @ g[win[-1]] @ rf
        if w0 == 0:
            contrib = (chain.pi[win[0]] * weight) * term
        else:
            col = (P[win[0], :] * weight).reshape((m,) + (1,) * term.ndim)
            contrib = col * term[None]
        acc = contrib if acc is None else acc + contrib
    if w0 == 0:
        return acc

    g = acc
    for s in range(w0 - 2, -1, -1):
        g = _mix(P, _T(qs[s + 1]) @ g @ fs[s + 1])
    return np.tensordot(chain.pi, _T(qs[0]) @ g @ fs[0], axes=(0, 0))


# ---------------------------------------------------------------------------
# general windowed engine


def _window_plan(windows: Sequence[int]):
    N = len(windows)
    r = [0] * N
    r[N - 1] = max(1, windows[N - 1])
    for s in range(N - 2, -1, -1):
        r[s] = max(1, windows[s], r[s + 1] - 1)
    return [min(r[s], s + 1) for s in range(N)]


def expected_product_windowed(chain: MarkovChain, right, S=None, left=None) -> np.ndarray:
    """Expectation of a product whose factors may each depend on a mode window.

    ``right`` (and ``left`` for the quadratic form) is a list of
    ``(array, window_length)`` pairs.  Returns ``E[f_{N-1} ... f_0]`` when
    ``S`` is ``None``, else ``E[(q ...)^T S (f ...)]``.  The recursion state
    at time ``s`` is the shortest window that determines every later
    factor, so the cost is linear in ``N`` for bounded windows.
    """
    m, P = chain.m, chain.P
    N = len(right)
    if left is not None and len(left) != N:
        raise DimensionError("left and right sequences differ in length")
    wr = [w for _, w in right]
    wl = [w for _, w in left] if left is not None else [1] * N
    ell = _window_plan([max(a, b) for a, b in zip(wr, wl)])

    arrs = [np.asarray(a, dtype=float) for a, _ in right]
    if left is not None:
        arrs += [np.asarray(a, dtype=float) for a, _ in left]
    arrs = _normalize(arrs)
    fs = arrs[:N]
    qs = arrs[N:] if left is not None else None
    for s in range(N):
        for arr, w in ((fs[s], wr[s]),) + (((qs[s], wl[s]),) if qs is not None else ()):
            if arr.shape[0] != m ** min(w, s + 1):
                raise DimensionError(f"factor {s} has {arr.shape[0]} window entries")

    def gather(arr, w, s, idx):
        return arr[idx % (m ** min(w, s + 1))]

    H = None
    for s in range(N - 1, -1, -1):
        idx = np.arange(m ** ell[s])
        f = gather(fs[s], wr[s], s, idx)
        if H is None:
            if qs is None:
                cur = f
            else:
                q = gather(qs[s], wl[s], s, idx)
                cur = _T(q) @ np.asarray(S, dtype=float) @ f
        else:
            keep = m ** (ell[s + 1] - 1)
            acc = 0.0
            for j in range(m):
                nxt = (idx % keep) * m + j
                wgt = P[j, idx % m].reshape((-1,) + (1,) * (H.ndim - 1))
                acc = acc + wgt * H[nxt]
            if qs is None:
                cur = acc @ f
            else:
                q = gather(qs[s], wl[s], s, idx)
                cur = _T(q) @ acc @ f
        H = cur
    return np.tensordot(chain.pi, H, axes=(0, 0))


# ---------------------------------------------------------------------------
# exhaustive oracle


def _factor_at(arr, w, s, path, m):
    L = min(w, s + 1)
    idx = 0
    for i in path[s - L + 1: s + 1]:
        idx = idx * m + i
    return arr[idx]


def brute_force_expectation(chain: MarkovChain, right, S=None, left=None,
                            limit: int = ENUMERATION_LIMIT) -> np.ndarray:
    """Exhaustive sum over all ``m**N`` paths, weighted by path probability.

    ``right`` and ``left`` are either :class:`FactorSequence` objects or
    lists of ``(array, window_length)`` pairs.
    """
    if isinstance(right, FactorSequence):
        right = right.windows()
    if isinstance(left, FactorSequence):
        left = left.windows()
    m = chain.m
    N = len(right)
    if m ** N > limit:
        raise EnumerationTooLarge(f"m^N = {m ** N} exceeds {limit}")
    arrs = [np.asarray(a, dtype=float) for a, _ in right]
    if left is not None:
        arrs += [np.asarray(a, dtype=float) for a, _ in left]
    arrs = _normalize(arrs)
    fs = list(zip(arrs[:N], [w for _, w in right]))
    qs = list(zip(arrs[N:], [w for _, w in left])) if left is not None else None
    total = None
    for path in itertools.product(range(m), repeat=N):
        p = chain.pi[path[0]]
        for a, b in zip(path[:-1], path[1:]):
            p *= chain.P[b, a]
        if p == 0.0:
            continue
        prod = _factor_at(fs[0][0], fs[0][1], 0, path, m)
        for s in range(1, N):
            prod = _factor_at(fs[s][0], fs[s][1], s, path, m) @ prod
        if qs is not None:
            lp = _factor_at(qs[0][0], qs[0][1], 0, path, m)
            for s in range(1, N):
                lp = _factor_at(qs[s][0], qs[s][1], s, path, m) @ lp
            prod = _T(lp) @ np.asarray(S, dtype=float) @ prod
        total = p * prod if total is None else total + p * prod
    if total is None:
        raise ValueError("every path has zero probability")
    return total


def random_factor_sequence(rng: np.random.Generator, N: int, m: int, T: int, tau: int,
                           dims: Optional[Sequence[int]] = None, max_dim: int = 3) -> FactorSequence:
    """Random conformable factors with entries uniform in ``[-1, 1]``."""
    if dims is None:
        dims = rng.integers(1, max_dim + 1, size=N + 1)
    fs = []
    for s in range(N):
        L = min(T + 1, s + 1) if s == tau else 1
        fs.append(rng.uniform(-1, 1, size=(m ** L, dims[s + 1], dims[s])))
    return FactorSequence(tuple(fs), tau=tau, T=T)
