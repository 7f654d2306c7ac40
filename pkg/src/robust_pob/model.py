"""Core data types: Markov chain, jump linear system, ellitope and POB policy.

Modes are 0-based throughout (``0 .. m-1``).  Mode histories are tuples of
modes ordered oldest first, and tables indexed by histories use the
lexicographic order of those tuples, i.e. the base-``m`` integer whose most
significant digit is the oldest mode.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are not conformable."""


class EnumerationTooLarge(ValueError):
    """Raised when an exhaustive path sum would exceed the size guard."""


ENUMERATION_LIMIT = 10**6


def _as_matrix(a, shape, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and len(shape) == 2 and shape[1] == 1:
        a = a.reshape(-1, 1)
    if a.size == 0:
        a = a.reshape(shape)
    if a.shape != tuple(shape):
        raise DimensionError(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
    return a


@dataclass(frozen=True)
class MarkovChain:
    """Switching signal statistics.

    ``P[j, i]`` is the probability of moving from mode ``i`` to mode ``j``,
    so every column of ``P`` sums to one.
    """

    pi: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).ravel()
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        m = pi.size
        if m < 1:
            raise ValueError("chain needs at least one mode")
        if P.shape != (m, m):
            raise DimensionError(f"P must be {m}x{m}, got {P.shape}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must be a probability vector")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=0) - 1.0) > 1e-12):
            raise ValueError("columns of P must be probability vectors")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "P", P)

    @property
    def m(self) -> int:
        return self.pi.size

    def marginals(self, N: int) -> np.ndarray:
        """Mode distribution at each time, shape ``(N, m)``."""
        out = np.empty((N, self.m))
        p = self.pi.copy()
        for t in range(N):
            out[t] = p
            p = self.P @ p
        return out

    @classmethod
    def single_mode(cls) -> "MarkovChain":
        return cls(np.ones(1), np.ones((1, 1)))


def path_probability(chain: MarkovChain, path: Sequence[int]) -> float:
    """Probability of observing ``path`` as the first ``len(path)`` modes."""
    path = tuple(int(i) for i in path)
    if len(path) < 1:
        raise ValueError("path must contain at least one mode")
    if any(i < 0 or i >= chain.m for i in path):
        raise ValueError(f"mode out of range 0..{chain.m - 1}: {path}")
    p = chain.pi[path[0]]
    for prev, nxt in zip(path[:-1], path[1:]):
        p *= chain.P[nxt, prev]
    return float(p)


def all_paths(m: int, length: int):
    """All mode sequences of ``length`` in lexicographic order."""
    return itertools.product(range(m), repeat=length)


def history_length(t: int, T: int) -> int:
    return min(T + 1, t + 1)


def history_of(path: Sequence[int], t: int, T: int) -> tuple:
    """Truncated history ``theta_[t,T]``: the last ``min(T+1, t+1)`` modes up to ``t``."""
    return tuple(path[max(0, t - T): t + 1])


def history_index(hist: Sequence[int], m: int) -> int:
    idx = 0
    for i in hist:
        idx = idx * m + int(i)
    return idx


def index_history(idx: int, m: int, length: int) -> tuple:
    out = []
    for _ in range(length):
        idx, r = divmod(idx, m)
        out.append(r)
    return tuple(reversed(out))


def dim_of_policy(N: int, T: int, m: int, n_u: int, n_y: int) -> int:
    """Number of scalar parameters of a POB affine policy with memory ``T``."""
    if N < 1 or m < 1:
        raise ValueError("N and m must be positive")
    if T < 0 or T >= N:
        raise ValueError(f"memory T={T} must satisfy 0 <= T <= N-1={N - 1}")
    if n_u < 0 or n_y < 0:
        raise ValueError("dimensions must be nonnegative")
    total = sum(m ** (i + 1) * n_u * ((i + 1) * n_y + 1) for i in range(T + 1))
    total += sum(m ** (T + 1) * n_u * ((i + 1) * n_y + 1) for i in range(T + 1, N))
    return total


_MATRIX_NAMES = ("A", "B", "Bd", "Bs", "C", "Dd", "Ds")


@dataclass(frozen=True)
class MjlsModel:
    """Finite-horizon Markov jump linear system.

    Every system matrix is stored as an array of shape ``(N, m, rows, cols)``
    so ``model.A[t, i]`` is ``A_t`` in mode ``i``.

    ``x0_known`` pins the deterministic part of the initial state.  When it
    is set, ``z`` is no longer part of the uncertainty vector, which then
    holds only the disturbance trajectory (``n_zeta = N * n_d``).
    """

    A: np.ndarray
    B: np.ndarray
    Bd: np.ndarray
    Bs: np.ndarray
    C: np.ndarray
    Dd: np.ndarray
    Ds: np.ndarray
    Sigma0: np.ndarray
    chain: MarkovChain
    x0_known: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 4:
            raise DimensionError("A must have shape (N, m, n_x, n_x)")
        N, m, n_x = A.shape[0], A.shape[1], A.shape[2]
        if m != self.chain.m:
            raise DimensionError(f"matrices have {m} modes, chain has {self.chain.m}")
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        n_u = B.shape[3]
        n_y = C.shape[2]
        Bd = np.asarray(self.Bd, dtype=float)
        Bs = np.asarray(self.Bs, dtype=float)
        n_d = Bd.shape[3]
        n_e = Bs.shape[3]
        expected = {
            "A": (n_x, n_x), "B": (n_x, n_u), "Bd": (n_x, n_d), "Bs": (n_x, n_e),
            "C": (n_y, n_x), "Dd": (n_y, n_d), "Ds": (n_y, n_e),
        }
        for name in _MATRIX_NAMES:
            arr = np.asarray(getattr(self, name), dtype=float)
            shape = (N, m) + expected[name]
            if arr.size == 0:
                arr = arr.reshape(shape)
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        S0 = _as_matrix(self.Sigma0, (n_x, n_x), "Sigma0")
        if not np.allclose(S0, S0.T, atol=1e-12):
            raise ValueError("Sigma0 must be symmetric")
        if n_x and np.linalg.eigvalsh(S0).min() < -1e-10:
            raise ValueError("Sigma0 must be positive semidefinite")
        object.__setattr__(self, "Sigma0", S0)
        if self.x0_known is not None:
            object.__setattr__(self, "x0_known", _as_matrix(self.x0_known, (n_x,), "x0_known"))

    # dimensions -----------------------------------------------------------
    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def n_x(self) -> int:
        return self.A.shape[2]

    @property
    def n_u(self) -> int:
        return self.B.shape[3]

    @property
    def n_d(self) -> int:
        return self.Bd.shape[3]

    @property
    def n_e(self) -> int:
        return self.Bs.shape[3]

    @property
    def n_y(self) -> int:
        return self.C.shape[2]

    @property
    def n_w(self) -> int:
        return self.N * (self.n_x + self.n_u)

    @property
    def n_zeta(self) -> int:
        base = self.N * self.n_d
        return base if self.x0_known is not None else base + self.n_x

    @property
    def n_eps(self) -> int:
        return self.n_x + self.N * self.n_e

    @property
    def Sigma_eps(self) -> np.ndarray:
        """Covariance of ``(s_0, e_0, ..., e_{N-1})``."""
        out = np.zeros((self.n_eps, self.n_eps))
        out[: self.n_x, : self.n_x] = self.Sigma0
        out[self.n_x:, self.n_x:] = np.eye(self.N * self.n_e)
        return out

    def split_zeta(self, zeta):
        """Return ``(z, d)`` with ``d`` of shape ``(N, n_d)``."""
        zeta = np.asarray(zeta, dtype=float)
        if zeta.shape != (self.n_zeta,):
            raise DimensionError(f"zeta must have length {self.n_zeta}")
        if self.x0_known is not None:
            return self.x0_known.copy(), zeta.reshape(self.N, self.n_d)
        return zeta[: self.n_x], zeta[self.n_x:].reshape(self.N, self.n_d)

    def split_eps(self, eps):
        eps = np.asarray(eps, dtype=float)
        if eps.shape != (self.n_eps,):
            raise DimensionError(f"epsilon must have length {self.n_eps}")
        return eps[: self.n_x], eps[self.n_x:].reshape(self.N, self.n_e)

    def enumeration_size(self) -> int:
        return self.m ** self.N

    def check_enumerable(self, limit: int = ENUMERATION_LIMIT):
        if self.enumeration_size() > limit:
            raise EnumerationTooLarge(
                f"m^N = {self.m}^{self.N} exceeds the enumeration limit {limit}")

    @classmethod
    def from_arrays(cls, chain, A, B, C, Bd=None, Bs=None, Dd=None, Ds=None,
                    Sigma0=None, x0_known=None) -> "MjlsModel":
        """Build a model, broadcasting time-invariant or mode-invariant data.

        Each matrix argument may have shape ``(r, c)`` (constant),
        ``(m, r, c)`` (mode dependent) or ``(N, m, r, c)``.  ``A`` must be
        given with its full ``(N, m, n_x, n_x)`` shape unless ``N`` can be
        read from another argument.
        """
        m = chain.m
        arrays = {"A": A, "B": B, "C": C}
        N = None
        for a in arrays.values():
            a = np.asarray(a, dtype=float)
            if a.ndim == 4:
                N = a.shape[0]
        if N is None:
            raise ValueError("at least one of A, B, C needs a leading horizon axis")
        A4 = _broadcast(A, N, m)
        n_x = A4.shape[2]
        B4 = _broadcast(B, N, m)
        C4 = _broadcast(C, N, m)
        n_u, n_y = B4.shape[3], C4.shape[2]
        Bd4 = _broadcast(np.zeros((n_x, 0)) if Bd is None else Bd, N, m)
        n_d = Bd4.shape[3]
        Bs4 = _broadcast(np.zeros((n_x, 0)) if Bs is None else Bs, N, m)
        n_e = Bs4.shape[3]
        Dd4 = _broadcast(np.zeros((n_y, n_d)) if Dd is None else Dd, N, m)
        Ds4 = _broadcast(np.zeros((n_y, n_e)) if Ds is None else Ds, N, m)
        S0 = np.zeros((n_x, n_x)) if Sigma0 is None else Sigma0
        return cls(A4, B4, Bd4, Bs4, C4, Dd4, Ds4, S0, chain, x0_known)


def _broadcast(a, N, m):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        return np.broadcast_to(a, (N, m) + a.shape).copy()
    if a.ndim == 3:
        return np.broadcast_to(a, (N,) + a.shape).copy()
    return a.copy()


@dataclass(frozen=True)
class Ellitope:
    """Intersection of centred ellipsoids ``{zeta : <Q_i zeta, zeta> <= 1}``."""

    Qs: tuple

    def __post_init__(self):
        Qs = tuple(np.atleast_2d(np.asarray(Q, dtype=float)) for Q in self.Qs)
        if not Qs:
            raise ValueError("ellitope needs at least one matrix")
        n = Qs[0].shape[0]
        for Q in Qs:
            if Q.shape != (n, n):
                raise DimensionError("all Q_i must share one square shape")
            if not np.allclose(Q, Q.T, atol=1e-12):
                raise ValueError("Q_i must be symmetric")
            if np.linalg.eigvalsh(Q).min() < -1e-10:
                raise ValueError("Q_i must be positive semidefinite")
        if np.linalg.eigvalsh(sum(Qs)).min() <= 1e-10:
            raise ValueError("sum of Q_i must be positive definite")
        object.__setattr__(self, "Qs", Qs)

    @property
    def s(self) -> int:
        return len(self.Qs)

    @property
    def dim(self) -> int:
        return self.Qs[0].shape[0]

    def levels(self, zeta) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=float)
        return np.array([zeta @ Q @ zeta for Q in self.Qs])

    def contains(self, zeta, tol: float = 1e-10) -> bool:
        return bool(np.all(self.levels(zeta) <= 1.0 + tol))


@dataclass(frozen=True)
class PobPolicy:
    """Affine policy in purified outputs with switching memory ``T``.

    ``K[t]`` has shape ``(m**L_t, n_u, 1 + (t+1)*n_y)`` with
    ``L_t = min(T+1, t+1)``; row block ``K[t][hist]`` is
    ``[h_t, H_0^t, ..., H_t^t]`` for that history.  The flat vector ``chi``
    concatenates ``K[t][hist]`` in row-major order over ``t``, then
    histories in lexicographic order.
    """

    N: int
    T: int
    m: int
    n_u: int
    n_y: int
    K: tuple = field(repr=False)

    def __post_init__(self):
        if self.T < 0 or self.T >= self.N:
            raise ValueError(f"memory T={self.T} must satisfy 0 <= T <= N-1")
        K = tuple(np.asarray(k, dtype=float) for k in self.K)
        if len(K) != self.N:
            raise DimensionError("need one coefficient table per time step")
        for t, k in enumerate(K):
            shape = self.table_shape(t)
            if k.shape != shape:
                raise DimensionError(f"K[{t}]: expected {shape}, got {k.shape}")
        object.__setattr__(self, "K", K)

    def table_shape(self, t: int) -> tuple:
        L = history_length(t, self.T)
        return (self.m ** L, self.n_u, 1 + (t + 1) * self.n_y)

    @property
    def dim(self) -> int:
        return dim_of_policy(self.N, self.T, self.m, self.n_u, self.n_y)

    @property
    def chi(self) -> np.ndarray:
        return np.concatenate([k.ravel() for k in self.K]) if self.K else np.zeros(0)

    @classmethod
    def zeros(cls, N, T, m, n_u, n_y) -> "PobPolicy":
        K = [np.zeros((m ** history_length(t, T), n_u, 1 + (t + 1) * n_y)) for t in range(N)]
        return cls(N, T, m, n_u, n_y, tuple(K))

    @classmethod
    def from_chi(cls, chi, N, T, m, n_u, n_y) -> "PobPolicy":
        chi = np.asarray(chi, dtype=float).ravel()
        expected = dim_of_policy(N, T, m, n_u, n_y)
        if chi.size != expected:
            raise DimensionError(f"chi has length {chi.size}, expected {expected}")
        K, pos = [], 0
        for t in range(N):
            shape = (m ** history_length(t, T), n_u, 1 + (t + 1) * n_y)
            size = int(np.prod(shape))
            K.append(chi[pos: pos + size].reshape(shape))
            pos += size
        return cls(N, T, m, n_u, n_y, tuple(K))

    @classmethod
    def for_model(cls, model: MjlsModel, T: int, chi=None) -> "PobPolicy":
        if chi is None:
            return cls.zeros(model.N, T, model.m, model.n_u, model.n_y)
        return cls.from_chi(chi, model.N, T, model.m, model.n_u, model.n_y)

    def coefficients(self, t: int, hist: Sequence[int]) -> np.ndarray:
        """``[h_t, H_0^t, ..., H_t^t]`` for history ``hist``."""
        return self.K[t][history_index(hist, self.m)]

    def h(self, t: int, hist) -> np.ndarray:
        return self.coefficients(t, hist)[:, 0]

    def H(self, t: int, j: int, hist) -> np.ndarray:
        k = self.coefficients(t, hist)
        return k[:, 1 + j * self.n_y: 1 + (j + 1) * self.n_y]

    def slot_offsets(self) -> list:
        """Start offset of ``K[t]`` inside ``chi`` for each ``t``."""
        out, pos = [], 0
        for t in range(self.N):
            out.append(pos)
            pos += int(np.prod(self.table_shape(t)))
        return out
