"""Performance specifications on the state-control trajectory ``w``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import DimensionError


def _sym_psd(A, name, tol=1e-8):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square")
    if not np.allclose(A, A.T, atol=1e-10 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValueError(f"{name} must be symmetric")
    A = (A + A.T) / 2
    if A.size and np.linalg.eigvalsh(A).min() < -tol * max(1.0, np.abs(A).max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return A


@dataclass(frozen=True)
class SpecAvgQuad:
    """``E[<A w, w> + 2 <beta, w>] <= gamma`` for every admissible ``zeta``.

    ``gamma=None`` turns the bound into a decision variable.
    """

    A: np.ndarray
    beta: np.ndarray
    gamma: Optional[float]
    label: str = ""

    def __post_init__(self):
        A = _sym_psd(self.A, "A")
        beta = np.asarray(self.beta, dtype=float).ravel()
        if beta.shape != (A.shape[0],):
            raise DimensionError("beta must match A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "beta", beta)
        if self.gamma is not None:
            object.__setattr__(self, "gamma", float(self.gamma))

    def value(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.A @ w + 2 * self.beta @ w)


@dataclass(frozen=True)
class SpecMeanQuad:
    """``<A_hat mu_w, mu_w> + 2 <beta_hat, mu_w> <= gamma_hat`` on the mean trajectory."""

    A_hat: np.ndarray
    beta_hat: np.ndarray
    gamma_hat: Optional[float]
    label: str = ""

    def __post_init__(self):
        A = _sym_psd(self.A_hat, "A_hat")
        beta = np.asarray(self.beta_hat, dtype=float).ravel()
        if beta.shape != (A.shape[0],):
            raise DimensionError("beta_hat must match A_hat")
        object.__setattr__(self, "A_hat", A)
        object.__setattr__(self, "beta_hat", beta)
        if self.gamma_hat is not None:
            object.__setattr__(self, "gamma_hat", float(self.gamma_hat))

    # uniform accessors shared with SpecAvgQuad
    @property
    def A(self):
        return self.A_hat

    @property
    def beta(self):
        return self.beta_hat

    @property
    def gamma(self):
        return self.gamma_hat


@dataclass(frozen=True)
class SpecCovBound:
    """``Q Sigma_w Q^T <= Sigma_tilde`` in the semidefinite order."""

    Q: np.ndarray
    Sigma_tilde: np.ndarray
    label: str = ""

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma_tilde, dtype=float))
        if S.shape != (Q.shape[0], Q.shape[0]):
            raise DimensionError("Sigma_tilde must be n_k x n_k with n_k = rows of Q")
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("Sigma_tilde must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 1e-10:
            raise ValueError("Sigma_tilde must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Sigma_tilde", (S + S.T) / 2)


@dataclass(frozen=True)
class SpecSet:
    avg_quad: tuple = field(default_factory=tuple)
    mean_quad: tuple = field(default_factory=tuple)
    cov_bound: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("avg_quad", "mean_quad", "cov_bound"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def __len__(self):
        return len(self.avg_quad) + len(self.mean_quad) + len(self.cov_bound)

    def validate(self, n_w: int):
        for sp in self.avg_quad + self.mean_quad:
            if sp.A.shape != (n_w, n_w):
                raise DimensionError(f"spec {sp.label!r}: A must be {n_w}x{n_w}")
        for sp in self.cov_bound:
            if sp.Q.shape[1] != n_w:
                raise DimensionError(f"spec {sp.label!r}: Q must have {n_w} columns")

    def labels(self):
        out = []
        for kind, group in (("avg_quad", self.avg_quad), ("mean_quad", self.mean_quad),
                            ("cov_bound", self.cov_bound)):
            for i, sp in enumerate(group):
                out.append(sp.label or f"{kind}[{i}]")
        return out


def tracking_spec(n_w: int, rows, target, level: float, label: str = "") -> SpecAvgQuad:
    """``E || w[rows] - target ||^2 <= level`` written in the averaged-quadratic form."""
    rows = np.asarray(rows, dtype=int)
    target = np.asarray(target, dtype=float)
    A = np.zeros((n_w, n_w))
    A[rows, rows] = 1.0
    beta = np.zeros(n_w)
    beta[rows] = -target
    return SpecAvgQuad(A, beta, level - float(target @ target), label)
