"""A small solver-agnostic description of a semidefinite program.

Variables live in one flat vector ``x``.  Every PSD block is an affine
symmetric matrix function ``C0 + mat(Coef @ x)``; blocks are assembled from
sub-blocks and each off-diagonal sub-block is mirrored, so the block is
symmetric for every ``x`` by construction.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

FEASIBLE, INFEASIBLE, INACCURATE, FAILED = "feasible", "infeasible", "inaccurate", "failed"


class AffineBlock:
    """Builder for one symmetric affine matrix block of size ``d``."""

    def __init__(self, d: int, name: str = ""):
        self.d = d
        self.name = name
        self.C0 = np.zeros((d, d))
        self._rows: list = []
        self._cols: list = []
        self._vals: list = []

    def _put(self, i, j, var, val):
        self._rows.append(np.asarray(i * self.d + j).ravel())
        self._cols.append(np.asarray(var).ravel())
        self._vals.append(np.asarray(val, dtype=float).ravel())

    def const(self, r0: int, c0: int, M):
        """Add a constant sub-block at ``(r0, c0)`` (mirrored when off the diagonal)."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        p, q = M.shape
        self.C0[r0:r0 + p, c0:c0 + q] += M
        if r0 != c0:
            self.C0[c0:c0 + q, r0:r0 + p] += M.T

    def linear(self, r0: int, c0: int, coef, var_idx):
        """Add ``sum_k x[var_idx[k]] * coef[k]`` at ``(r0, c0)``.

        ``coef`` has shape ``(K, p, q)``; zero entries are dropped.
        """
        coef = np.asarray(coef, dtype=float)
        var_idx = np.asarray(var_idx, dtype=int)
        if coef.ndim == 2:
            coef = coef[None]
        K, p, q = coef.shape
        k, a, b = np.nonzero(coef)
        if k.size == 0:
            return
        vals = coef[k, a, b]
        self._put(r0 + a, c0 + b, var_idx[k], vals)
        if r0 != c0:
            self._put(c0 + b, r0 + a, var_idx[k], vals)

    def variable_matrix(self, r0: int, c0: int, index, scale: float = 1.0):
        """Add ``scale * x[index]`` elementwise, ``index`` being an integer matrix."""
        index = np.atleast_2d(np.asarray(index, dtype=int))
        p, q = index.shape
        a, b = np.meshgrid(np.arange(p), np.arange(q), indexing="ij")
        self._put(r0 + a, c0 + b, index, np.full(index.shape, scale))
        if r0 != c0:
            self._put(c0 + b, r0 + a, index, np.full(index.shape, scale))

    def finish(self, n_vars: int):
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        coef = sp.csr_matrix((vals, (rows, cols)), shape=(self.d * self.d, n_vars))
        coef.sum_duplicates()
        return PsdBlock(self.name, (self.C0 + self.C0.T) / 2, coef)


@dataclass(frozen=True)
class PsdBlock:
    name: str
    C0: np.ndarray
    coef: sp.csr_matrix

    @property
    def d(self) -> int:
        return self.C0.shape[0]

    def evaluate(self, x) -> np.ndarray:
        return self.C0 + (self.coef @ x).reshape(self.d, self.d)


@dataclass
class ConicProgram:
    """Variables, affine equalities, nonnegativity, PSD blocks and a linear objective."""

    n_vars: int = 0
    names: dict = field(default_factory=dict)
    nonneg: list = field(default_factory=list)
    eq_rows: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    objective: Optional[np.ndarray] = None

    def add_variables(self, name: str, size: int) -> np.ndarray:
        idx = np.arange(self.n_vars, self.n_vars + size)
        self.n_vars += size
        self.names[name] = idx
        return idx

    def add_symmetric(self, name: str, n: int) -> np.ndarray:
        """Symmetric ``n x n`` matrix variable; returns the index matrix."""
        iu = np.triu_indices(n)
        flat = self.add_variables(name, len(iu[0]))
        index = np.zeros((n, n), dtype=int)
        index[iu] = flat
        index[(iu[1], iu[0])] = flat
        return index

    def add_nonneg(self, idx):
        self.nonneg.extend(int(i) for i in np.asarray(idx).ravel())

    def add_equality(self, coeffs: dict, rhs: float):
        """``sum coeffs[i] * x[i] == rhs``."""
        self.eq_rows.append((dict(coeffs), float(rhs)))

    def block(self, d: int, name: str = "") -> AffineBlock:
        b = AffineBlock(d, name)
        self.blocks.append(b)
        return b

    def set_objective(self, c: dict):
        vec = np.zeros(self.n_vars)
        for i, v in c.items():
            vec[int(i)] += v
        self.objective = vec

    def compiled_blocks(self):
        return [b.finish(self.n_vars) if isinstance(b, AffineBlock) else b for b in self.blocks]


@dataclass
class SolverResult:
    status: str
    x: Optional[np.ndarray]
    max_violation: float
    diagnostics: str
    solver: str = ""
    iterations: Optional[int] = None
    solve_time: float = 0.0
    objective: Optional[float] = None
    block_min_eigs: list = field(default_factory=list)

    def value(self, prog: ConicProgram, name: str):
        return None if self.x is None else self.x[prog.names[name]]


def _thread_cap():
    raw = os.environ.get("ROBUST_POB_THREADS")
    try:
        return max(1, int(raw)) if raw else None
    except ValueError:
        return None


def block_min_eigs(blocks, x):
    out = []
    for b in blocks:
        E = b.evaluate(x)
        out.append(float(np.linalg.eigvalsh((E + E.T) / 2).min()))
    return out


def independent_columns(prog: ConicProgram, blocks, tol: float = 1e-12) -> np.ndarray:
    """Indices of a maximal set of variables with linearly independent effect.

    A variable whose column in the stacked constraint and objective data is
    a combination of other columns can be fixed at zero without changing
    the set of attainable constraint values.  Dropping such columns removes
    the lineality space that otherwise stalls interior-point solvers.
    """
    from scipy.linalg import lapack

    n = prog.n_vars
    parts = [b.coef for b in blocks]
    if prog.eq_rows:
        rows, cols, vals = [], [], []
        for r, (coeffs, _) in enumerate(prog.eq_rows):
            for i, v in coeffs.items():
                rows.append(r)
                cols.append(int(i))
                vals.append(v)
        parts.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(prog.eq_rows), n)))
    if prog.objective is not None:
        parts.append(sp.csr_matrix(prog.objective[None, :]))
    if prog.nonneg:
        nn = sorted(set(prog.nonneg))
        parts.append(sp.csr_matrix((np.ones(len(nn)), (np.arange(len(nn)), nn)), shape=(len(nn), n)))
    C = sp.vstack(parts).tocsc()
    norms = np.sqrt(np.asarray(C.multiply(C).sum(axis=0))).ravel()
    used = np.flatnonzero(norms > 0)
    Cn = C[:, used] @ sp.diags(1.0 / norms[used])
    G = (Cn.T @ Cn).toarray()
    if G.shape[0] == 0:
        return used
    _, piv, rank, _ = lapack.dpstrf(G, lower=1, tol=tol)
    return np.sort(used[piv[:rank] - 1])


def to_cvxpy(prog: ConicProgram, blocks=None):
    """``(problem, x, sel)`` with the full variable vector equal to ``sel @ x.value``."""
    import cvxpy as cp

    blocks = prog.compiled_blocks() if blocks is None else blocks
    n = prog.n_vars
    keep = independent_columns(prog, blocks)
    pos = np.full(n, -1)
    pos[keep] = np.arange(keep.size)
    sel = sp.csr_matrix((np.ones(keep.size), (keep, np.arange(keep.size))), shape=(n, keep.size))
    x = cp.Variable(keep.size)
    cons = []
    nn = [pos[i] for i in sorted(set(prog.nonneg)) if pos[i] >= 0]
    if nn:
        cons.append(x[np.array(nn)] >= 0)
    for coeffs, rhs in prog.eq_rows:
        row = np.zeros(n)
        for i, v in coeffs.items():
            row[int(i)] += v
        cons.append((row @ sel) @ x == rhs)
    for b in blocks:
        E = b.C0 + cp.reshape((b.coef @ sel) @ x, (b.d, b.d), order="C")
        cons.append((E + E.T) / 2 >> 0)
    obj = cp.Minimize((prog.objective @ sel) @ x) if prog.objective is not None else cp.Minimize(0)

    return cp.Problem(obj, cons), x, sel


# Clarabel's Ruiz equilibration occasionally breaks the first KKT solve on
# badly scaled certificate programs; retrying without it (or with a larger
# static regularisation) recovers an accurate interior-point solution.
_CLARABEL_RETRIES = ({}, {"equilibrate_enable": False}, {"static_regularization_constant": 1e-6})


def _attempts(solver, tol, deterministic):
    import cvxpy as cp

    installed = cp.installed_solvers()
    order = [solver] + [s for s in ("CLARABEL", "SCS") if s != solver]
    out = []
    for name in order:
        if name not in installed:
            continue
        if name == "CLARABEL":
            base = dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=500)
            cap = 1 if deterministic else _thread_cap()
            if cap is not None:
                base["max_threads"] = cap
            out.extend((name, {**base, **extra}) for extra in _CLARABEL_RETRIES)
        elif name == "SCS":
            out.append((name, dict(eps_abs=tol, eps_rel=tol, max_iters=100000)))
        else:
            out.append((name, {}))
    return out


def _label(name, opts):
    extra = [k for k in ("equilibrate_enable", "static_regularization_constant") if k in opts]
    return name + (f"[{','.join(extra)}]" if extra else "")


def solve(prog: ConicProgram, tol: float = 1e-8, psd_tol: float = 1e-7,
          solver: str = "CLARABEL", deterministic: bool = False, verbose: bool = False) -> SolverResult:
    """Solve with cvxpy, trying the next installed backend when one fails."""
    import cvxpy as cp

    blocks = prog.compiled_blocks()
    problem, x, sel = to_cvxpy(prog, blocks)

    attempts = _attempts(solver, tol, deterministic)
    diag = []
    for name, opts in attempts:
        t0 = time.perf_counter()
        try:
            problem.solve(solver=name, verbose=verbose, **opts)
        except Exception as exc:  # solver crashed or rejected the problem
            diag.append(f"{_label(name, opts)}: {type(exc).__name__}")
            continue
        elapsed = time.perf_counter() - t0
        st = problem.status
        iters = getattr(problem.solver_stats, "num_iters", None)
        diag.append(f"{_label(name, opts)}: {st}")
        if st in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return SolverResult(INFEASIBLE, None, float("nan"), "; ".join(diag), name, iters, elapsed)
        if st in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and x.value is not None:
            xv = sel @ np.asarray(x.value, dtype=float)
            eigs = block_min_eigs(blocks, xv)
            viol = min(eigs) if eigs else 0.0
            nn = xv[sorted(set(prog.nonneg))].min() if prog.nonneg else 0.0
            viol = min(viol, nn)
            status = FEASIBLE if (st == cp.OPTIMAL and viol >= -psd_tol) else INACCURATE
            return SolverResult(status, xv, viol, "; ".join(diag), name, iters, elapsed,
                                float(problem.value) if problem.value is not None else None, eigs)
    return SolverResult(FAILED, None, float("nan"), "; ".join(diag) or "no solver available")
