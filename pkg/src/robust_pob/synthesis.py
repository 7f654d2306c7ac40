"""Semidefinite synthesis of POB affine policies.

Each robust quadratic specification ``gamma >= zeta_e^T V(chi) zeta_e +
2 <beta, M(chi) zeta_e>`` over the ellitope is certified by multipliers
``lambda >= 0`` and a matrix ``X >= V(chi)``:

    [[gamma - psi - sum(lambda),  -phi^T             ],
     [-phi,                       sum(lambda_i Q_i) - delta]]  >= 0

with ``delta = X[1:, 1:]``, ``phi^T = X[0, 1:] + beta^T M(chi)[:, 1:]`` and
``psi = X[0, 0] + 2 beta^T M(chi)[:, 0]``.  ``X >= V(chi)`` is passed as a
Schur complement, which is linear in ``chi``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import conic
from .coefficients import AffineMapM, QuadraticFormV, assemble_M, assemble_V, psd_sqrt
from .model import DimensionError, Ellitope, MjlsModel, PobPolicy
from .specs import SpecAvgQuad, SpecCovBound, SpecMeanQuad, SpecSet


def tightness_factor(s: int) -> float:
    """Gap factor of the approximate S-lemma for ``s`` quadratic constraints."""
    if s < 1:
        raise ValueError("need at least one ellitope constraint")
    if s == 1:
        return 1.0
    ell = math.log(s + 1)
    return 2 * ell + 2 * math.sqrt(ell) + 1


def critical_level(gamma: float, Psi_chi: float, s: int, eps: float) -> float:
    """Level certified to be violated when the certificate system is infeasible."""
    if s == 1:
        return float(gamma)
    return (gamma - Psi_chi) / tightness_factor(s) + Psi_chi - eps


def default_eps(gamma: float) -> float:
    return 1e-9 * (1 + abs(gamma))


def _factor_rows(A, tol=1e-12):
    """``W`` with ``W^T W = A`` and only nonzero rows kept."""
    A = np.asarray(A, dtype=float)
    lam, U = np.linalg.eigh((A + A.T) / 2)
    keep = lam > tol * max(1.0, float(np.abs(lam).max(initial=0.0)))
    return (U[:, keep] * np.sqrt(lam[keep])).T


# ---------------------------------------------------------------------------
# blocks


@dataclass
class CertificateVars:
    lam: np.ndarray
    X: np.ndarray
    gamma: Optional[int]  # variable index when the bound is free


def build_certificate_block(prog: conic.ConicProgram, M: AffineMapM, ellitope: Ellitope, beta,
                         gamma, chi_idx, tag: str = "spec", gamma_shift=None,
                         shift_scale: float = 1.0) -> CertificateVars:
    """Emit ``lambda >= 0`` and the S-lemma block ``F >= 0``.

    ``gamma`` is a number or ``None`` (a new free variable).  ``gamma_shift``
    optionally names a variable added to the bound, multiplied by
    ``shift_scale`` (used by the margin program).  The caller adds ``X >= V(chi)``.
    """
    n_c = M.M0.shape[1]
    n_z = n_c - 1
    if ellitope.dim != n_z:
        raise DimensionError(f"ellitope lives in R^{ellitope.dim}, uncertainty has {n_z} entries")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (M.M0.shape[0],):
        raise DimensionError("beta must have length n_w")
    s = ellitope.s
    lam = prog.add_variables(f"{tag}.lambda", s)
    prog.add_nonneg(lam)
    X = prog.add_symmetric(f"{tag}.X", n_c)
    g_idx = None
    blk = prog.block(n_c, f"{tag}.S-lemma")
    if gamma is None:
        g_idx = int(prog.add_variables(f"{tag}.gamma", 1)[0])
        blk.variable_matrix(0, 0, [[g_idx]])
    else:
        blk.const(0, 0, [[float(gamma)]])
    if gamma_shift is not None:
        blk.variable_matrix(0, 0, [[gamma_shift]], shift_scale)
    # (0,0): - X00 - 2 beta^T M[:,0] - sum(lambda)
    bM0 = beta @ M.M0            # (n_c,)
    bMk = np.tensordot(M.Mk, beta, axes=(1, 0))  # (K, n_c)
    blk.variable_matrix(0, 0, X[:1, :1], -1.0)
    blk.const(0, 0, [[-2 * bM0[0]]])
    blk.linear(0, 0, -2 * bMk[:, :1, None], chi_idx)
    blk.linear(0, 0, -np.ones((s, 1, 1)), lam)
    # (0,1): -(X[0,1:] + beta^T M[:,1:])
    if n_z:
        blk.variable_matrix(0, 1, X[:1, 1:], -1.0)
        blk.const(0, 1, -bM0[None, 1:])
        blk.linear(0, 1, -bMk[:, None, 1:], chi_idx)
        # (1,1): sum lambda_i Q_i - X[1:,1:]
        blk.linear(1, 1, np.stack(ellitope.Qs), lam)
        blk.variable_matrix(1, 1, X[1:, 1:], -1.0)
    return CertificateVars(lam, X, g_idx)


def add_v_schur_block(prog, X, V: QuadraticFormV, chi_idx, tag="spec"):
    """``[[X - V0 - sum chi_k L_k, Z(chi)^T], [Z(chi), I]] >= 0``."""
    n_c = V.n_c
    Rk = V.R_by_slot()  # (K, r, n_c)
    r = Rk.shape[1]
    blk = prog.block(n_c + r, f"{tag}.X>=V")
    blk.variable_matrix(0, 0, X)
    blk.const(0, 0, -V.V0)
    blk.linear(0, 0, -V.L, chi_idx)
    if r:
        blk.linear(n_c, 0, Rk, chi_idx)
        blk.const(n_c, n_c, np.eye(r))
    return blk


def add_mean_schur_block(prog, X, M: AffineMapM, A_hat, chi_idx, tag="spec"):
    """``[[X, (W M(chi))^T], [W M(chi), I]] >= 0`` with ``W^T W = A_hat``."""
    W = _factor_rows(A_hat)
    n_c = M.M0.shape[1]
    r = W.shape[0]
    blk = prog.block(n_c + r, f"{tag}.X>=MtAM")
    blk.variable_matrix(0, 0, X)
    if r:
        blk.const(n_c, 0, W @ M.M0)
        blk.linear(n_c, 0, np.einsum("ij,kjc->kic", W, M.Mk), chi_idx)
        blk.const(n_c, n_c, np.eye(r))
    return blk


def build_mean_quad_block(prog, M: AffineMapM, spec: SpecMeanQuad, ellitope: Ellitope, chi_idx,
                          tag="mean", gamma_shift=None, shift_scale=1.0) -> CertificateVars:
    cv = build_certificate_block(prog, M, ellitope, spec.beta_hat, spec.gamma_hat, chi_idx, tag,
                              gamma_shift, shift_scale)
    add_mean_schur_block(prog, cv.X, M, spec.A_hat, chi_idx, tag)
    return cv


def build_cov_block(prog, model: MjlsModel, Ms: AffineMapM, spec: SpecCovBound, chi_idx,
                    tag="cov", slack=None, slack_scale=1.0):
    """``[[Sigma_tilde, Q B_s(chi) L], [., I]] >= 0`` with ``L L^T = Sigma_eps``."""
    if model.m != 1:
        raise ValueError("covariance bounds need a single-mode model (m = 1)")
    Lroot = psd_sqrt(model.Sigma_eps)
    n_k = spec.Q.shape[0]
    n_e = Lroot.shape[1]
    blk = prog.block(n_k + n_e, f"{tag}.covariance")
    blk.const(0, 0, spec.Sigma_tilde)
    if slack is not None:
        blk.linear(0, 0, slack_scale * np.eye(n_k)[None], [slack])
    blk.const(0, n_k, spec.Q @ Ms.M0 @ Lroot)
    blk.linear(0, n_k, np.einsum("ij,kjc,cl->kil", spec.Q, Ms.Mk, Lroot), chi_idx)
    blk.const(n_k, n_k, np.eye(n_e))
    return blk


# ---------------------------------------------------------------------------
# driver


@dataclass
class SynthesisResult:
    status: str
    policy: Optional[PobPolicy]
    chi: Optional[np.ndarray]
    solver: conic.SolverResult
    labels: list
    gammas: list
    gamma_minus: list = field(default_factory=list)
    Psi: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    chi_source: str = ""
    timings: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status == conic.FEASIBLE


def _coefficient_bundle(model, specs, T):
    M = assemble_M(model, T)
    Vs = [assemble_V(model, T, sp.A) for sp in specs.avg_quad]
    Ms = assemble_M(model, T, channel="stochastic") if specs.cov_bound else None
    return M, Vs, Ms


def spec_Psi(M: AffineMapM, V, beta, chi) -> float:
    """Constant term ``Psi[chi] = V(chi)_00 + 2 beta^T M(chi)[:, 0]``."""
    Mc = M(chi)
    Vc = V(chi) if callable(V) else V
    return float(Vc[0, 0] + 2 * np.asarray(beta) @ Mc[:, 0])


# ---------------------------------------------------------------------------
# exact reformulations that improve conditioning


def center_spec(A, beta):
    """Split ``<Aw,w> + 2<beta,w>`` as ``<A(w-c), w-c> + 2<beta_r, w> - <Ac, c>``.

    ``c`` is the least-squares solution of ``A c = -beta`` so ``beta_r`` is
    orthogonal to the range of ``A``.  Returns ``(c, beta_r, <Ac, c>)``.
    """
    A = np.asarray(A, dtype=float)
    beta = np.asarray(beta, dtype=float)
    c = -np.linalg.lstsq(A, beta, rcond=None)[0]
    beta_r = beta + A @ c
    beta_r[np.abs(beta_r) <= 1e-12 * max(1.0, np.abs(beta).max(initial=0.0))] = 0.0
    return c, beta_r, float(c @ A @ c)


def shift_M(M: AffineMapM, c) -> AffineMapM:
    """Map of ``w - c``: only the constant column moves."""
    M0 = M.M0.copy()
    M0[:, 0] -= c
    return AffineMapM(M0, M.Mk)


def shift_V(V: QuadraticFormV, M: AffineMapM, A, c) -> QuadraticFormV:
    """Quadratic form of ``w - c`` given that of ``w``; the pure quadratic part is unchanged."""
    Ac = np.asarray(A) @ c
    row0 = Ac @ M.M0                                  # (n_c,)
    V0 = V.V0.copy()
    V0[0, :] -= row0
    V0[:, 0] -= row0
    V0[0, 0] += float(Ac @ c)
    rows = np.tensordot(M.Mk, Ac, axes=(1, 0))         # (K, n_c)
    L = V.L.copy()
    L[:, 0, :] -= rows
    L[:, :, 0] -= rows
    return QuadraticFormV(V0, L, V.gram, V.R, V.gram_min_eig)


def whitening(ellitope: Ellitope) -> np.ndarray:
    """``S = (sum Q_i)^{-1/2}``, so that the substituted ellitope has ``sum Q_i' = I``."""
    lam, U = np.linalg.eigh(sum(ellitope.Qs))
    return (U / np.sqrt(lam)) @ U.T


def _col_transform(S):
    n = S.shape[0] + 1
    E = np.eye(n)
    E[1:, 1:] = S
    return E


def whiten_M(M: AffineMapM, S) -> AffineMapM:
    E = _col_transform(S)
    return AffineMapM(M.M0 @ E, M.Mk @ E)


def whiten_V(V: QuadraticFormV, S) -> QuadraticFormV:
    E = _col_transform(S)
    K, n_c = V.dim, V.n_c
    R = (V.R.reshape(-1, K, n_c) @ E).reshape(V.R.shape)
    G4 = V.gram.reshape(K, n_c, K, n_c)
    G4 = np.einsum("kalb,ai,bj->kilj", G4, E, E)
    return QuadraticFormV(E.T @ V.V0 @ E, np.einsum("ai,kab,bj->kij", E, V.L, E),
                          G4.reshape(V.gram.shape), R, V.gram_min_eig)


@dataclass
class _Prepared:
    kind: str
    M: AffineMapM
    V: Optional[QuadraticFormV]
    A: np.ndarray
    beta: np.ndarray
    gamma: Optional[float]
    offset: float = 0.0   # added to the bound by the centering step


def _prepare(specs: SpecSet, M, Vs, ellitope, center: bool, whiten: bool):
    """Per-spec data for the certificate blocks after the exact reformulations."""
    S = whitening(ellitope) if whiten else None
    ell = Ellitope(tuple(S @ Q @ S for Q in ellitope.Qs)) if whiten else ellitope
    Mw = whiten_M(M, S) if whiten else M
    out = []
    items = [("avg", sp, V) for sp, V in zip(specs.avg_quad, Vs)]
    items += [("mean", sp, None) for sp in specs.mean_quad]
    for kind, sp, V in items:
        Vw = whiten_V(V, S) if (whiten and V is not None) else V
        beta, gamma, Mi, off = sp.beta, sp.gamma, Mw, 0.0
        if center:
            c, beta, off = center_spec(sp.A, sp.beta)
            gamma = None if gamma is None else gamma + off
            if Vw is not None:
                Vw = shift_V(Vw, Mw, sp.A, c)
            Mi = shift_M(Mw, c)
        out.append(_Prepared(kind, Mi, Vw, sp.A, beta, gamma, off))
    return out, ell


def _margin_scale(level) -> float:
    """Weight of the common margin in a bound, so the margin is relative to the level."""
    if level is None or not np.isfinite(level) or level <= 0:
        return 1.0
    return float(level)


def _build(model, ellitope, specs, prepared, Ms, K, elastic=False, objective=None):
    prog = conic.ConicProgram()
    chi_idx = prog.add_variables("chi", K)
    shift = None
    if elastic:
        # one free shift on every fixed bound; negative values measure slack
        shift = int(prog.add_variables("margin", 1)[0])
    certs = []
    for i, p in enumerate(prepared):
        tag = f"{p.kind}{i}"
        cv = build_certificate_block(prog, p.M, ellitope, p.beta, p.gamma, chi_idx, tag, shift,
                                  _margin_scale(p.gamma))
        if p.kind == "avg":
            add_v_schur_block(prog, cv.X, p.V, chi_idx, tag)
        else:
            add_mean_schur_block(prog, cv.X, p.M, p.A, chi_idx, tag)
        certs.append(cv)
    for i, sp in enumerate(specs.cov_bound):
        build_cov_block(prog, model, Ms, sp, chi_idx, f"cov{i}", shift,
                        _margin_scale(np.linalg.eigvalsh(sp.Sigma_tilde).min()))
    obj = {}
    if elastic:
        obj[shift] = 1.0
    else:
        free = [cv.gamma for cv in certs if cv.gamma is not None]
        if objective is not None:
            for key, w in objective.items():
                if key == "chi":
                    for j, wj in enumerate(np.asarray(w, dtype=float)):
                        obj[int(chi_idx[j])] = obj.get(int(chi_idx[j]), 0.0) + wj
                else:
                    obj[int(free[key])] = obj.get(int(free[key]), 0.0) + float(w)
        else:
            for g in free:
                obj[g] = 1.0
    if obj:
        prog.set_objective(obj)
    return prog, chi_idx, certs


def _with_margin_zero(prog, x):
    """Copy of ``x`` with the margin variable set to zero."""
    x0 = x.copy()
    x0[prog.names["margin"]] = 0.0
    return x0


def synthesize(model: MjlsModel, ellitope: Ellitope, specs: SpecSet, T: int,
               objective: Optional[dict] = None, tol: float = 1e-8, psd_tol: float = 1e-7,
               solver: str = "CLARABEL", deterministic: bool = False,
               coefficients=None, center: bool = True, whiten: bool = True) -> SynthesisResult:
    """Assemble and solve the certificate program for every specification.

    ``objective`` maps an index into the free bounds (in spec order) to a
    weight, and the key ``"chi"`` to a weight vector on the policy
    parameters; by default the free bounds are summed.  ``center`` and
    ``whiten`` apply exact reformulations (completing the square in each
    specification, substituting ``zeta = (sum Q_i)^{-1/2} zeta'``) that
    leave the feasible set of policies unchanged but keep the program well
    scaled.  On infeasibility an elastic program (every fixed bound relaxed
    by one shared slack) provides the policy at which the critical levels
    are evaluated.
    """
    if len(specs) == 0:
        raise ValueError("at least one specification is required")
    if not 0 <= T < model.N:
        raise ValueError("memory must satisfy 0 <= T <= N-1")
    specs.validate(model.n_w)
    if ellitope.dim != model.n_zeta:
        raise DimensionError(f"ellitope lives in R^{ellitope.dim}, model has n_zeta={model.n_zeta}")
    t0 = time.perf_counter()
    if coefficients is None:
        coefficients = _coefficient_bundle(model, specs, T)
    M, Vs, Ms = coefficients
    prepared, ell = _prepare(specs, M, Vs, ellitope, center, whiten)
    t_coef = time.perf_counter() - t0

    labels = specs.labels()
    quad = list(specs.avg_quad) + list(specs.mean_quad)
    Vlist = list(Vs) + [(lambda c, sp=sp: M(c).T @ sp.A @ M(c)) for sp in specs.mean_quad]
    bundle = {"M": M, "V": Vs, "Ms": Ms}
    timings = {"coefficients": t_coef}
    opts = dict(tol=tol, psd_tol=psd_tol, solver=solver, deterministic=deterministic)
    has_objective = objective is not None or any(sp.gamma is None for sp in quad)

    def accept(res, x, certs, chi_idx):
        chi = x[chi_idx]
        gammas = [float(x[cv.gamma]) - p.offset if cv.gamma is not None else sp.gamma
                  for sp, cv, p in zip(quad, certs, prepared)]
        Psi = [spec_Psi(M, V, sp.beta, chi) for sp, V in zip(quad, Vlist)]
        return SynthesisResult(res.status, PobPolicy.for_model(model, T, chi), chi, res, labels,
                               gammas, Psi=Psi, chi_source="solution", timings=timings,
                               coefficients=bundle)

    if has_objective:
        prog, chi_idx, certs = _build(model, ell, specs, prepared, Ms, M.dim, objective=objective)
        t1 = time.perf_counter()
        res = conic.solve(prog, **opts)
        timings["solve"] = time.perf_counter() - t1
        if res.status in (conic.FEASIBLE, conic.INACCURATE):
            return accept(res, res.x, certs, chi_idx)
        if res.status == conic.FAILED:
            return SynthesisResult(res.status, None, None, res, labels, [sp.gamma for sp in quad],
                                   timings=timings, coefficients=bundle)
        first = res.diagnostics
    else:
        first = ""

    # margin program: minimise a common shift of every fixed bound
    prog_e, chi_e, certs_e = _build(model, ell, specs, prepared, Ms, M.dim, elastic=True)
    t1 = time.perf_counter()
    res_e = conic.solve(prog_e, **opts)
    timings["margin_solve"] = time.perf_counter() - t1
    if res_e.x is None:
        if has_objective:
            res_e.diagnostics = f"{first}; margin: {res_e.diagnostics}"
            res_e.status = conic.INFEASIBLE
        chi, source = np.zeros(M.dim), "zero policy (margin program failed)"
        if res_e.status == conic.FAILED:
            return SynthesisResult(conic.FAILED, None, None, res_e, labels,
                                   [sp.gamma for sp in quad], timings=timings, coefficients=bundle)
    else:
        tau = float(res_e.x[prog_e.names["margin"]][0])
        res_e.diagnostics += f"; margin={tau:.6g}"
        if first:
            res_e.diagnostics = f"{first}; margin program: {res_e.diagnostics}"
        x0 = _with_margin_zero(prog_e, res_e.x)
        eigs = conic.block_min_eigs(prog_e.compiled_blocks(), x0)
        viol = min(eigs + [float(x0[prog_e.nonneg].min()) if prog_e.nonneg else 0.0])
        if not has_objective and viol >= -psd_tol:
            # the certificate is checked directly, so a loose solver flag does not matter
            res0 = conic.SolverResult(conic.FEASIBLE, x0, viol, res_e.diagnostics, res_e.solver,
                                      res_e.iterations, res_e.solve_time, res_e.objective, eigs)
            return accept(res0, x0, certs_e, chi_e)
        chi, source = res_e.x[chi_e], "margin program"
    s = ellitope.s
    gm, Ps, es = [], [], []
    for sp, V in zip(quad, Vlist):
        Psi = spec_Psi(M, V, sp.beta, chi)
        g = sp.gamma if sp.gamma is not None else float("nan")
        e = default_eps(g)
        gm.append(critical_level(g, Psi, s, e))
        Ps.append(Psi)
        es.append(e)
    res_e.status = conic.INFEASIBLE
    return SynthesisResult(conic.INFEASIBLE, None, chi, res_e, labels, [sp.gamma for sp in quad],
                           gamma_minus=gm, Psi=Ps, eps=es, chi_source=source,
                           timings=timings, coefficients=bundle)


# ---------------------------------------------------------------------------
# standalone S-lemma bound


def sdp_upper_bound(A, b, Qs, c=None, tol: float = 1e-9):
    """Semidefinite upper bound on ``max x^T A x + 2 b^T x`` s.t. ``x^T Q_i x <= c_i``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    s = len(Qs)
    c = np.ones(s) if c is None else np.asarray(c, dtype=float)
    prog = conic.ConicProgram()
    omega = int(prog.add_variables("omega", 1)[0])
    lam = prog.add_variables("lambda", s)
    prog.add_nonneg(lam)
    blk = prog.block(n + 1, "S-lemma")
    blk.variable_matrix(0, 0, [[omega]])
    blk.linear(0, 0, -c[:, None, None], lam)
    blk.const(0, 1, -b[None, :])
    blk.linear(1, 1, np.stack([np.asarray(Q, dtype=float) for Q in Qs]), lam)
    blk.const(1, 1, -A)
    prog.set_objective({omega: 1.0})
    res = conic.solve(prog, tol=tol)
    if res.x is None:
        raise RuntimeError(f"S-lemma bound failed: {res.diagnostics}")
    return float(res.x[omega]), res
