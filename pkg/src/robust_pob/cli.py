"""Command-line entry point ``robust-pob``.

Exit codes: 0 success (feasible), 2 infeasible, 3 solver failure,
4 unreadable input or mismatched dimensions, 1 failed verification.
Every failure writes a JSON diagnostic to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_VERIFY, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_INPUT = 0, 1, 2, 3, 4
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "RAYON_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class InputError(Exception):
    """Raised for invalid arguments; carries a machine-readable payload."""

    def __init__(self, payload: dict):
        super().__init__(payload.get("error", "invalid input"))
        self.payload = payload


def _cap_threads():
    raw = os.environ.get("ROBUST_POB_THREADS")
    if raw and raw.isdigit() and int(raw) > 0:
        for var in _THREAD_VARS:
            os.environ[var] = raw


def _diag(payload: dict):
    print(json.dumps(payload, default=str), file=sys.stderr)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _status_code(status: str) -> int:
    from . import conic

    return {conic.FEASIBLE: EXIT_OK, conic.INFEASIBLE: EXIT_INFEASIBLE}.get(status, EXIT_SOLVER)


# ---------------------------------------------------------------------------
# synthesize


def synthesis_report(result, spec_labels) -> dict:
    sol = result.solver
    rep = {
        "status": result.status,
        "feasible": result.feasible,
        "labels": spec_labels,
        "gammas": result.gammas,
        "Psi": result.Psi,
        "solver": {"name": sol.solver, "iterations": sol.iterations, "solve_time": sol.solve_time,
                   "max_violation": sol.max_violation, "diagnostics": sol.diagnostics,
                   "block_min_eigs": sol.block_min_eigs},
        "timings": result.timings,
    }
    if not result.feasible and result.chi is not None:
        rep.update(gamma_minus=result.gamma_minus, eps=result.eps, chi_source=result.chi_source)
    return rep


def _load_inputs(args):
    from .io import load_model, load_specs

    model = load_model(args.model)
    specs, ellitope = load_specs(args.specs)
    if ellitope is None:
        raise InputError({"file": str(args.specs), "error": "specification file has no ellitope"})
    if ellitope.dim != model.n_zeta:
        raise InputError({"file": str(args.specs),
                          "error": f"ellitope dimension {ellitope.dim} != n_zeta {model.n_zeta}"})
    specs.validate(model.n_w)
    return model, specs, ellitope


def _check_memory(T, model):
    if not 0 <= T < model.N:
        raise InputError({"error": f"memory T={T} must satisfy 0 <= T < N={model.N}"})


def cmd_synthesize(args) -> int:
    from .io import policy_to_dict, write_json
    from .synthesis import synthesize

    model, specs, ellitope = _load_inputs(args)
    _check_memory(args.memory, model)
    out = _outdir(args.out)
    res = synthesize(model, ellitope, specs, args.memory, tol=args.tol, psd_tol=args.tol_psd,
                     deterministic=args.deterministic_solver)
    rep = synthesis_report(res, specs.labels())
    if res.feasible:
        write_json(out / "policy.json", policy_to_dict(res.policy))
        rep["policy_file"] = str(out / "policy.json")
    write_json(out / "report.json", rep)
    code = _status_code(res.status)
    if code != EXIT_OK:
        _diag({"status": res.status, "diagnostics": res.solver.diagnostics,
               "gamma_minus": rep.get("gamma_minus")})
    print(f"{res.status}: report written to {out / 'report.json'}")
    return code


# ---------------------------------------------------------------------------
# simulate


def _path_name(path, names):
    return "".join(names[i] for i in path) if names else "-".join(str(i) for i in path)


def simulate_scenarios(model, policy, ellitope, samples, seed, mode="boundary"):
    """Scenarios ``(seed, 0..samples-1)`` and their rollouts."""
    import numpy as np

    from .equivalence import ObPolicy, rollout_ob
    from .simulate import Trajectory, rollout_batch, sample_scenario

    scs = [sample_scenario(model, ellitope, seed, k, mode) for k in range(samples)]
    if isinstance(policy, ObPolicy):
        trs = [rollout_ob(model, policy, sc) for sc in scs]
        return scs, trs
    tr = rollout_batch(model, policy, np.array([s.theta for s in scs]),
                       np.array([s.zeta for s in scs]), np.array([s.epsilon for s in scs]))
    trs = [Trajectory(tr.theta[k], tr.x[k], tr.u[k], tr.y[k], tr.v[k], tr.x_hat[k])
           for k in range(samples)]
    return scs, trs


def spec_report(model, policy, specs, scenarios, trajectories, tol=1e-6) -> list:
    """Per-specification empirical value and, when paths can be enumerated, exact values.

    ``exact_value`` is the largest exact expectation over the sampled
    ``zeta``; ``mc_value`` averages the sampled quadratic over every
    rollout.  Mean-trajectory and covariance specifications are checked on
    the exact moments only.
    """
    import numpy as np

    from .simulate import closed_form_moments, exact_mean, exact_spec_value

    W = np.array([tr.w for tr in trajectories])
    enumerable = model.enumeration_size() <= 4096 and policy is not None
    zetas = np.unique(np.array([sc.zeta for sc in scenarios]), axis=0) if enumerable else []
    rows = []
    for i, sp in enumerate(specs.avg_quad):
        v = np.einsum("ki,ij,kj->k", W, sp.A, W) + 2 * W @ sp.beta
        row = {"label": sp.label or f"avg_quad[{i}]", "kind": "avg_quad", "bound": sp.gamma,
               "mc_value": float(v.mean()),
               "stderr": float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else None}
        if enumerable:
            row["exact_value"] = max(exact_spec_value(model, policy, sp, z) for z in zetas)
        rows.append(row)
    for i, sp in enumerate(specs.mean_quad):
        row = {"label": sp.label or f"mean_quad[{i}]", "kind": "mean_quad", "bound": sp.gamma_hat}
        if enumerable:
            vals = [sp_val(sp, exact_mean(model, policy, z)) for z in zetas]
            row["exact_value"] = max(vals)
        rows.append(row)
    for i, sp in enumerate(specs.cov_bound):
        row = {"label": sp.label or f"cov_bound[{i}]", "kind": "cov_bound"}
        emp = np.cov((W - W.mean(axis=0)).T) if W.shape[0] > 1 else np.zeros((model.n_w,) * 2)
        row["mc_min_eig"] = float(np.linalg.eigvalsh(sp.Sigma_tilde - sp.Q @ emp @ sp.Q.T).min())
        if model.m == 1 and policy is not None:
            _, S = closed_form_moments(model, policy, scenarios[0].zeta)
            row["exact_min_eig"] = float(np.linalg.eigvalsh(sp.Sigma_tilde - sp.Q @ S @ sp.Q.T).min())
            row["satisfied"] = row["exact_min_eig"] >= -1e-7
        else:
            row["satisfied"] = row["mc_min_eig"] >= -1e-7
        rows.append(row)
    for row in rows:
        if row["kind"] == "cov_bound":
            continue
        if row["bound"] is None:
            row["satisfied"] = None
        elif "exact_value" in row:
            row["satisfied"] = bool(row["exact_value"] <= row["bound"] + tol * (1 + abs(row["bound"])))
        elif "mc_value" in row:
            row["satisfied"] = bool(row["mc_value"] <= row["bound"])
        else:
            row["satisfied"] = None
    return rows


def sp_val(sp, mu) -> float:
    return float(mu @ sp.A @ mu + 2 * sp.beta @ mu)


def path_summary(model, trajectories, names=None) -> list:
    """Boxplot quantiles of every state coordinate per switching path and time."""
    import numpy as np

    from .model import all_paths
    from .plotting import box_stats

    rows = []
    for path in all_paths(model.m, model.N):
        X = np.array([tr.x for tr in trajectories if tuple(tr.theta) == path])
        if X.size == 0:
            continue
        for t in range(model.N + 1):
            for i in range(model.n_x):
                q = box_stats(X[:, t, i])
                rows.append([_path_name(path, names), len(X), t, f"x_{i + 1}", q["min"], q["q1"],
                             q["median"], q["q3"], q["max"]])
    return rows


SUMMARY_HEADER = ["path", "count", "t", "state", "min", "q1", "median", "q3", "max"]


def _group_states(model, trajectories, names):
    import numpy as np

    groups = {}
    for tr in trajectories:
        groups.setdefault(_path_name(tuple(tr.theta), names), []).append(tr.x)
    return {k: np.array(v) for k, v in sorted(groups.items())}


def cmd_simulate(args) -> int:
    from .io import load_model, load_policy, load_specs, write_json, write_rows, write_trajectories
    from .model import DimensionError, PobPolicy
    from .equivalence import ObPolicy, ob_to_pob
    from .plotting import state_boxplots

    model = load_model(args.model)
    policy = load_policy(args.policy)
    if (policy.N, policy.m, policy.n_u, policy.n_y) != (model.N, model.m, model.n_u, model.n_y):
        raise DimensionError("policy dimensions do not match the model")
    specs, ellitope = load_specs(args.specs) if args.specs else (None, None)
    if ellitope is not None and ellitope.dim != model.n_zeta:
        raise DimensionError(f"ellitope dimension {ellitope.dim} != n_zeta {model.n_zeta}")
    if args.samples < 1:
        raise InputError({"error": "--samples must be at least 1"})
    names = args.mode_names.split(",") if args.mode_names else None
    if names is not None and len(names) != model.m:
        raise InputError({"error": f"--mode-names needs {model.m} names"})
    out = _outdir(args.out)
    scs, trs = simulate_scenarios(model, policy, ellitope, args.samples, args.seed, args.sampling)
    write_trajectories(out / "trajectories.csv", model, trs, names)
    write_rows(out / "path_summary.csv", SUMMARY_HEADER, path_summary(model, trs, names))
    figure = out / "states.png"
    state_boxplots(_group_states(model, trs, names), figure)
    rep = {"samples": args.samples, "seed": args.seed, "sampling": args.sampling,
           "files": [str(out / f) for f in ("trajectories.csv", "path_summary.csv", "states.png")]}
    if specs is not None:
        pob = policy
        if isinstance(policy, ObPolicy):
            pob = ob_to_pob(model, policy) if policy.T == model.N - 1 else None
        elif not isinstance(policy, PobPolicy):
            pob = None
        rep["specs"] = spec_report(model, pob, specs, scs, trs)
    write_json(out / "report.json", rep)
    print(f"simulated {args.samples} scenarios into {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    from . import verify

    rep = verify.run_all(args.seed, args.sizes)
    for s in rep["suites"]:
        mark = "PASS" if s["passed"] else "FAIL"
        print(f"{mark} {s['name']}: worst={s['worst']:.3e} tol={s['tolerance']:.0e} "
              f"n={s['instances']} ({s['seconds']:.2f}s)")
    if args.out:
        from .io import write_json

        write_json(_outdir(args.out) / "verify.json", rep)
    if not rep["passed"]:
        _diag({"status": "verification failed",
               "suites": [s["name"] for s in rep["suites"] if not s["passed"]]})
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# portfolio example


def boundary_checks(model, ellitope, specs, policy, count=20, seed=0, tol=1e-6) -> list:
    """Exact expectations at ``count`` boundary points of the ellitope."""
    from .simulate import exact_spec_value, rng_stream, sample_uncertainty

    rows = []
    for k in range(count):
        z = sample_uncertainty(ellitope, rng_stream(seed, 10_000 + k), "boundary")
        vals = [exact_spec_value(model, policy, sp, z) for sp in specs.avg_quad]
        rows.append({"index": k, "values": vals,
                     "slack": [sp.gamma - v for sp, v in zip(specs.avg_quad, vals)],
                     "satisfied": all(v <= sp.gamma + tol for sp, v in zip(specs.avg_quad, vals))})
    return rows


def income_by_path(model, trajectories, U_tar, names):
    """Average ``(U_tar - sum u)^2`` over the rollouts of each switching path."""
    import numpy as np

    from .model import all_paths

    out = {}
    for path in all_paths(model.m, model.N):
        dev = [(U_tar - tr.u.sum()) ** 2 for tr in trajectories if tuple(tr.theta) == path]
        out[_path_name(path, names)] = (float(np.mean(dev)) if dev else float("nan"), len(dev))
    return out


def cmd_portfolio(args) -> int:
    import numpy as np

    from .io import (model_to_dict, policy_to_dict, specs_to_dict, write_json, write_rows,
                     write_trajectories)
    from .plotting import bar_by_path, state_boxplots
    from .portfolio import PortfolioParams, build_portfolio_model
    from .synthesis import synthesize

    t0 = time.perf_counter()
    params = PortfolioParams()
    names = list(params.mode_names)
    out = _outdir(args.out)
    model, ellitope, specs, U_tar = build_portfolio_model(params)
    write_json(out / "model.json", model_to_dict(model))
    write_json(out / "specs.json", specs_to_dict(specs, ellitope))
    res = synthesize(model, ellitope, specs, args.memory, deterministic=args.deterministic_solver)
    rep = {"U_tar": U_tar, "memory": args.memory, "synthesis": synthesis_report(res, specs.labels())}
    code = _status_code(res.status)
    if res.feasible:
        write_json(out / "policy.json", policy_to_dict(res.policy))
        scs, trs = simulate_scenarios(model, res.policy, ellitope, args.samples, args.seed)
        write_trajectories(out / "trajectories.csv", model, trs, names)
        write_rows(out / "path_summary.csv", SUMMARY_HEADER, path_summary(model, trs, names))
        state_boxplots(_group_states(model, trs, names), out / "holdings.png",
                       labels=[f"asset {i + 1}" for i in range(params.n)],
                       title="Holdings per switching path")
        inc = income_by_path(model, trs, U_tar, names)
        write_rows(out / "income_by_path.csv", ["path", "count", "mean_sq_income_deviation"],
                   [[k, c, v] for k, (v, c) in inc.items()])
        bar_by_path(list(inc), [v for v, _ in inc.values()], out / "income_by_path.png",
                    level=params.income_level, ylabel="(U_tar - sum u)^2",
                    title="Income deviation per switching path")
        starts = {n: [v for k, (v, c) in inc.items() if k.startswith(n) and c] for n in names}
        checks = boundary_checks(model, ellitope, specs, res.policy, seed=args.seed)
        rep.update(
            samples=args.samples,
            income_by_path={k: {"mean": v if c else None, "count": c} for k, (v, c) in inc.items()},
            income_by_first_mode={n: float(np.mean(v)) if v else None for n, v in starts.items()},
            boundary_checks=checks,
            boundary_satisfied=all(c["satisfied"] for c in checks),
            specs=spec_report(model, res.policy, specs, scs, trs),
        )
        if not rep["boundary_satisfied"]:
            code = EXIT_INFEASIBLE
    rep["runtime"] = time.perf_counter() - t0
    write_json(out / "report.json", rep)
    print(f"U_tar = {U_tar:.4f}; synthesis {res.status}")
    if res.feasible:
        worst = np.max([c["slack"] for c in rep["boundary_checks"]], axis=0) * -1
        print("worst boundary value minus bound per spec:",
              ", ".join(f"{l}={w:.4g}" for l, w in zip(specs.labels(), worst)))
    return code


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-pob",
                                description="Robust purified-output policies for Markov jump systems")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="certify and synthesise a policy")
    s.add_argument("--model", required=True)
    s.add_argument("--specs", required=True)
    s.add_argument("--memory", type=int, required=True, help="switching memory T")
    s.add_argument("--out", required=True)
    s.add_argument("--tol", type=float, default=1e-8, help="solver convergence tolerance")
    s.add_argument("--tol-psd", type=float, default=1e-7, help="certificate eigenvalue tolerance")
    s.add_argument("--deterministic-solver", action="store_true")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("simulate", help="roll out a policy on sampled scenarios")
    s.add_argument("--model", required=True)
    s.add_argument("--policy", required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--specs", help="specification file; its ellitope drives zeta sampling")
    s.add_argument("--sampling", choices=("boundary", "interior"), default="boundary")
    s.add_argument("--mode-names", help="comma separated names used for path labels")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run the randomised oracle suites")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sizes", choices=("small", "medium"), default="small")
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("portfolio-example", help="build, solve and simulate the portfolio example")
    s.add_argument("--out", required=True)
    s.add_argument("--memory", type=int, default=2)
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--deterministic-solver", action="store_true")
    s.set_defaults(func=cmd_portfolio)
    return p


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    from .io import ParseError
    from .model import DimensionError, EnumerationTooLarge

    try:
        return args.func(args)
    except ParseError as exc:
        _diag({"status": "parse error", **exc.to_dict()})
    except InputError as exc:
        _diag({"status": "invalid input", **exc.payload})
    except (DimensionError, EnumerationTooLarge) as exc:
        _diag({"status": "dimension error", "error": str(exc)})
    except ValueError as exc:
        _diag({"status": "invalid input", "error": str(exc)})
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
