"""JSON model, policy and specification files; CSV trajectory dumps.

Matrices are nested row arrays.  Modes are 0-based everywhere, both in
memory and in files.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import (DimensionError, Ellitope, MarkovChain, MjlsModel, PobPolicy, history_index,
                    history_length, index_history)
from .specs import SpecAvgQuad, SpecCovBound, SpecMeanQuad, SpecSet


class ParseError(ValueError):
    """Malformed input file; ``line`` and ``column`` locate JSON syntax errors."""

    def __init__(self, path, message, line=None, column=None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = f"{self.path}:{line}:{column}" if line is not None else self.path
        super().__init__(f"{where}: {message}")

    def to_dict(self):
        return {"file": self.path, "line": self.line, "column": self.column, "error": str(self)}


def load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(path, f"cannot read file: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, exc.lineno, exc.colno) from exc


def _mat(value, rows, cols, name):
    a = np.asarray(value, dtype=float)
    if a.size == 0:
        a = a.reshape(rows, cols)
    if a.shape != (rows, cols):
        raise DimensionError(f"{name}: expected {rows}x{cols}, got {'x'.join(map(str, a.shape))}")
    return a


def _field(doc, key, path):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise ParseError(path, f"missing field {key!r}") from None


# ---------------------------------------------------------------------------
# model


def model_to_dict(model: MjlsModel) -> dict:
    mats = []
    for t in range(model.N):
        mats.append([{name: getattr(model, name)[t, i].tolist()
                      for name in ("A", "B", "Bd", "Bs", "C", "Dd", "Ds")}
                     for i in range(model.m)])
    doc = {"N": model.N, "n_x": model.n_x, "n_u": model.n_u, "n_d": model.n_d, "n_e": model.n_e,
           "n_y": model.n_y, "m": model.m, "pi": model.chain.pi.tolist(),
           "P": model.chain.P.tolist(), "Sigma0": model.Sigma0.tolist(), "matrices": mats}
    if model.x0_known is not None:
        doc["x0_known"] = model.x0_known.tolist()
    return doc


def model_from_dict(doc: dict, path="<model>") -> MjlsModel:
    try:
        N, m = int(_field(doc, "N", path)), int(_field(doc, "m", path))
        dims = {k: int(_field(doc, k, path)) for k in ("n_x", "n_u", "n_d", "n_e", "n_y")}
        n_x, n_u, n_d, n_e, n_y = (dims[k] for k in ("n_x", "n_u", "n_d", "n_e", "n_y"))
        shapes = {"A": (n_x, n_x), "B": (n_x, n_u), "Bd": (n_x, n_d), "Bs": (n_x, n_e),
                  "C": (n_y, n_x), "Dd": (n_y, n_d), "Ds": (n_y, n_e)}
        mats = _field(doc, "matrices", path)
        if len(mats) != N:
            raise DimensionError(f"matrices: expected {N} time steps, got {len(mats)}")
        arrays = {k: np.zeros((N, m) + s) for k, s in shapes.items()}
        for t, per_t in enumerate(mats):
            if len(per_t) != m:
                raise DimensionError(f"matrices[{t}]: expected {m} modes, got {len(per_t)}")
            for i, entry in enumerate(per_t):
                for k, (r, c) in shapes.items():
                    if k in entry:
                        arrays[k][t, i] = _mat(entry[k], r, c, f"matrices[{t}][{i}].{k}")
                    elif k in ("A", "B", "C"):
                        raise ParseError(path, f"matrices[{t}][{i}] lacks {k}")
        chain = MarkovChain(np.asarray(_field(doc, "pi", path), dtype=float),
                            _mat(_field(doc, "P", path), m, m, "P"))
        Sigma0 = _mat(doc.get("Sigma0", np.zeros((n_x, n_x)).tolist()), n_x, n_x, "Sigma0")
        x0 = doc.get("x0_known")
        return MjlsModel(chain=chain, Sigma0=Sigma0, x0_known=x0, **arrays)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ParseError, DimensionError)):
            raise
        raise ParseError(path, str(exc)) from exc


def load_model(path) -> MjlsModel:
    return model_from_dict(load_json(path), path)


# ---------------------------------------------------------------------------
# policy


def policy_to_dict(policy: PobPolicy, basis: str = "purified") -> dict:
    entries = []
    n_y = policy.n_y
    for t in range(policy.N):
        L = history_length(t, policy.T)
        for idx in range(policy.K[t].shape[0]):
            hist = list(index_history(idx, policy.m, L))
            k = policy.K[t][idx]
            entries.append({"t": t, "j": None, "hist": hist, "values": k[:, :1].tolist()})
            for j in range(t + 1):
                entries.append({"t": t, "j": j, "hist": hist,
                                "values": k[:, 1 + j * n_y: 1 + (j + 1) * n_y].tolist()})
    return {"N": policy.N, "T": policy.T, "m": policy.m, "n_u": policy.n_u, "n_y": n_y,
            "basis": basis, "entries": entries}


def policy_from_dict(doc: dict, path="<policy>"):
    from .equivalence import ObPolicy

    try:
        N, T, m = int(_field(doc, "N", path)), int(_field(doc, "T", path)), int(_field(doc, "m", path))
        n_u, n_y = int(_field(doc, "n_u", path)), int(_field(doc, "n_y", path))
        pol = PobPolicy.zeros(N, T, m, n_u, n_y)
        K = [k.copy() for k in pol.K]
        for e in _field(doc, "entries", path):
            t, j, hist = int(e["t"]), e.get("j"), tuple(int(i) for i in e["hist"])
            if not 0 <= t < N or len(hist) != history_length(t, T):
                raise DimensionError(f"entry t={t} hist={list(hist)} does not fit N={N}, T={T}")
            if any(not 0 <= i < m for i in hist):
                raise DimensionError(f"entry t={t}: mode out of range in {list(hist)}")
            row = K[t][history_index(hist, m)]
            if j is None:
                row[:, 0] = _mat(e["values"], n_u, 1, f"h[{t}]").ravel()
            else:
                j = int(j)
                if not 0 <= j <= t:
                    raise DimensionError(f"entry t={t}: j={j} outside [0, t]")
                row[:, 1 + j * n_y: 1 + (j + 1) * n_y] = _mat(e["values"], n_u, n_y, f"H[{t}][{j}]")
        cls = ObPolicy if doc.get("basis") == "outputs" else PobPolicy
        return cls(N, T, m, n_u, n_y, tuple(K))
    except (KeyError, TypeError) as exc:
        raise ParseError(path, f"bad policy entry: {exc}") from exc


def load_policy(path):
    return policy_from_dict(load_json(path), path)


# ---------------------------------------------------------------------------
# specifications


def specs_to_dict(specs: SpecSet, ellitope: Ellitope | None) -> dict:
    def opt(v):
        return None if v is None else float(v)

    doc = {
        "avg_quad": [{"A": s.A.tolist(), "beta": s.beta.tolist(), "gamma": opt(s.gamma),
                      "label": s.label} for s in specs.avg_quad],
        "mean_quad": [{"A_hat": s.A_hat.tolist(), "beta_hat": s.beta_hat.tolist(),
                       "gamma_hat": opt(s.gamma_hat), "label": s.label} for s in specs.mean_quad],
        "cov_bound": [{"Q": s.Q.tolist(), "Sigma_tilde": s.Sigma_tilde.tolist(), "label": s.label}
                      for s in specs.cov_bound],
    }
    if ellitope is not None:
        doc["ellitope"] = {"Qs": [Q.tolist() for Q in ellitope.Qs]}
    return doc


def specs_from_dict(doc: dict, path="<specs>"):
    try:
        avg = [SpecAvgQuad(np.asarray(s["A"], float), np.asarray(s["beta"], float), s.get("gamma"),
                           s.get("label", "")) for s in doc.get("avg_quad", [])]
        mean = [SpecMeanQuad(np.asarray(s["A_hat"], float), np.asarray(s["beta_hat"], float),
                             s.get("gamma_hat"), s.get("label", "")) for s in doc.get("mean_quad", [])]
        cov = [SpecCovBound(np.asarray(s["Q"], float), np.asarray(s["Sigma_tilde"], float),
                            s.get("label", "")) for s in doc.get("cov_bound", [])]
        ell = doc.get("ellitope")
        ellitope = Ellitope(tuple(np.asarray(Q, float) for Q in ell["Qs"])) if ell else None
    except KeyError as exc:
        raise ParseError(path, f"missing field {exc}") from exc
    except TypeError as exc:
        raise ParseError(path, str(exc)) from exc
    return SpecSet(avg, mean, cov), ellitope


def load_specs(path):
    return specs_from_dict(load_json(path), path)


# ---------------------------------------------------------------------------
# outputs


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def trajectory_header(model: MjlsModel):
    cols = ["scenario", "path", "t"]
    cols += [f"x_{i + 1}" for i in range(model.n_x)]
    cols += [f"u_{i + 1}" for i in range(model.n_u)]
    cols += [f"y_{i + 1}" for i in range(model.n_y)]
    cols += [f"v_{i + 1}" for i in range(model.n_y)]
    return cols


def write_trajectories(path, model: MjlsModel, trajectories, mode_names=None):
    """One row per scenario and time ``t = 0..N``; controls and outputs are blank at ``t = N``."""
    def name(path_):
        if mode_names:
            return "".join(mode_names[i] for i in path_)
        return "-".join(str(i) for i in path_)

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(trajectory_header(model))
        for k, tr in enumerate(trajectories):
            for t in range(model.N + 1):
                row = [k, name(tr.theta), t] + [repr(float(a)) for a in tr.x[t]]
                if t < model.N:
                    row += [repr(float(a)) for a in np.concatenate([tr.u[t], tr.y[t], tr.v[t]])]
                else:
                    row += [""] * (model.n_u + 2 * model.n_y)
                wr.writerow(row)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
